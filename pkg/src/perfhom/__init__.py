"""Transport through a thin perforated layer: microscopic solves, limits, cell problems, expansions."""

from .config import ConfigError, Scenario, load_scenario
from .fv import SolverError

__version__ = "0.1.0"

__all__ = ["ConfigError", "Scenario", "SolverError", "load_scenario", "__version__"]
