"""Scenario files.

A scenario is a YAML mapping with the blocks ``geometry``, ``coefficients``,
``source``, ``run``, ``grids``, ``cell`` and ``outputs``. Every key has a
default except ``geometry.eps``; unknown keys are rejected with their full
path. :meth:`Scenario.to_dict` returns the complete echo (defaults filled in)
and loading that echo gives back an equal scenario.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .coefficients import (
    CoefficientSet, FaceVelocity, LayeredScalar, LayeredTensor, LayeredVelocity, SourceSchedule,
)
from .geometry import AlveolusArray, BoxDomain, decompose_regions
from .micro import BoundarySpec


class ConfigError(ValueError):
    """A scenario file is malformed or fails validation."""


@dataclass
class GeometryConfig:
    eps: float = None
    n: int = 2
    L: float = 1.0
    beta: float = 2.0
    m: list = field(default_factory=lambda: [0.25])
    d: float = 2.0
    resolution: int = 4
    hole_cells: int = 2


@dataclass
class VelocityConfig:
    preset: str = "zero"
    vector: list = None
    amplitude: float = 0.0
    amplitude_inner: float = None
    file: str = None


@dataclass
class CoefficientsConfig:
    A1: list = None
    A2: list = None
    w1: float = 1.0
    w2: float = 1.0
    h: float = 1.5
    tau: float = 1.0
    velocity: VelocityConfig = field(default_factory=VelocityConfig)


@dataclass
class PulseConfig:
    amplitude: float = 1.0
    t_m: float = 0.1


@dataclass
class SourceConfig:
    pulse: PulseConfig = field(default_factory=PulseConfig)
    table: list = None


@dataclass
class TolerancesConfig:
    linear: float = 1e-10
    mass_balance: float = 1e-10
    energy: float = 1e-10
    pd_check: float = 1e-12
    jump: float = 1e-10


@dataclass
class RunConfig:
    dt: float = 0.01
    T: float = 0.5
    sweep: list = field(default_factory=list)
    boundary: str = "layered-box"
    swap_sides: bool = False
    literal_signs: bool = False
    linear_solver: str = "direct"
    initial: float = 0.0
    pulse_refinement: int = 10
    tolerances: TolerancesConfig = field(default_factory=TolerancesConfig)


@dataclass
class GridsConfig:
    ref_band_spacing: float = 0.25
    ref_outer_spacing: float = 1 / 64
    ref_growth: float = 1.2
    candidate_factor: int = 4
    candidate_lateral_cells: int = 4
    strip_Y: float = None


@dataclass
class CellConfig:
    problem: str = "w"
    index: list = field(default_factory=list)
    mode: str = "scaled"
    Y: float = 4.0
    resolution: int = 16
    hole_cells: int = 2
    grading: float = 1.15
    max_spacing: float = 1 / 16
    auto_extend: bool = True


@dataclass
class OutputsConfig:
    snapshot_every: int = 10
    dumps: bool = True


@dataclass
class Scenario:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    coefficients: CoefficientsConfig = field(default_factory=CoefficientsConfig)
    source: SourceConfig = field(default_factory=SourceConfig)
    run: RunConfig = field(default_factory=RunConfig)
    grids: GridsConfig = field(default_factory=GridsConfig)
    cell: CellConfig = field(default_factory=CellConfig)
    outputs: OutputsConfig = field(default_factory=OutputsConfig)
    base_dir: str = field(default=".", compare=False, repr=False)

    # -- serialization -------------------------------------------------
    def to_dict(self):
        d = dataclasses.asdict(self)
        d.pop("base_dir")
        return d

    def dump(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    def config_hash(self):
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def with_eps(self, eps):
        d = self.to_dict()
        d["geometry"]["eps"] = float(eps)
        return from_dict(d, base_dir=self.base_dir)

    # -- domain objects --------------------------------------------------
    @property
    def eps(self):
        return self.geometry.eps

    def box(self):
        return BoxDomain(self.geometry.n, self.geometry.L)

    def array(self, eps=None):
        return AlveolusArray(tuple(self.geometry.m), self.eps if eps is None else eps, self.geometry.beta)

    def tensor(self):
        c = self.coefficients
        n = self.geometry.n
        A1 = np.eye(n) if c.A1 is None else np.asarray(c.A1, float)
        A2 = np.eye(n) if c.A2 is None else np.asarray(c.A2, float)
        return LayeredTensor(A1, A2, c.h, self.run.tolerances.pd_check)

    def velocity(self):
        v = self.coefficients.velocity
        n, h = self.geometry.n, self.coefficients.h
        if v.preset == "zero":
            return None
        if v.preset == "uniform":
            return LayeredVelocity.uniform(v.vector, h=h)
        if v.preset == "shear":
            return LayeredVelocity.shear(v.amplitude, L=self.geometry.L, n=n, h=h, amplitude_inner=v.amplitude_inner)
        if v.preset == "file":
            return FaceVelocity.load(Path(self.base_dir) / v.file)
        raise ConfigError(f"coefficients.velocity.preset: unknown preset {v.preset!r}")

    def coeffs(self):
        c = self.coefficients
        return CoefficientSet(self.tensor(), LayeredScalar(c.w1, c.w2, c.h), self.velocity())

    def schedule(self):
        s, r = self.source, self.run
        if s.table is not None:
            return SourceSchedule([tuple(row) for row in s.table], T=r.T, tau=self.coefficients.tau)
        return SourceSchedule.pulse(s.pulse.amplitude, s.pulse.t_m, T=r.T, tau=self.coefficients.tau)

    def boundary(self):
        return BoundarySpec(self.run.boundary, swap=self.run.swap_sides)

    def strip_Y(self, eps=None):
        eps = self.eps if eps is None else eps
        if self.grids.strip_Y is not None:
            return float(self.grids.strip_Y)
        return float(math.ceil(self.geometry.d * math.log(1.0 / eps)) + 1)


_BLOCKS = {
    Scenario: {"geometry": GeometryConfig, "coefficients": CoefficientsConfig, "source": SourceConfig,
               "run": RunConfig, "grids": GridsConfig, "cell": CellConfig, "outputs": OutputsConfig},
    CoefficientsConfig: {"velocity": VelocityConfig},
    SourceConfig: {"pulse": PulseConfig},
    RunConfig: {"tolerances": TolerancesConfig},
}


def _build(cls, data, path):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping")
    names = {f.name for f in dataclasses.fields(cls) if f.name != "base_dir"}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"unknown keys: {', '.join((path + '.' if path else '') + k for k in unknown)}")
    kwargs = {}
    for k, v in data.items():
        sub = _BLOCKS.get(cls, {}).get(k)
        kwargs[k] = _build(sub, v, f"{path}.{k}" if path else k) if sub else v
    return cls(**kwargs)


def from_dict(data, base_dir="."):
    if not data:
        raise ConfigError("empty scenario; required keys: geometry.eps")
    sc = _build(Scenario, data, "")
    sc.base_dir = str(base_dir)
    validate(sc)
    return sc


def load_scenario(path):
    """Read, validate and return a :class:`Scenario`."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {p}: {exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{p}: invalid YAML: {exc}") from exc
    return from_dict(data, base_dir=p.parent)


def _num(path, v, *, positive=False, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"{path}: expected an integer, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"{path}: must be positive")


def validate(sc):
    """Check every block against the domain invariants; raises :class:`ConfigError`."""
    g, c, r = sc.geometry, sc.coefficients, sc.run
    if g.eps is None:
        raise ConfigError("geometry.eps: required key missing")
    for key in ("eps", "L", "beta", "d"):
        _num(f"geometry.{key}", getattr(g, key), positive=True)
    for key in ("n", "resolution", "hole_cells"):
        _num(f"geometry.{key}", getattr(g, key), positive=True, integer=True)
    if not isinstance(g.m, list) or len(g.m) != g.n - 1:
        raise ConfigError(f"geometry.m: expected a list of {g.n - 1} half-widths")
    for key in ("dt", "T"):
        _num(f"run.{key}", getattr(r, key), positive=True)
    for key in ("w1", "w2", "h", "tau"):
        _num(f"coefficients.{key}", getattr(c, key), positive=True)
    if not isinstance(r.sweep, list):
        raise ConfigError("run.sweep: expected a list of eps values")
    for e in r.sweep:
        _num("run.sweep[]", e, positive=True)
    if r.linear_solver not in ("direct", "iterative"):
        raise ConfigError("run.linear_solver: expected 'direct' or 'iterative'")
    if sc.cell.problem not in ("chi-k", "w", "chi-lm", "w-ij", "z-k"):
        raise ConfigError(f"cell.problem: unknown problem {sc.cell.problem!r}")
    if sc.cell.mode not in ("scaled", "flat"):
        raise ConfigError(f"cell.mode: expected 'scaled' or 'flat'")
    try:
        box = sc.box()
        for e in [g.eps] + list(r.sweep):
            arr = sc.array(e)
            arr.holes_per_axis(box.L)
        sc.tensor()
        LayeredScalar(c.w1, c.w2, c.h)
        sc.schedule()
        sc.boundary()
        if c.velocity.preset not in ("zero", "uniform", "shear", "file"):
            raise ValueError(f"unknown velocity preset {c.velocity.preset!r}")
        for e in r.sweep:
            if e < 1:
                decompose_regions(box, e, g.d)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"validation failed: {exc}") from exc
    return sc
