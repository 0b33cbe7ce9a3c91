"""Transient microscopic solver on the perforated box.

The fluid region is the box minus the alveoli. Every hole face injects the
leak density ``Phi(t)`` into the fluid (leak = source); the vertical
boundaries carry a homogeneous Dirichlet condition or a zero total flux, and
the lateral sides are periodic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientSet
from .fv import BoundarySide, Operator
from .transient import LINEAR_RTOL, integrate, time_grid

logger = logging.getLogger(__name__)

MASS_TOL = 1e-10
ENERGY_TOL = 1e-10
UNIFORM_MARGIN = 1.05


@dataclass(frozen=True)
class BoundarySpec:
    """Vertical boundary conditions of a box problem.

    ``mode`` is one of

    * ``'layered-box'``: value 0 on the bottom ``S-``, zero total flux on the top ``S+``;
    * ``'sealed'``: zero total flux on both sides;
    * ``'general'``: ``bottom`` and ``top`` given explicitly (``'dirichlet'`` or ``'flux'``).

    ``swap=True`` exchanges the two sides.
    """

    mode: str = "layered-box"
    bottom: str = "dirichlet"
    top: str = "flux"
    swap: bool = False

    def __post_init__(self):
        if self.mode not in ("layered-box", "sealed", "general"):
            raise ValueError(f"unknown boundary mode {self.mode!r}")
        for kind in (self.bottom, self.top):
            if kind not in ("dirichlet", "flux"):
                raise ValueError(f"unknown boundary kind {kind!r}")

    def sides(self):
        if self.mode == "layered-box":
            lo, hi = "dirichlet", "flux"
        elif self.mode == "sealed":
            lo, hi = "flux", "flux"
        else:
            lo, hi = self.bottom, self.top
        if self.swap:
            lo, hi = hi, lo
        return BoundarySide(lo), BoundarySide(hi)


def cell_diffusion(grid, tensor, eps):
    """Diffusion matrices at the cell centres, shape ``grid.shape + (n, n)``."""
    A = tensor.at(grid.centers[-1], eps)
    shp = (1,) * (grid.ndim - 1) + A.shape
    return np.broadcast_to(A.reshape(shp), grid.shape + A.shape[-2:])


def face_velocities(grid, velocity, t, eps):
    if velocity is None or getattr(velocity, "is_zero", False):
        return None
    return [velocity.face_normal(grid, a, t, eps) for a in range(grid.ndim)]


def cell_storage(grid, omega, eps):
    w = np.broadcast_to(grid._bcast(omega.at(grid.centers[-1], eps), grid.ndim - 1), grid.shape)
    return (w * grid.volumes).ravel()[grid.active.ravel()]


def initial_state(grid, phi0):
    """Active-cell values from a scalar, a callable ``f(*coords)`` or a grid-shaped array."""
    act = grid.active.ravel()
    if phi0 is None:
        return np.zeros(grid.n_active)
    if callable(phi0):
        vals = np.broadcast_to(np.asarray(phi0(*grid.mesh()), dtype=float), grid.shape)
        return vals.ravel()[act].copy()
    arr = np.asarray(phi0, dtype=float)
    if arr.ndim == 0:
        return np.full(grid.n_active, float(arr))
    if arr.shape == grid.shape:
        return arr.ravel()[act].copy()
    if arr.shape == (grid.n_active,):
        return arr.copy()
    raise ValueError(f"initial state of shape {arr.shape} does not fit grid {grid.shape}")


@dataclass
class SolveResult:
    """A transient solution plus the operator factory that produced it."""

    transient: object
    eps: float
    kind: str
    meta: dict = field(default_factory=dict)

    @property
    def grid(self):
        return self.transient.grid

    @property
    def times(self):
        return self.transient.times

    @property
    def report(self):
        return self.transient.report

    def field(self, k=-1):
        return self.transient.full(k)


def solve_microscopic(pgrid, coeffs, bc, src, phi0=None, dt=0.01, T=None, *, solver="direct",
                      rtol=LINEAR_RTOL, pulse_refinement=10):
    """Implicit finite-volume solve on the perforated grid.

    Parameters
    ----------
    pgrid : PerforatedGrid
    coeffs : CoefficientSet
    bc : BoundarySpec
    src : SourceSchedule
    phi0 : scalar, callable or array, optional
    dt : float
        Base time step; inside the leak support it is capped at ``t_m / pulse_refinement``.
    T : float, optional
        Must equal ``src.T`` when given.
    """
    if T is not None and abs(T - src.T) > 1e-12 * max(1.0, src.T):
        raise ValueError("final time differs from the source schedule")
    grid = pgrid.grid
    eps = pgrid.array.eps
    if not isinstance(coeffs, CoefficientSet):
        raise TypeError("coeffs must be a CoefficientSet")
    bottom, top = bc.sides()
    D = cell_diffusion(grid, coeffs.A, eps)
    storage = cell_storage(grid, coeffs.omega, eps)
    vel = coeffs.v

    def operator_at(t):
        return Operator(grid, D, face_velocities(grid, vel, t, eps), bottom, top)

    op0 = operator_at(0.0)
    source = op0.obstacle_inflow(1.0)
    times = time_grid(src, dt, pulse_refinement=pulse_refinement)
    res = integrate(operator_at, storage, src.lam, src, initial_state(grid, phi0), times, source=source,
                    solver=solver, rtol=rtol, time_dependent=bool(vel is not None and vel.time_dependent))
    meta = dict(cells=grid.n_active, holes=pgrid.hole_count, hole_area=float(source.sum()), steps=len(times) - 1)
    logger.info("micro eps=%.5g: %d cells, %d steps", eps, grid.n_active, len(times) - 1)
    return SolveResult(res, eps, "micro", meta)


@dataclass
class EnergyCheck:
    passed: bool
    margins: dict


def energy_diagnostics(report, *, sweep=None, tol=ENERGY_TOL, margin=UNIFORM_MARGIN):
    """Check the discrete energy identity and, for a sweep, uniform bounds.

    ``sweep`` is a sequence of reports ordered from the coarsest ``eps``
    downward; the maximum norm and the ``L2(0,T;H1)`` norm of every run must
    stay below ``margin`` times the coarsest run's values.
    """
    res = float(np.max(report.energy["residual"])) if report.energy else 0.0
    margins = {"energy_residual": res, "energy_tol": tol}
    ok = res <= tol
    if sweep:
        maxes = [r.max_abs() for r in sweep]
        norms = [r.l2_h1_norm() for r in sweep]
        cmax, cnorm = margin * maxes[0], margin * norms[0]
        margins.update(max_abs=maxes, l2h1=norms, max_bound=cmax, l2h1_bound=cnorm)
        ok = ok and all(v <= cmax for v in maxes) and all(v <= cnorm for v in norms)
    return EnergyCheck(bool(ok), margins)
