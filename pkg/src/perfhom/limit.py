"""Homogenized and two-interface transport problems with embedded jumps.

Three variants share one solver:

``limit``
    outer coefficients everywhere, one interface on ``x_n = 0`` with a
    continuous value and a flux jump carrying the leak ``2 Phi |M|``;
``two-interface``
    layered ``eps`` coefficients, interfaces at ``x_n = +-b`` each carrying
    half of the leak ``Phi |dP_eps|``;
``corrector``
    layered coefficients, value and flux jumps ``-+ Phi |dP_eps| / (2 A2_nn)``
    on ``x_n = +-b`` and a zero initial state.

Jumps are those of the value and of ``e_n . (A grad(phi) - v phi)``, upper
minus lower. With the leak-as-source convention a flux jump ``g1`` injects
``-g1`` per unit area.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientSet
from .fv import Interface, Operator
from .geometry import build_box_grid, hole_boundary_measure, obstacle_measure
from .grid import graded_half_faces, symmetric_faces
from .micro import BoundarySpec, SolveResult, cell_diffusion, cell_storage, face_velocities, initial_state
from .transient import LINEAR_RTOL, integrate, time_grid

VARIANTS = ("limit", "two-interface", "corrector")


@dataclass(frozen=True)
class JumpSpec:
    """Prescribed jumps on the horizontal plane ``x_n = coordinate``, per unit ``Phi``.

    ``value`` and ``flux`` are scalars or arrays over the lateral cells.
    """

    coordinate: float
    value: object = 0.0
    flux: object = 0.0


@dataclass(frozen=True, eq=False)
class LimitProblem:
    variant: str
    jumps: tuple
    coeffs: CoefficientSet
    bc: BoundarySpec = field(default_factory=BoundarySpec)
    zero_initial: bool = False

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def layered(self):
        return self.variant != "limit"

    def effective_coeffs(self):
        return self.coeffs.outer() if self.variant == "limit" else self.coeffs


def limit_jumps(array, *, literal_signs=False):
    """Single interface on ``x_n = 0``: ``[phi] = 0``, flux jump ``-+2|M|``."""
    g1 = 2.0 * obstacle_measure(array)
    return (JumpSpec(0.0, 0.0, g1 if literal_signs else -g1),)


def two_interface_jumps(array, regions):
    g1 = -0.5 * hole_boundary_measure(array)
    return (JumpSpec(-regions.b, 0.0, g1), JumpSpec(regions.b, 0.0, g1))


def corrector_jumps(array, regions, A2_nn):
    c = 0.5 * hole_boundary_measure(array) / A2_nn
    return (JumpSpec(-regions.b, c, c), JumpSpec(regions.b, -c, -c))


def box_vertical_faces(box, spacing, *, required=(), fine_spacing=None, fine_extent=0.0, grading=1.0):
    """Symmetric vertical faces with ``0`` and every ``+-required`` coordinate on a face."""
    h0 = spacing if fine_spacing is None else fine_spacing
    req = sorted({abs(float(r)) for r in required if 0 < abs(r) < 0.5 * box.L})
    half = graded_half_faces(0.5 * box.L, h0, required=req, ratio=grading, h_fine=h0,
                             fine_extent=fine_extent, h_max=spacing)
    return symmetric_faces(half)


def limit_grid(box, eps, *, spacing=1 / 64, fine_spacing=None, fine_extent=0.0, grading=1.0, h=1.5,
               regions=None, lateral_spacing=None, required=()):
    """Unperforated grid with the layer faces ``+-eps h`` and the band planes on faces."""
    req = [eps * h] + list(required)
    if regions is not None:
        req.append(regions.b_exact)
    yf = box_vertical_faces(box, spacing, required=req, fine_spacing=fine_spacing, fine_extent=fine_extent,
                            grading=grading)
    lat = box.L / 8 if lateral_spacing is None else lateral_spacing
    return build_box_grid(box, lat, yf)


def _interfaces(grid, jumps):
    out = []
    for j in jumps:
        idx = grid.face_index(grid.ndim - 1, j.coordinate)
        if idx is None:
            raise ValueError(f"interface plane x_n = {j.coordinate:.6g} is not a grid face")
        out.append(Interface(idx, j.value, j.flux))
    return out


def solve_jump_problem(grid, problem, src, phi0=None, dt=0.01, *, eps, solver="direct", rtol=LINEAR_RTOL,
                       pulse_refinement=10, broken=None):
    """Solve one :class:`LimitProblem` on an unperforated grid.

    ``broken`` lists vertical face indices excluded from the reported ``H1``
    seminorm (defaults to the interface faces carrying a value jump).
    """
    if not grid.active.all():
        raise ValueError("jump problems live on unperforated grids")
    co = problem.effective_coeffs()
    bottom, top = problem.bc.sides()
    D = cell_diffusion(grid, co.A, eps)
    storage = cell_storage(grid, co.omega, eps)
    itfs = _interfaces(grid, problem.jumps)

    def operator_at(t):
        return Operator(grid, D, face_velocities(grid, co.v, t, eps), bottom, top, itfs)

    if broken is None:
        broken = [i.index for i in itfs if np.any(np.asarray(i.value_coef) != 0.0)]
    phi_init = np.zeros(grid.n_active) if problem.zero_initial else initial_state(grid, phi0)
    times = time_grid(src, dt, pulse_refinement=pulse_refinement)
    res = integrate(operator_at, storage, src.lam, src, phi_init, times, broken_faces=broken, solver=solver,
                    rtol=rtol, time_dependent=bool(co.v is not None and co.v.time_dependent))
    meta = dict(variant=problem.variant, cells=grid.n_active, steps=len(times) - 1,
                interfaces=[i.index for i in itfs], operator=operator_at(times[-1]))
    return SolveResult(res, eps, problem.variant, meta)


def solve_limit(box, coeffs, src, phi0=None, dt=0.01, T=None, *, array, grid=None, bc=None,
                literal_signs=False, **kw):
    """Homogenized problem with the single interface ``x_n = 0``."""
    _check_T(src, T)
    grid = grid or limit_grid(box, array.eps, h=coeffs.A.h)
    prob = LimitProblem("limit", limit_jumps(array, literal_signs=literal_signs), coeffs, bc or BoundarySpec())
    return solve_jump_problem(grid, prob, src, phi0, dt, eps=array.eps, **kw)


def solve_two_interface(box, regions, coeffs, src, phi0=None, dt=0.01, T=None, *, array, grid=None, bc=None, **kw):
    """Outer solution with the two flux jumps on ``x_n = +-b``."""
    _check_T(src, T)
    grid = grid or limit_grid(box, array.eps, h=coeffs.A.h, regions=regions)
    prob = LimitProblem("two-interface", two_interface_jumps(array, regions), coeffs, bc or BoundarySpec())
    return solve_jump_problem(grid, prob, src, phi0, dt, eps=array.eps, **kw)


def solve_first_corrector(box, regions, coeffs, src, dt=0.01, T=None, *, array, grid=None, bc=None, **kw):
    """Corrector with value and flux jumps on ``x_n = +-b`` and zero initial state."""
    _check_T(src, T)
    grid = grid or limit_grid(box, array.eps, h=coeffs.A.h, regions=regions)
    jumps = corrector_jumps(array, regions, float(coeffs.A.A2[-1, -1]))
    prob = LimitProblem("corrector", jumps, coeffs, bc or BoundarySpec(), zero_initial=True)
    return solve_jump_problem(grid, prob, src, None, dt, eps=array.eps, **kw)


def _check_T(src, T):
    if T is not None and abs(T - src.T) > 1e-12 * max(1.0, src.T):
        raise ValueError("final time differs from the source schedule")


def jump_errors(result, k=None):
    """Largest deviation of the discrete value and flux jumps from their targets.

    The targets at step ``k`` use the effective source value of that step.
    """
    op = result.meta["operator"]
    tr = result.transient
    steps = range(1, len(tr.times)) if k is None else [k]
    ev = ef = 0.0
    for s in steps:
        for rec in op.interface_traces(tr.values[s], tr.scales[s]):
            ev = max(ev, float(np.max(np.abs(rec["value_jump"] - rec["expected_value_jump"]), initial=0.0)))
            ef = max(ef, float(np.max(np.abs(rec["flux_jump"] - rec["expected_flux_jump"]), initial=0.0)))
    return ev, ef
