import math

import numpy as np
import pytest

from perfhom.coefficients import CoefficientSet, LayeredScalar, LayeredTensor, LayeredVelocity, SourceSchedule
from perfhom.geometry import AlveolusArray, BoxDomain, build_perforated_grid
from perfhom.micro import BoundarySpec, energy_diagnostics, initial_state, solve_microscopic
from perfhom.transient import LinearSolver, time_grid


def perforated(eps=1 / 8, **kw):
    return build_perforated_grid(BoxDomain(2, 1.0), AlveolusArray((0.25,), eps, 2.0), 4, **kw)


def coeffs(a1=0.5, a2=1.0, w1=1.0, w2=1.0, v=None):
    return CoefficientSet(LayeredTensor.isotropic(a1, a2), LayeredScalar(w1, w2), v)


def test_time_grid_refines_pulse():
    src = SourceSchedule.pulse(1.0, 0.1, T=0.5)
    t = time_grid(src, 0.05, pulse_refinement=10)
    assert np.isclose(t[-1], 0.5) and np.any(np.isclose(t, 0.1))
    assert np.allclose(np.diff(t[t <= 0.1 + 1e-12]), 0.01)
    with pytest.raises(ValueError):
        time_grid(src, 0.0)


@pytest.mark.parametrize("solver", ["direct", "iterative"])
def test_zero_data_gives_zero(solver):
    src = SourceSchedule.none(T=0.2)
    res = solve_microscopic(perforated(), coeffs(v=LayeredVelocity.uniform((0.2, 0.0))), BoundarySpec(), src,
                            None, 0.05, solver=solver)
    assert np.max(np.abs(res.transient.values)) == 0.0


@pytest.mark.parametrize("w1, w2", [(1.0, 1.0), (0.4, 0.4)])
def test_decay_matches_exponential(w1, w2):
    tau, c, T = 0.7, 2.5, 0.4
    src = SourceSchedule.none(T=T, tau=tau)
    res = solve_microscopic(perforated(), coeffs(w1=w1, w2=w2), BoundarySpec("sealed"), src, c, 0.02)
    exact = c * math.exp(-math.log(2) / tau * T)
    vals = res.transient.values[-1]
    assert np.max(np.abs(vals - exact)) / exact < 1e-8


@pytest.mark.parametrize("bc", ["layered-box", "sealed"])
@pytest.mark.parametrize("vel", [None, LayeredVelocity.shear(0.5, amplitude_inner=0.1)])
def test_mass_balance_and_energy(bc, vel):
    src = SourceSchedule.pulse(1.0, 0.1, T=0.3, tau=0.5)
    res = solve_microscopic(perforated(), coeffs(v=vel), BoundarySpec(bc), src, None, 0.02)
    rep = res.report
    assert rep.balance_residual.max() < 1e-10
    assert energy_diagnostics(rep).passed
    # total injected mass equals Phi * t_m * hole area when no decay is counted
    assert rep.injection.sum() == pytest.approx(0.1 * res.meta["hole_area"], rel=1e-12)


def test_maximum_principle_bounds():
    # with decay and inflow-free data the solution stays in [min(0, min phi0), max(0, max phi0)]
    pg = perforated()
    phi0 = lambda x, y: np.sin(2 * np.pi * x) * np.cos(np.pi * y)
    src = SourceSchedule.none(T=0.3, tau=0.5)
    res = solve_microscopic(pg, coeffs(), BoundarySpec(), src, phi0, 0.01)
    init = initial_state(pg.grid, phi0)
    lo, hi = min(0.0, init.min()), max(0.0, init.max())
    assert res.report.min.min() >= lo - 1e-12
    assert res.report.max.max() <= hi + 1e-12


def test_leak_is_a_source():
    src = SourceSchedule.pulse(1.0, 0.1, T=0.2)
    res = solve_microscopic(perforated(), coeffs(), BoundarySpec(), src, None, 0.02)
    assert res.report.min.min() >= 0.0
    assert res.report.mass[-1] > 0.0


def test_swap_exchanges_sides():
    lo, hi = BoundarySpec(swap=True).sides()
    assert (lo.kind, hi.kind) == ("flux", "dirichlet")
    src = SourceSchedule.pulse(1.0, 0.1, T=0.2)
    pg = perforated()
    a = solve_microscopic(pg, coeffs(), BoundarySpec(), src, None, 0.02).field(-1)
    b = solve_microscopic(pg, coeffs(), BoundarySpec(swap=True), src, None, 0.02).field(-1)
    # the perforated layer is symmetric, so swapping mirrors the solution
    assert np.allclose(a, b[:, ::-1], atol=1e-12, equal_nan=True)


def test_boundary_spec_validation():
    with pytest.raises(ValueError):
        BoundarySpec("open")
    with pytest.raises(ValueError):
        BoundarySpec("general", bottom="robin")


def test_initial_state_forms():
    g = perforated().grid
    assert np.all(initial_state(g, 2.0) == 2.0)
    arr = np.arange(g.size, dtype=float).reshape(g.shape)
    assert np.array_equal(initial_state(g, arr), arr[g.active])
    with pytest.raises(ValueError):
        initial_state(g, np.ones(3))


def test_final_time_must_match_schedule():
    with pytest.raises(ValueError):
        solve_microscopic(perforated(), coeffs(), BoundarySpec(), SourceSchedule.none(T=0.2), None, 0.05, T=0.3)


def test_energy_sweep_bound():
    src = SourceSchedule.pulse(1.0, 0.1, T=0.2)
    reps = [solve_microscopic(perforated(e), coeffs(), BoundarySpec(), src, None, 0.02).report
            for e in (1 / 8, 1 / 16)]
    chk = energy_diagnostics(reps[0], sweep=reps)
    assert chk.passed
    assert chk.margins["max_abs"][1] <= chk.margins["max_bound"]


def test_unknown_linear_solver():
    with pytest.raises(ValueError):
        LinearSolver("cg")
