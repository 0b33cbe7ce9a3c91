import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perfhom.cells import CellProblemSet, CutoffProfile, cutoff, fit_decay, sheet_limit_error, solve_cell
from perfhom.coefficients import LayeredTensor
from perfhom.geometry import build_strip
from perfhom.grid import TensorGrid, uniform_faces

ISO = LayeredTensor.isotropic(1.0, 1.0)
LAYERED = LayeredTensor.isotropic(0.3, 1.0)


@pytest.fixture(scope="module")
def scaled():
    return CellProblemSet(build_strip("scaled", (0.25,), 0.1, 2.0, 6.0), LAYERED)


@pytest.fixture(scope="module")
def flat():
    return CellProblemSet(build_strip("flat", (0.25,), 0.1, 2.0, 6.0), LAYERED)


def test_cutoff_endpoints():
    assert np.all(cutoff(np.array([0.0, 0.3, -0.5])) == 0.0)
    assert np.all(cutoff(np.array([1.0, -2.0, 7.0])) == 1.0)


@settings(max_examples=60, deadline=None)
@given(a=st.floats(0.0, 1.2), b=st.floats(0.0, 1.2))
def test_cutoff_monotone_in_abs(a, b):
    lo, hi = sorted((a, b))
    assert cutoff(lo) <= cutoff(hi) + 1e-15
    assert cutoff(-a) == cutoff(a)


def test_cutoff_is_the_quintic_step():
    s = np.linspace(0.05, 0.95, 19)
    coef = np.polyfit(s, cutoff(0.5 + 0.5 * s), 5)
    np.testing.assert_allclose(coef, [6.0, -15.0, 10.0, 0.0, 0.0, 0.0], atol=1e-8)


@pytest.mark.parametrize("h", [1e-2, 1e-3])
def test_cutoff_joins_are_c2(h):
    # one-sided offsets from the flat pieces shrink like h**3
    assert cutoff(0.5 + h) <= 81.0 * h**3
    assert 1.0 - cutoff(1.0 - h) <= 81.0 * h**3
    assert cutoff(-0.5 - h) == cutoff(0.5 + h)


def test_profile_constants():
    p = CutoffProfile(1.4, 2.0)
    assert p.slope == pytest.approx(0.35)
    assert p.curvature == pytest.approx(-0.0875)
    assert p.pi(np.array([3.0]))[0] == pytest.approx(-0.35 * 3.0)


def test_flat_lateral_chi_is_trivial():
    flat = CellProblemSet(build_strip("flat", (0.25,), 0.1, 2.0, 4.0), ISO)
    assert flat.chi(1).gradient_norm() <= 1e-10


def test_flat_lateral_chi_trivial_for_layered_diagonal(flat):
    assert flat.chi(1).gradient_norm() <= 1e-10


@pytest.mark.parametrize("mode, expect", [("flat", 0.5), ("scaled", 0.5 * (2 * 0.5 + 2 * 0.1 * 2))])
def test_w_far_field_flux(mode, expect):
    cps = CellProblemSet(build_strip(mode, (0.25,), 0.1, 2.0, 6.0), LAYERED)
    lower, upper = cps.w().far_field_flux
    assert lower == pytest.approx(expect, abs=1e-10)
    assert upper == pytest.approx(-expect, abs=1e-10)


def test_w_remainder_is_even(scaled):
    assert scaled.w().parity_error(odd=False) <= 1e-10


def test_lateral_chi_is_even(scaled):
    assert scaled.chi(1).parity_error(odd=False, part="values") <= 1e-10


def test_vertical_chi_is_odd(scaled):
    assert scaled.chi(2).parity_error(odd=True, part="values") <= 1e-10


def test_z_lateral_is_odd_in_its_direction(scaled):
    assert scaled.z(1).parity_error(axis=0, odd=True, part="values") <= 1e-10


def test_normalization_centres_stabilization_constants(scaled):
    for sol in (scaled.w(), scaled.chi(2), scaled.z(2)):
        assert sol.c_plus + sol.c_minus == pytest.approx(0.0, abs=1e-10)


@pytest.mark.parametrize("problem, index", [("chi-k", (1,)), ("w", ()), ("z-k", (1,))])
def test_compatible_problems_have_no_defect(scaled, problem, index):
    assert abs(scaled.get(problem, index).compatibility_defect) < 1e-10


def test_chi_nn_defect_is_recorded(scaled):
    # the vertical chi is odd, so the right-hand side of chi^{nn} has nonzero mean
    assert abs(scaled.chi_lm(2, 2).compatibility_defect) > 1e-3


def test_w_ij_defect_is_recorded(scaled):
    # the obstacle boundary term of the integrated source is not balanced by a zero-flux condition
    assert abs(scaled.w_ij(1, 1).compatibility_defect) > 1e-3


def test_index_checks(scaled):
    with pytest.raises(ValueError):
        scaled.chi(3)
    with pytest.raises(ValueError):
        scaled.get("theta")
    with pytest.raises(ValueError):
        CellProblemSet(build_strip("flat", (0.25,), 0.1, 2.0, 4.0), LayeredTensor.isotropic(n=3))


def test_decay_fit_on_exponential():
    g = TensorGrid((uniform_faces(-0.5, 0.5, 0.25), uniform_faces(-12, 12, 0.05)), periodic=(True, False))
    u = np.broadcast_to(np.exp(-2.0 * np.abs(g.centers[-1]))[None, :], g.shape)
    fit = fit_decay(None, (1.0, 6.0), grid=g, values=u)
    assert fit.ok
    assert fit.tau == pytest.approx(2.0, rel=0.02)


def test_decay_fit_flags_constant():
    g = TensorGrid((uniform_faces(-0.5, 0.5, 0.25), uniform_faces(-6, 6, 0.25)), periodic=(True, False))
    fit = fit_decay(None, grid=g, values=np.zeros(g.shape))
    assert not fit.ok


def test_solve_cell_truncation_converges():
    sol = solve_cell("w", mode="scaled", eps=0.1, A=LAYERED, Y=4.0)
    assert sol.meta["decay"].ok and sol.meta["decay"].tau > 1.0
    hist = sol.meta["truncation"]
    assert hist and max(hist[-1]["change_c"], hist[-1]["change_flux"]) <= hist[-1]["bound"]


def test_sheet_limit_error_decreases():
    errs = [sheet_limit_error("w", eps=e, A=ISO, Y=4.0) for e in (1 / 8, 1 / 16, 1 / 32)]
    assert errs[0] > errs[1] > errs[2] > 0
