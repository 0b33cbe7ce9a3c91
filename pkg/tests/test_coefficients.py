import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from perfhom.coefficients import (
    CoefficientSet, LayeredScalar, LayeredTensor, LayeredVelocity, SourceSchedule, check_divergence_free,
    decay_constant, eval_tensor,
)
from perfhom.grid import TensorGrid, uniform_faces


def test_layered_tensor_branches():
    A = LayeredTensor(0.1 * np.eye(2), np.eye(2), 1.5)
    eps = 0.25
    assert np.allclose(eval_tensor(A, 0.3, eps), 0.1 * np.eye(2))
    assert np.allclose(eval_tensor(A, 0.375, eps), np.eye(2))  # interface belongs to the outer branch
    assert np.allclose(eval_tensor(A, -0.4, eps), np.eye(2))
    assert np.allclose(A.outer().A1, np.eye(2))


@pytest.mark.parametrize("bad, match", [
    ([[1.0, 0.5], [0.0, 1.0]], "symmetric"),
    ([[1.0, 0.0], [0.0, -1.0]], "positive definite"),
    ([[1.0, 2.0], [2.0, 1.0]], "positive definite"),
])
def test_tensor_validation(bad, match):
    with pytest.raises(ValueError, match=match):
        LayeredTensor(np.asarray(bad), np.eye(2))


def test_scalar_positive():
    with pytest.raises(ValueError):
        LayeredScalar(0.0, 1.0)


@pytest.mark.parametrize("tau, lam", [(1.0, math.log(2)), (30.0, math.log(2) / 30), (math.inf, 0.0)])
def test_decay_constant(tau, lam):
    assert decay_constant(tau) == pytest.approx(lam, rel=1e-15)


def test_decay_constant_rejects_nonpositive():
    with pytest.raises(ValueError):
        decay_constant(0.0)


@settings(max_examples=50, deadline=None)
@given(t0=st.floats(0.0, 0.3), dt=st.floats(1e-3, 0.3), amp=st.floats(0.1, 10.0), tau=st.floats(0.2, 5.0))
def test_schedule_integral_matches_quadrature(t0, dt, amp, tau):
    src = SourceSchedule.pulse(amp, 0.1, T=1.0, tau=tau)
    t1 = t0 + dt
    lam = decay_constant(tau)
    ref = integrate.quad(lambda s: amp * (s < 0.1) * math.exp(-lam * (t1 - s)), t0, t1,
                         points=[0.1] if t0 < 0.1 < t1 else None, epsabs=1e-14, epsrel=1e-12)[0]
    assert src.integral(t0, t1) == pytest.approx(ref, rel=1e-9, abs=1e-13)


def test_schedule_function_profile():
    src = SourceSchedule(T=1.0, tau=2.0, t_m=0.2, func=lambda t: math.sin(math.pi * t / 0.2))
    lam = math.log(2) / 2.0
    ref = integrate.quad(lambda s: math.sin(math.pi * s / 0.2) * math.exp(-lam * (0.15 - s)), 0.05, 0.15)[0]
    assert src.integral(0.05, 0.15) == pytest.approx(ref, rel=1e-10)
    assert src.value(0.3) == 0.0


@pytest.mark.parametrize("kwargs", [
    dict(segments=[(0.0, 0.6, 1.0)], T=0.5),
    dict(segments=[(0.2, 0.1, 1.0)], T=1.0),
    dict(segments=(), T=0.0),
])
def test_schedule_validation(kwargs):
    with pytest.raises(ValueError):
        SourceSchedule(**kwargs)


def test_schedule_breakpoints_and_zero():
    src = SourceSchedule.pulse(1.0, 0.1, T=0.5)
    assert src.breakpoints == [0.0, 0.1, 0.5]
    assert SourceSchedule.none(T=1.0).is_zero


@pytest.mark.parametrize("vel", [
    LayeredVelocity.uniform((0.3, 0.0)),
    LayeredVelocity.shear(0.5, L=1.0, amplitude_inner=0.1),
])
def test_presets_are_divergence_free(vel):
    g = TensorGrid((uniform_faces(-0.5, 0.5, 1 / 16), uniform_faces(-0.5, 0.5, 1 / 32)), periodic=(True, False))
    assert check_divergence_free(vel, g, 0.0, 0.1) < 1e-12


def test_coefficient_set_defaults():
    c = CoefficientSet(LayeredTensor.isotropic(0.5, 2.0), v=LayeredVelocity.zero())
    assert c.v is None
    assert c.omega.w1 == 1.0
    assert np.allclose(c.outer().A.A1, 2.0 * np.eye(2))
