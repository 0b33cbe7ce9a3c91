import numpy as np
import pytest
import scipy.sparse.linalg as spla

from perfhom.coefficients import LayeredTensor, LayeredVelocity
from perfhom.fv import (
    AssemblyError, BoundarySide, Interface, Operator, gradient_seminorm_sq, l2_norm_sq, transmissibility,
)
from perfhom.grid import TensorGrid, uniform_faces
from perfhom.micro import cell_diffusion, face_velocities


def column_grid(ny=16, nx=2):
    return TensorGrid((uniform_faces(-0.5, 0.5, 1 / nx), uniform_faces(-0.5, 0.5, 1 / ny)), periodic=(True, False))


def steady(op, scale=1.0, dirichlet_scale=1.0):
    rhs = -op.const(scale, dirichlet_scale)
    return spla.spsolve((op.K + op.C).tocsc(), rhs)


def test_transmissibility_harmonic():
    # series resistances: area / (d1/a1 + d2/a2)
    assert transmissibility(2.0, 0.5, 1.0, 0.5, 0.25) == pytest.approx(2.0 / (0.5 + 2.0))


@pytest.mark.parametrize("a1", [1.0, 0.1, 7.0])
def test_layered_linear_profile_exact(a1):
    g = column_grid(16)
    eps = 0.125  # inner layer |y| < 1.5 * eps = 0.1875 falls on faces
    A = LayeredTensor.isotropic(a1, 1.0, h=1.5)
    op = Operator(g, cell_diffusion(g, A, eps), None, BoundarySide("dirichlet", 1.0), BoundarySide("dirichlet", 0.0))
    u = steady(op)
    # piecewise-linear exact solution with continuous flux q
    l_in = 2 * 1.5 * eps
    q = 1.0 / ((1.0 - l_in) / 1.0 + l_in / a1)
    y = g.centers[-1]

    def exact(y):
        lo = -1.5 * eps
        if y < lo:
            return 1.0 - q * (y + 0.5)
        if y < -lo:
            return 1.0 - q * (lo + 0.5) - q / a1 * (y - lo)
        return q * (0.5 - y)

    ref = np.array([exact(v) for v in y])
    assert np.allclose(u.reshape(g.shape)[0], ref, atol=1e-12)


def test_value_jump_reproduced():
    g = column_grid(16)
    mid = g.face_index(1, 0.0)
    g0 = 0.3
    op = Operator(g, cell_diffusion(g, LayeredTensor.isotropic(), 1.0), None, BoundarySide("dirichlet"),
                  BoundarySide("dirichlet"), [Interface(mid, value_coef=g0)])
    u = steady(op).reshape(g.shape)[0]
    y = g.centers[-1]
    # u = -g0 (y + 1/2) below, u = -g0 (y + 1/2) + g0 above
    ref = -g0 * (y + 0.5) + np.where(y > 0, g0, 0.0)
    assert np.allclose(u, ref, atol=1e-12)
    tr = op.interface_traces(steady(op))[0]
    assert np.allclose(tr["value_jump"], g0, atol=1e-14)


def test_flux_jump_reproduced():
    g = column_grid(16)
    mid = g.face_index(1, 0.0)
    g1 = -1.0
    op = Operator(g, cell_diffusion(g, LayeredTensor.isotropic(), 1.0), None, BoundarySide("dirichlet"),
                  BoundarySide("dirichlet"), [Interface(mid, flux_coef=g1)])
    phi = steady(op)
    u = phi.reshape(g.shape)[0]
    y = g.centers[-1]
    # slopes -g1/2 below and g1/2 above: a tent of height -g1/4
    ref = np.where(y < 0, -g1 / 2 * (y + 0.5), g1 / 2 * (y - 0.5))
    assert np.allclose(u, ref, atol=1e-12)
    tr = op.interface_traces(phi)[0]
    assert np.allclose(tr["flux_jump"], g1, atol=1e-12)
    assert op.interface_injection() == pytest.approx(-g1 * 1.0)


def test_zero_jump_interface_is_stencil_identical():
    g = column_grid(12, 4)
    A = LayeredTensor(np.array([[1.0, 0.3], [0.3, 2.0]]), np.eye(2), 1.5)
    D = cell_diffusion(g, A, 0.1)
    vel = face_velocities(g, LayeredVelocity.shear(0.4), 0.0, 0.1)
    bare = Operator(g, D, vel, BoundarySide("dirichlet"), BoundarySide("flux"))
    itf = Operator(g, D, vel, BoundarySide("dirichlet"), BoundarySide("flux"), [Interface(6), Interface(3)])
    assert (bare.K != itf.K).nnz == 0
    assert (bare.C != itf.C).nnz == 0
    assert np.all(itf.const(1.0) == 0.0)


def test_operator_conserves_mass():
    g = column_grid(12, 4)
    A = LayeredTensor(np.array([[1.0, 0.3], [0.3, 2.0]]), np.eye(2), 1.5)
    vel = face_velocities(g, LayeredVelocity.shear(0.4), 0.0, 0.1)
    op = Operator(g, cell_diffusion(g, A, 0.1), vel, BoundarySide("flux"), BoundarySide("flux"))
    ones = np.ones(op.n_unknowns)
    # zero-flux boundaries: the outward fluxes of all cells cancel for any state
    assert np.max(np.abs(ones @ op.K)) < 1e-12
    assert np.max(np.abs(ones @ op.C)) < 1e-12


def test_interface_must_be_interior():
    g = column_grid(8)
    with pytest.raises(AssemblyError):
        Operator(g, cell_diffusion(g, LayeredTensor.isotropic(), 1.0), interfaces=[Interface(0)])


def test_diffusion_shape_checked():
    g = column_grid(8)
    with pytest.raises(AssemblyError):
        Operator(g, np.ones((3, 3, 2, 2)))


def test_seminorm_of_linear_field():
    g = column_grid(8, 4)
    u = np.broadcast_to(g.centers[-1][None, :], g.shape)
    # interior faces only: lateral width times the span between the outermost centres
    span = g.centers[-1][-1] - g.centers[-1][0]
    assert gradient_seminorm_sq(g, u) == pytest.approx(1.0 * span)
    assert gradient_seminorm_sq(g, u, exclude_vertical=(4,)) == pytest.approx(span - 1 / 8)


def test_l2_norm_of_constant():
    g = column_grid(8, 4)
    assert l2_norm_sq(g, np.full(g.shape, 3.0)) == pytest.approx(9.0)


def test_traces_agree_with_assembled_fluxes_under_convection():
    g = column_grid(16, 2)
    vel = face_velocities(g, LayeredVelocity.uniform((0.0, 0.7)), 0.0, 1.0)
    op = Operator(g, cell_diffusion(g, LayeredTensor.isotropic(0.3, 1.0), 0.1), vel, BoundarySide("dirichlet"),
                  BoundarySide("flux"), [Interface(g.face_index(1, 0.0), value_coef=0.2, flux_coef=-1.5)])
    phi = np.random.default_rng(0).normal(size=op.n_unknowns)
    (F_lo, F_hi, area), = op.condensed_interface_fluxes(phi)
    tr = op.interface_traces(phi)[0]
    assert np.allclose(F_lo / area, tr["J_lower"], atol=1e-13)
    assert np.allclose(F_hi / area, tr["J_upper"], atol=1e-13)
    assert np.allclose(tr["flux_jump"], -1.5, atol=1e-12)
