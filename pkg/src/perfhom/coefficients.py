"""Two-layer coefficient fields and the leak source schedule.

All layered fields switch at ``|x_n / eps| = h``; the interface itself is
assigned to the outer branch.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

PD_TOL = 1e-12


def _spd(A, name, tol=PD_TOL):
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"{name} must be square")
    if np.max(np.abs(A - A.T)) > tol * max(1.0, np.max(np.abs(A))):
        raise ValueError(f"{name} is not symmetric")
    ev = np.linalg.eigvalsh(A)
    if ev[0] <= tol:
        raise ValueError(f"{name} is not positive definite (smallest eigenvalue {ev[0]:.3g})")
    return A, (float(ev[0]), float(ev[-1]))


def inner_layer(x_n, eps, h):
    """True where ``|x_n / eps| < h``."""
    return np.abs(np.asarray(x_n, dtype=float)) < h * eps


@dataclass(frozen=True, eq=False)
class LayeredTensor:
    """Diffusion matrix ``A1`` for ``|y_n| < h`` and ``A2`` outside.

    ``pd_tol`` bounds the symmetry defect and the smallest eigenvalue.
    """

    A1: np.ndarray
    A2: np.ndarray
    h: float = 1.5
    pd_tol: float = PD_TOL
    bounds: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        A1, b1 = _spd(self.A1, "A1", self.pd_tol)
        A2, b2 = _spd(self.A2, "A2", self.pd_tol)
        if A1.shape != A2.shape:
            raise ValueError("A1 and A2 must have the same size")
        if not self.h > 0:
            raise ValueError("layer half-height h must be positive")
        object.__setattr__(self, "A1", A1)
        object.__setattr__(self, "A2", A2)
        self.bounds.update(A1=b1, A2=b2)

    @classmethod
    def isotropic(cls, a1=1.0, a2=1.0, n=2, h=1.5):
        return cls(a1 * np.eye(n), a2 * np.eye(n), h)

    @property
    def n(self):
        return self.A1.shape[0]

    @property
    def is_diagonal(self):
        off = lambda A: A - np.diag(np.diag(A))
        return not (np.any(off(self.A1)) or np.any(off(self.A2)))

    def at(self, x_n, eps):
        """Matrices at vertical positions ``x_n`` (array), shape ``x_n.shape + (n, n)``."""
        inner = inner_layer(x_n, eps, self.h)
        return np.where(inner[..., None, None], self.A1, self.A2)

    def outer(self):
        return LayeredTensor(self.A2, self.A2, self.h, self.pd_tol)


def eval_tensor(field_, x_n, eps):
    """``A^eps(x_n) = A(x_n / eps)`` for a scalar position."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    return field_.at(np.asarray(float(x_n)), eps)[()]


@dataclass(frozen=True)
class LayeredScalar:
    """Porosity ``w1`` for ``|y_n| < h`` and ``w2`` outside."""

    w1: float = 1.0
    w2: float = 1.0
    h: float = 1.5

    def __post_init__(self):
        if not (self.w1 > 0 and self.w2 > 0):
            raise ValueError("porosities must be positive")

    def at(self, x_n, eps):
        return np.where(inner_layer(x_n, eps, self.h), self.w1, self.w2)

    def outer(self):
        return LayeredScalar(self.w2, self.w2, self.h)


class LayeredVelocity:
    """Convection velocity ``v1`` for ``|y_n| < h`` and ``v2`` outside.

    ``v1`` and ``v2`` are callables ``f(coords, t) -> sequence of components``
    where ``coords`` is a sequence of coordinate arrays. Components must be
    L-periodic in ``x'`` and divergence free, and the last component must
    agree between the two branches.
    """

    def __init__(self, v1, v2=None, h=1.5, *, n=2, time_dependent=False, name="custom"):
        self.v1 = v1
        self.v2 = v1 if v2 is None else v2
        self.h = h
        self.n = n
        self.time_dependent = time_dependent
        self.name = name

    @classmethod
    def zero(cls, n=2, h=1.5):
        def f(coords, t):
            return [np.zeros(np.shape(coords[0])) for _ in range(n)]

        vel = cls(f, f, h, n=n, name="zero")
        vel.is_zero = True
        return vel

    @classmethod
    def uniform(cls, vector, h=1.5):
        vector = tuple(float(c) for c in vector)

        def f(coords, t):
            return [np.full(np.shape(coords[0]), c) for c in vector]

        return cls(f, f, h, n=len(vector), name="uniform")

    @classmethod
    def shear(cls, amplitude, L=1.0, n=2, h=1.5, amplitude_inner=None):
        """Horizontal flow ``U sin(2 pi x_n / L)`` along ``x_1``; ``v_n = 0``."""
        a_in = amplitude if amplitude_inner is None else amplitude_inner

        def make(a):
            def f(coords, t):
                u = [np.zeros(np.shape(coords[0])) for _ in range(n)]
                u[0] = a * np.sin(2 * np.pi * coords[-1] / L)
                return u
            return f

        return cls(make(a_in), make(amplitude), h, n=n, name="shear")

    is_zero = False

    def components(self, coords, t, eps):
        """Velocity components at points, branch chosen by the layer."""
        inner = inner_layer(coords[-1], eps, self.h)
        c1 = self.v1(coords, t)
        c2 = self.v2(coords, t)
        return [np.where(inner, a, b) for a, b in zip(c1, c2)]

    def outer(self):
        return LayeredVelocity(self.v2, self.v2, self.h, n=self.n, time_dependent=self.time_dependent,
                               name=self.name + "-outer")

    def face_normal(self, grid, axis, t, eps):
        """Normal velocity on every face along ``axis`` (``n_axis + 1`` faces)."""
        coords = []
        for b in range(grid.ndim):
            c = grid.faces[b] if b == axis else grid.centers[b]
            coords.append(c)
        mesh = np.meshgrid(*coords, indexing="ij")
        comp = self.components(mesh, t, eps)[axis]
        if axis == grid.ndim - 1 and not self.is_zero:
            # v_n is branch independent; evaluate on the outer branch at interfaces
            comp = np.asarray(self.v2(mesh, t)[axis])
        return np.asarray(comp, dtype=float)


class FaceVelocity:
    """Discrete normal velocities given directly on faces.

    ``arrays[a]`` has the grid shape with ``n_a + 1`` entries along axis ``a``.
    """

    time_dependent = False
    is_zero = False
    name = "face-flux"

    def __init__(self, arrays):
        self.arrays = [np.asarray(a, dtype=float) for a in arrays]
        self.n = len(self.arrays)

    def face_normal(self, grid, axis, t, eps):
        arr = self.arrays[axis]
        expect = list(grid.shape)
        expect[axis] += 1
        if arr.shape != tuple(expect):
            raise ValueError(f"face velocity on axis {axis} has shape {arr.shape}, expected {tuple(expect)}")
        return arr

    def components(self, coords, t, eps):
        raise NotImplementedError("face-flux velocities have no pointwise evaluation")

    def outer(self):
        return self

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            keys = sorted(k for k in data.files if k.startswith("axis"))
            return cls([data[k] for k in keys])


def check_divergence_free(v, grid, t=0.0, eps=1.0):
    """Largest cell-wise discrete divergence of ``v`` over all cells of ``grid``."""
    div = np.zeros(grid.shape)
    for a in range(grid.ndim):
        u = v.face_normal(grid, a, t, eps)
        lo = [slice(None)] * grid.ndim
        hi = [slice(None)] * grid.ndim
        lo[a] = slice(0, -1)
        hi[a] = slice(1, None)
        w = grid._bcast(grid.widths[a], a)
        div += (u[tuple(hi)] - u[tuple(lo)]) / w
    return float(np.max(np.abs(div)))


def decay_constant(tau):
    """``lambda = log 2 / tau``; an infinite half-life means no decay."""
    if not tau > 0:
        raise ValueError("half-life must be positive")
    return 0.0 if math.isinf(tau) else math.log(2.0) / tau


class SourceSchedule:
    """Leak flux ``Phi(t)`` with support in ``[0, t_m]`` and decay constant.

    ``segments`` is a piecewise-constant table of ``(t0, t1, value)``;
    alternatively ``func`` gives an arbitrary bounded profile vanishing after
    ``t_m``.
    """

    def __init__(self, segments=(), *, T, tau=1.0, t_m=None, func=None):
        self.segments = tuple((float(a), float(b), float(v)) for a, b, v in segments)
        for a, b, _ in self.segments:
            if not (0 <= a < b):
                raise ValueError(f"bad source segment [{a}, {b}]")
        self.func = func
        if t_m is None:
            t_m = max((b for _, b, v in self.segments if v != 0.0), default=0.0)
        self.t_m = float(t_m)
        self.T = float(T)
        self.tau = float(tau)
        self.lam = decay_constant(self.tau)
        if any(b > self.t_m + 1e-14 and v != 0.0 for _, b, v in self.segments):
            raise ValueError("source segments extend beyond t_m")
        if not self.T > 0:
            raise ValueError("final time must be positive")
        if self.t_m > 0 and not self.t_m < self.T:
            raise ValueError("the leak support [0, t_m] must end before T")

    @classmethod
    def pulse(cls, amplitude, t_m, *, T, tau=1.0):
        return cls([(0.0, t_m, amplitude)], T=T, tau=tau, t_m=t_m)

    @classmethod
    def none(cls, *, T, tau=1.0):
        return cls((), T=T, tau=tau, t_m=0.0)

    @property
    def is_zero(self):
        return self.func is None and all(v == 0.0 for *_, v in self.segments)

    @property
    def breakpoints(self):
        pts = {0.0, self.T}
        if self.t_m > 0:
            pts.add(self.t_m)
        for a, b, _ in self.segments:
            pts.update((a, b))
        return sorted(p for p in pts if p <= self.T)

    def value(self, t):
        t = np.asarray(t, dtype=float)
        if self.func is not None:
            out = np.where(t < self.t_m, np.vectorize(self.func)(t), 0.0)
            return out
        out = np.zeros_like(t)
        for a, b, v in self.segments:
            out = out + np.where((t >= a) & (t < b), v, 0.0)
        return out

    def __call__(self, t):
        return self.value(t)

    def integral(self, t0, t1, lam=None):
        """``int_t0^t1 Phi(s) exp(-lam (t1 - s)) ds`` (plain integral for ``lam = 0``)."""
        lam = self.lam if lam is None else lam
        if self.func is not None:
            g = lambda s: float(self.func(s)) * math.exp(-lam * (t1 - s)) if s < self.t_m else 0.0
            hi = min(t1, self.t_m)
            if hi <= t0:
                return 0.0
            return integrate.quad(g, t0, hi, limit=200, epsabs=1e-15, epsrel=1e-13)[0]
        tot = 0.0
        for a, b, v in self.segments:
            lo, hi = max(a, t0), min(b, t1)
            if hi <= lo or v == 0.0:
                continue
            if lam == 0.0:
                tot += v * (hi - lo)
            else:
                tot += v * (math.exp(-lam * (t1 - hi)) - math.exp(-lam * (t1 - lo))) / lam
        return tot


@dataclass(frozen=True, eq=False)
class CoefficientSet:
    """Diffusion, porosity and velocity of one problem (``v=None`` means no convection)."""

    A: LayeredTensor
    omega: LayeredScalar = None
    v: object = None

    def __post_init__(self):
        if self.omega is None:
            object.__setattr__(self, "omega", LayeredScalar(1.0, 1.0, self.A.h))
        if self.v is not None and getattr(self.v, "is_zero", False):
            object.__setattr__(self, "v", None)

    @property
    def n(self):
        return self.A.n

    def outer(self):
        return CoefficientSet(self.A.outer(), self.omega.outer(), None if self.v is None else self.v.outer())
