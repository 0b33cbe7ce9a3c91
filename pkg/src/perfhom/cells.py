"""Boundary-layer cell problems on truncated periodic strips.

All problems are steady diffusion problems ``-div(A grad u) = f`` around one
obstacle, periodic in ``y'`` and with zero flux on the artificial ends
``y_n = +-Y``. Solutions with linear (``w``) or quadratic (``z^n``) growth are
split into a fixed profile and a decaying remainder; the remainder carries
the zero-flux end conditions while the profile's far-field flux is imposed.

Singular Neumann systems are solved with a Lagrange multiplier on the mean;
the multiplier measures the compatibility defect of the right-hand side.
Stabilization constants ``c+`` and ``c-`` are slab means near the two ends;
the solution is shifted so that their average vanishes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fv import Operator, SolverError
from .geometry import build_strip
from .micro import cell_diffusion

logger = logging.getLogger(__name__)

PROBLEMS = ("chi-k", "w", "chi-lm", "w-ij", "z-k")


# ---------------------------------------------------------------------------
# cut-off and growth profiles


def cutoff(y):
    """Quintic ``C2`` step: 0 for ``|y| <= 1/2``, 1 for ``|y| >= 1``."""
    s = np.clip((np.abs(np.asarray(y, dtype=float)) - 0.5) / 0.5, 0.0, 1.0)
    return s**3 * (10.0 - 15.0 * s + 6.0 * s**2)


@dataclass(frozen=True)
class CutoffProfile:
    """Growth profiles ``pi = -zeta c |y|`` and ``q = zeta kappa |y| y``.

    ``c = |dP| / (2 A2_nn)`` and ``kappa = -|dP| / (4 A2_nn^2)``.
    """

    boundary_measure: float
    A2_nn: float

    @property
    def slope(self):
        return 0.5 * self.boundary_measure / self.A2_nn

    @property
    def curvature(self):
        return -0.25 * self.boundary_measure / self.A2_nn**2

    def zeta(self, y):
        return cutoff(y)

    def pi(self, y):
        y = np.asarray(y, dtype=float)
        return -cutoff(y) * self.slope * np.abs(y)

    def quadratic(self, y):
        y = np.asarray(y, dtype=float)
        return cutoff(y) * self.curvature * np.abs(y) * y


# ---------------------------------------------------------------------------
# results


@dataclass
class CellSolution:
    """Solution of one strip problem.

    ``values`` is the full solution on the strip grid (NaN in obstacle cells),
    ``decaying`` its decaying part and ``profile`` the subtracted growth
    profile (zero for problems with decaying gradient).
    """

    problem: str
    index: tuple
    strip: object
    values: np.ndarray
    decaying: np.ndarray
    profile: np.ndarray
    c_plus: float
    c_minus: float
    far_field_flux: tuple
    compatibility_defect: float
    meta: dict = field(default_factory=dict)

    @property
    def grid(self):
        return self.strip.grid

    @property
    def Y(self):
        return self.strip.Y

    def gradient_norm(self):
        return math.sqrt(strip_gradient_sq(self.grid, self.values))

    def parity_error(self, axis=-1, odd=False, part="decaying"):
        """``max |u(R y) -+ u(y)| / max |u|`` for the reflection ``R`` of ``axis``."""
        u = getattr(self, part)
        return reflection_error(u, axis, odd)


def reflection_error(u, axis=-1, odd=False):
    r = np.flip(u, axis=axis)
    d = r + u if odd else r - u
    scale = np.nanmax(np.abs(u)) if np.any(np.isfinite(u)) else 0.0
    err = np.nanmax(np.abs(d)) if np.any(np.isfinite(d)) else 0.0
    return float(err / scale) if scale > 0 else float(err)


def strip_gradient_sq(grid, values, mask=None):
    """Discrete ``|grad u|^2`` over open faces, optionally restricted by a cell mask."""
    v = np.nan_to_num(np.asarray(values, dtype=float).ravel())
    tot = 0.0
    for a in range(grid.ndim):
        lo, hi = grid.connections(a)
        m = grid.open_connection(a)
        if mask is not None:
            mk = mask.ravel()
            m = m & mk[lo] & mk[hi]
        dlo, dhi = grid.conn_halves(a)
        dist = np.broadcast_to(dlo + dhi, m.shape)[m]
        area = np.broadcast_to(grid.conn_area(a), m.shape)[m]
        tot += float(np.sum(area * (v[hi[m]] - v[lo[m]]) ** 2 / dist))
    return tot


# ---------------------------------------------------------------------------
# discrete building blocks


class _StripSystem:
    """Operator, bordered solver and helpers for one strip and tensor."""

    def __init__(self, strip, A):
        self.strip = strip
        self.A = A
        g = strip.grid
        self.grid = g
        self.D = cell_diffusion(g, A, 1.0)
        self.op = Operator(g, self.D)
        self.M = (self.op.K + self.op.C).tocsc()
        self.act = g.active.ravel()
        self.vol = g.volumes.ravel()[self.act]
        nu = self.op.n_unknowns
        w = self.vol[:, None]
        B = sp.bmat([[self.M, sp.csc_matrix(w)], [sp.csc_matrix(w.T), None]], format="csc")
        try:
            self._lu = spla.splu(B)
        except RuntimeError as exc:
            raise SolverError(f"strip factorization failed: {exc}") from exc
        self.nu = nu

    def solve(self, rhs):
        """Mean-zero solution of ``M u = rhs - mu vol`` and the relative defect."""
        full = np.concatenate([rhs, [0.0]])
        sol = self._lu.solve(full)
        u = sol[: self.nu]
        scale = float(np.sum(np.abs(rhs)))
        defect = abs(float(np.sum(rhs))) / scale if scale > 0 else 0.0
        resid = self.M @ u + sol[-1] * self.vol - rhs
        if np.max(np.abs(resid), initial=0.0) > 1e-8 * max(1.0, np.max(np.abs(rhs), initial=0.0)):
            raise SolverError("strip solve residual too large")
        return u, defect

    def to_full(self, u):
        out = np.full(self.grid.size, np.nan)
        out[self.act] = u
        return out.reshape(self.grid.shape)

    def to_active(self, full):
        return np.asarray(full, dtype=float).ravel()[self.act]

    def cell_profile(self, f):
        yc = self.grid.centers[-1]
        full = np.broadcast_to(self.grid._bcast(f(yc), self.grid.ndim - 1), self.grid.shape)
        return full.ravel()[self.act]

    def edge_cells(self, side):
        cells, area, _ = self.grid.boundary_faces(self.grid.ndim - 1, side)
        keep = self.act[cells]
        return self.grid.unknown_index[cells[keep]], area[keep]

    def obstacle_area(self):
        return float(np.sum(self.grid.obstacle_faces.area))

    def divergence_integral(self, values, k, coef=None):
        """``int_cell d/dy_k (coef u)`` per active cell, by face sums.

        Face values are the two-cell average on open faces and the cell value
        on obstacle faces and on the ends ``+-Y``.
        """
        g = self.grid
        uid = g.unknown_index
        u = np.zeros(g.size)
        u[self.act] = values
        if coef is not None:
            u = u * np.asarray(coef).ravel()
        out = np.zeros(self.nu)
        lo, hi = g.connections(k)
        m = g.open_connection(k)
        area = np.broadcast_to(g.conn_area(k), m.shape)[m]
        L, H = lo[m], hi[m]
        f = 0.5 * (u[L] + u[H]) * area
        np.add.at(out, uid[L], f)
        np.add.at(out, uid[H], -f)
        obs = g.obstacle_faces
        sel = obs.axis == k
        np.add.at(out, uid[obs.cell[sel]], obs.sign[sel] * u[obs.cell[sel]] * obs.area[sel])
        if k == g.ndim - 1:
            # linear extrapolation to the ends keeps growing profiles exact there
            w = g.widths[-1]
            ny = g.shape[-1]
            u3 = u.reshape(g.shape)
            for side, e, nb in ((-1, 0, 1), (1, ny - 1, ny - 2)):
                ue, un = u3[..., e].ravel(), u3[..., nb].ravel()
                uf = ue + (ue - un) * 0.5 * w[e] / (0.5 * (w[e] + w[nb]))
                U, a = self.edge_cells(side)
                np.add.at(out, U, side * uf * a)
        return out

    def slab_means(self, full, width=1.0):
        yc = self.grid.centers[-1]
        Y = self.strip.Y
        vol = self.grid.volumes
        out = []
        for sgn in (1, -1):
            sel = self.grid._bcast((sgn * yc > Y - width), self.grid.ndim - 1) & self.grid.active
            sel = np.broadcast_to(sel, self.grid.shape)
            out.append(float(np.sum(vol[sel] * full[sel]) / np.sum(vol[sel])))
        return tuple(out)

    def plane_flux(self, full, j):
        """Lateral mean of ``e_n . A grad u`` through vertical face ``j``."""
        g = self.grid
        a = g.ndim - 1
        conn = self.op._conn[a]
        c = j - 1
        T = conn["T"][..., c]
        area = np.broadcast_to(conn["area"], conn["T"].shape)[..., c]
        lo, hi = conn["lo"][..., c], conn["hi"][..., c]
        v = full.ravel()
        ok = conn["open"][..., c]
        flux = np.where(ok, T * (np.nan_to_num(v[hi]) - np.nan_to_num(v[lo])), 0.0)
        return float(np.sum(flux) / np.sum(area))

    def far_field_fluxes(self, full):
        ny = self.grid.shape[-1]
        return self.plane_flux(full, 1), self.plane_flux(full, ny - 1)


def _finish(sys_, problem, index, dec, profile, defect, meta=None):
    g = sys_.grid
    dec_full = sys_.to_full(dec)
    prof_full = sys_.to_full(profile) if profile is not None else np.where(g.active, 0.0, np.nan)
    cp, cm = sys_.slab_means(dec_full)
    shift = 0.5 * (cp + cm)
    dec_full = dec_full - shift
    vals = dec_full + prof_full
    flux = sys_.far_field_fluxes(vals)
    return CellSolution(problem, index, sys_.strip, vals, dec_full, prof_full, cp - shift, cm - shift, flux,
                        defect, dict(meta or {}, shift=shift))


# ---------------------------------------------------------------------------
# the problems


class CellProblemSet:
    """All strip problems for one strip and tensor, solved lazily and cached.

    Indices are 1-based as in ``chi^k`` (``k = n`` is the vertical direction).
    """

    def __init__(self, strip, A):
        if A.n != strip.n:
            raise ValueError("tensor and strip dimensions differ")
        self.strip = strip
        self.A = A
        self.n = A.n
        self._sys = _StripSystem(strip, A)
        self._cache = {}
        meas = strip.boundary_measure()
        self.profile = CutoffProfile(meas, float(A.A2[-1, -1]))

    def _check(self, *idx):
        for i in idx:
            if not 1 <= i <= self.n:
                raise ValueError(f"index {i} outside 1..{self.n}")

    def chi(self, k):
        self._check(k)
        key = ("chi-k", (k,))
        if key not in self._cache:
            s = self._sys
            obs = s.grid.obstacle_faces
            Df = self.D_at_cells(obs.cell)
            rhs = np.zeros(s.nu)
            # n . A grad(chi) = -n . A e_k on the obstacle: inflow -sign A[axis, k] area
            inflow = -obs.sign * Df[np.arange(len(obs)), obs.axis, k - 1] * obs.area
            np.add.at(rhs, s.grid.unknown_index[obs.cell], inflow)
            u, defect = s.solve(rhs)
            self._cache[key] = _finish(s, "chi-k", (k,), u, None, defect)
        return self._cache[key]

    def D_at_cells(self, cells):
        return self._sys.D.reshape(-1, self.n, self.n)[cells]

    def w(self):
        key = ("w", ())
        if key not in self._cache:
            s = self._sys
            obs = s.grid.obstacle_faces
            rhs = np.zeros(s.nu)
            np.add.at(rhs, s.grid.unknown_index[obs.cell], obs.area)
            injected = s.obstacle_area()
            # the injected mass leaves in equal halves through the two ends
            for side in (-1, 1):
                U, a = s.edge_cells(side)
                np.add.at(rhs, U, -0.5 * injected * a / a.sum())
            pi = s.cell_profile(self.profile.pi)
            rhs -= s.M @ pi
            u, defect = s.solve(rhs)
            sol = _finish(s, "w", (), u, pi, defect,
                          dict(injected=injected, exact_measure=self.strip.boundary_measure()))
            self._cache[key] = sol
        return self._cache[key]

    def chi_lm(self, l, m):
        self._check(l, m)
        key = ("chi-lm", (l, m))
        if key not in self._cache:
            s = self._sys
            chi_m = s.to_active(self.chi(m).values)
            D = s.D.reshape(-1, self.n, self.n)
            rhs = np.zeros(s.nu)
            for k in range(1, self.n + 1):
                a_lk = D[:, l - 1, k - 1].reshape(s.grid.shape)
                a_kl = D[:, k - 1, l - 1].reshape(s.grid.shape)
                if np.any(a_lk):
                    rhs += a_lk.ravel()[s.act] * s.divergence_integral(chi_m, k - 1)
                if np.any(a_kl):
                    rhs += s.divergence_integral(chi_m, k - 1, coef=a_kl)
            u, defect = s.solve(rhs)
            self._cache[key] = _finish(s, "chi-lm", (l, m), u, None, defect)
        return self._cache[key]

    def w_ij(self, i, j):
        self._check(i, j)
        key = ("w-ij", (i, j))
        if key not in self._cache:
            s = self._sys
            chi_j = s.to_active(self.chi(j).values)
            rhs = s.divergence_integral(chi_j, i - 1)
            u, defect = s.solve(rhs)
            self._cache[key] = _finish(s, "w-ij", (i, j), u, None, defect)
        return self._cache[key]

    def z(self, k):
        self._check(k)
        key = ("z-k", (k,))
        if key not in self._cache:
            s = self._sys
            w = s.to_active(self.w().values)
            rhs = -s.divergence_integral(w, k - 1)
            prof = None
            if k == self.n:
                prof = s.cell_profile(self.profile.quadratic)
                # far field e_n . A grad z = -c |y| on both ends
                outward = self.profile.slope * self.strip.Y
                for side in (-1, 1):
                    U, a = s.edge_cells(side)
                    np.add.at(rhs, U, -side * outward * a)
                rhs -= s.M @ prof
            u, defect = s.solve(rhs)
            self._cache[key] = _finish(s, "z-k", (k,), u, prof, defect)
        return self._cache[key]

    def get(self, problem, index=()):
        if problem == "chi-k":
            return self.chi(*index)
        if problem == "w":
            return self.w()
        if problem == "chi-lm":
            return self.chi_lm(*index)
        if problem == "w-ij":
            return self.w_ij(*index)
        if problem == "z-k":
            return self.z(*index)
        raise ValueError(f"unknown cell problem {problem!r}")


# ---------------------------------------------------------------------------
# decay fits and truncation control


@dataclass(frozen=True)
class DecayFit:
    tau: float
    C: float
    ok: bool
    flag: str = ""


def tail_norms(grid, values, s_values, c_plus=0.0, c_minus=0.0):
    """``H1`` norm of ``u - c+-`` over ``|y_n| > s`` for every ``s``."""
    yc = grid.centers[-1]
    shp = grid.shape
    c = np.where(yc > 0, c_plus, c_minus)
    u = np.asarray(values, dtype=float) - grid._bcast(c, grid.ndim - 1)
    u = np.where(grid.active, u, 0.0)
    vol = grid.volumes
    out = []
    for s in s_values:
        outside = np.broadcast_to(grid._bcast(np.abs(yc) > s, grid.ndim - 1), shp) & grid.active
        same_side = outside
        l2 = float(np.sum(vol[outside] * u[outside] ** 2))
        h1 = strip_gradient_sq(grid, u, same_side)
        out.append(math.sqrt(l2 + h1))
    return np.asarray(out)


def fit_decay(sol, window=None, *, grid=None, values=None):
    """Least-squares fit of ``log tail(s) = log C - tau s`` over ``window``.

    Pass a :class:`CellSolution` (its decaying part is fitted) or ``grid`` and
    ``values`` directly. The default window is ``[1, Y - 1]``.
    """
    if sol is not None:
        grid, values = sol.grid, sol.decaying
        cp, cm = sol.c_plus, sol.c_minus
    else:
        cp = cm = 0.0
    Y = float(grid.faces[-1][-1])
    s0, s1 = (1.0, Y - 1.0) if window is None else window
    if not 0 <= s0 < s1 <= Y:
        raise ValueError("decay window must lie inside the truncation")
    f = grid.faces[-1]
    s = f[(f >= s0 - 1e-12) & (f <= s1 + 1e-12)]
    if s.size < 3:
        return DecayFit(float("nan"), float("nan"), False, "window holds fewer than 3 faces")
    tail = tail_norms(grid, values, s, cp, cm)
    scale = max(float(np.nanmax(np.abs(np.nan_to_num(values)))), 1e-300)
    if np.all(tail <= 1e-13 * scale) or not np.all(tail > 0):
        return DecayFit(float("nan"), float("nan"), False, "tail vanishes or is constant")
    flag = "" if np.all(np.diff(tail) <= 1e-14 * tail[0]) else "non-monotone tail"
    slope, icpt = np.polyfit(s, np.log(tail), 1)
    tau = -float(slope)
    if not tau > 0:
        return DecayFit(tau, float(np.exp(icpt)), False, flag or "no decay")
    return DecayFit(tau, float(np.exp(icpt)), flag == "", flag)


def solve_cell(problem, index=(), *, mode="scaled", m=(0.25,), eps=0.1, beta=2.0, A, Y=4.0, max_Y=32.0,
               auto_extend=True, strip_kw=None):
    """Solve one strip problem, doubling ``Y`` until truncation effects are negligible.

    Truncation is judged on the gauge-free quantities ``c+ - c-`` and the two
    far-field fluxes: their change under ``Y -> 2Y`` must stay below the
    fitted ``exp(-tau Y)`` (and a round-off floor).
    """
    if problem not in PROBLEMS:
        raise ValueError(f"unknown cell problem {problem!r}")
    strip_kw = dict(strip_kw or {})

    def at(Yv):
        strip = build_strip(mode, m, eps, beta, Yv, **strip_kw)
        return CellProblemSet(strip, A).get(problem, tuple(index))

    sol = at(Y)
    history = []
    while True:
        fit = fit_decay(sol)
        if not auto_extend:
            break
        nxt = at(2 * sol.Y)
        d_c = abs((nxt.c_plus - nxt.c_minus) - (sol.c_plus - sol.c_minus))
        d_f = max(abs(a - b) for a, b in zip(nxt.far_field_flux, sol.far_field_flux))
        scale = max(1.0, float(np.nanmax(np.abs(sol.decaying))))
        bound = math.exp(-fit.tau * sol.Y) if fit.ok else 0.0
        bound = max(bound, 1e-9 * scale)
        history.append(dict(Y=sol.Y, change_c=d_c, change_flux=d_f, bound=bound))
        if max(d_c, d_f) <= bound or 2 * sol.Y > max_Y:
            break
        sol = nxt
    sol.meta.update(decay=fit, truncation=history)
    return sol


def sheet_limit_error(problem, index=(), *, m=(0.25,), eps, beta=2.0, A, Y=4.0, strip_kw=None):
    """``|grad(u_eps - u)|`` over the scaled strip, ``u`` solved on the flat sheet.

    Both problems use the same vertical faces, so the difference is taken
    cell by cell on the fluid cells of the scaled strip.
    """
    strip_kw = dict(strip_kw or {})
    scaled = build_strip("scaled", m, eps, beta, Y, **strip_kw)
    kw = {k: v for k, v in strip_kw.items() if k == "resolution"}
    flat = build_strip("flat", m, eps, beta, Y, y_faces=scaled.grid.faces[-1], **kw)
    ue = CellProblemSet(scaled, A).get(problem, tuple(index)).values
    u0 = CellProblemSet(flat, A).get(problem, tuple(index)).values
    diff = np.where(scaled.grid.active, ue - u0, np.nan)
    return math.sqrt(strip_gradient_sq(scaled.grid, diff))
