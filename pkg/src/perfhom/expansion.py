"""Matched expansions, error norms and convergence-rate fits.

Candidate fields (limit, outer, corrector) live on coarse unperforated grids
and are sampled onto the fine perforated reference grid. Sampling is linear
along each axis, periodic laterally, and never crosses an interface plane:
inside every region between planes the vertical interpolation only uses
cells of that region (linear extrapolation at the region ends).

Cell solutions are mapped cell by cell: the strip grid is the reference
grid's band faces divided by ``eps``, so ``u(x / eps)`` needs no
interpolation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fv import gradient_seminorm_sq, l2_norm_sq


# ---------------------------------------------------------------------------
# sampling


def _linear_weights(src, dst):
    """Sparse linear (extrapolating) interpolation from sorted ``src`` to ``dst``."""
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.size == 1:
        return np.zeros(dst.size, int), np.zeros(dst.size, int), np.ones(dst.size), np.zeros(dst.size)
    j = np.clip(np.searchsorted(src, dst) - 1, 0, src.size - 2)
    t = (dst - src[j]) / (src[j + 1] - src[j])
    return j, j + 1, 1.0 - t, t


def axis_weights(src, dst, *, period=None, breaks=(), tol=1e-12):
    """Matrix mapping values at ``src`` points to ``dst`` points along one axis.

    ``period`` enables periodic wrap; ``breaks`` are coordinates that split
    the axis into regions interpolated independently.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    rows, cols, vals = [], [], []
    if period is not None:
        ext = np.concatenate([src[-1:] - period, src, src[:1] + period])
        idx = np.concatenate([[src.size - 1], np.arange(src.size), [0]])
        x0 = src[0] - 0.5 * (src[0] - ext[0])
        d = (dst - x0) % period + x0
        a, b, wa, wb = _linear_weights(ext, d)
        k = np.arange(dst.size)
        rows += [k, k]
        cols += [idx[a], idx[b]]
        vals += [wa, wb]
    else:
        edges = np.concatenate([[-np.inf], np.sort(np.asarray(breaks, float)), [np.inf]])
        for lo, hi in zip(edges[:-1], edges[1:]):
            sm = (src > lo + tol) & (src < hi - tol)
            dm = (dst > lo + tol) & (dst < hi - tol)
            if not dm.any():
                continue
            if not sm.any():
                raise ValueError(f"no source points in region ({lo:.4g}, {hi:.4g})")
            sidx = np.flatnonzero(sm)
            didx = np.flatnonzero(dm)
            a, b, wa, wb = _linear_weights(src[sidx], dst[didx])
            rows += [didx, didx]
            cols += [sidx[a], sidx[b]]
            vals += [wa, wb]
    rows, cols, vals = (np.concatenate(x) for x in (rows, cols, vals))
    return sp.csr_matrix((vals, (rows, cols)), shape=(dst.size, src.size))


class GridSampler:
    """Tensor-product sampler from a candidate grid to reference cell centres."""

    def __init__(self, source, target, planes=(), *, stride=1):
        self.source = source
        self.target = target
        self.planes = tuple(planes)
        self.stride = stride
        mats = []
        for a in range(source.ndim):
            src = source.centers[a]
            keep = self._subsample(src, a)
            per = None
            if source.periodic[a]:
                per = source.faces[a][-1] - source.faces[a][0]
            W = axis_weights(src[keep], target.centers[a], period=per,
                             breaks=self.planes if a == source.ndim - 1 else ())
            sel = sp.csr_matrix((np.ones(keep.size), (np.arange(keep.size), keep)), shape=(keep.size, src.size))
            mats.append((W @ sel).tocsr())
        self.mats = mats

    def _subsample(self, src, axis):
        if self.stride == 1:
            return np.arange(src.size)
        if axis < self.source.ndim - 1:
            return np.arange(0, src.size, self.stride)
        # keep every other cell inside each region, always including the region ends
        edges = np.concatenate([[-np.inf], np.sort(self.planes), [np.inf]])
        keep = []
        for lo, hi in zip(edges[:-1], edges[1:]):
            idx = np.flatnonzero((src > lo) & (src < hi))
            if idx.size:
                sub = idx[:: self.stride]
                if sub[-1] != idx[-1]:
                    sub = np.append(sub, idx[-1])
                keep.append(sub)
        return np.concatenate(keep)

    def __call__(self, values):
        """Sample a field of source-grid shape; returns target-grid shape."""
        out = np.asarray(values, dtype=float)
        for a, W in enumerate(self.mats):
            out = _sparse_apply(W, out, a)
        return out


def _sparse_apply(W, arr, axis):
    moved = np.moveaxis(arr, axis, 0)
    flat = moved.reshape(moved.shape[0], -1)
    res = W @ flat
    return np.moveaxis(res.reshape((W.shape[0],) + moved.shape[1:]), 0, axis)


def region_derivative(grid, values, axis, planes=()):
    """Cell-centre derivative along ``axis``; never differences across ``planes``.

    Central (second-order on non-uniform spacing) inside each region,
    one-sided at region ends; periodic axes wrap.
    """
    v = np.asarray(values, dtype=float)
    x = grid.centers[axis]
    if grid.periodic[axis]:
        per = grid.faces[axis][-1] - grid.faces[axis][0]
        xe = np.concatenate([x[-1:] - per, x, x[:1] + per])
        ve = np.concatenate([np.take(v, [-1], axis), v, np.take(v, [0], axis)], axis=axis)
        d = np.gradient(ve, xe, axis=axis, edge_order=1)
        return np.take(d, np.arange(1, x.size + 1), axis=axis)
    out = np.empty_like(v)
    edges = np.concatenate([[-np.inf], np.sort(np.asarray(planes, float)), [np.inf]])
    for lo, hi in zip(edges[:-1], edges[1:]):
        idx = np.flatnonzero((x > lo) & (x < hi))
        if idx.size == 0:
            continue
        seg = np.take(v, idx, axis=axis)
        if idx.size == 1:
            d = np.zeros_like(seg)
        else:
            d = np.gradient(seg, x[idx], axis=axis, edge_order=1)
        sl = [slice(None)] * v.ndim
        sl[axis] = idx
        out[tuple(sl)] = d
    return out


# ---------------------------------------------------------------------------
# cell solutions on the reference grid


@dataclass
class StripMap:
    """Cell-by-cell map from reference cells in the band to strip cells."""

    ref: object
    strip: object
    eps: float
    resolution: int
    j0: int

    @classmethod
    def build(cls, ref_grid, strip, eps, resolution):
        yf = ref_grid.faces[-1]
        j0 = int(np.argmin(np.abs(yf + eps * strip.Y)))
        sf = strip.grid.faces[-1]
        seg = yf[j0 : j0 + sf.size] / eps
        if seg.size != sf.size or np.max(np.abs(seg - sf)) > 1e-9 * max(1.0, strip.Y):
            raise ValueError("strip faces do not match the reference grid band")
        return cls(ref_grid, strip, eps, int(resolution), j0)

    def lateral_index(self, axis):
        x = self.ref.centers[axis]
        t = (x / self.eps + 0.5) % 1.0
        return np.minimum((t * self.resolution).astype(int), self.resolution - 1)

    def __call__(self, strip_values):
        """Strip field on reference cells (zero outside the strip, NaN in holes)."""
        g = self.ref
        out = np.zeros(g.shape)
        ny = self.strip.grid.shape[-1]
        idx = [self.lateral_index(a) for a in range(g.ndim - 1)]
        sv = np.asarray(strip_values, dtype=float)
        sub = sv[np.ix_(*idx, np.arange(ny))]
        sl = [slice(None)] * (g.ndim - 1) + [slice(self.j0, self.j0 + ny)]
        out[tuple(sl)] = sub
        return np.where(g.active, out, np.nan)


# ---------------------------------------------------------------------------
# expansions


@dataclass
class ExpansionBundle:
    """Everything needed to assemble the expansions on the reference grid.

    ``outer``, ``corrector`` are :class:`~perfhom.micro.SolveResult` on
    candidate grids; ``cells`` is a :class:`~perfhom.cells.CellProblemSet`
    on a strip matching ``ref_grid``.
    """

    ref_grid: object
    outer: object
    corrector: object
    cells: object
    regions: object
    eps: float
    resolution: int
    velocity: object = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        missing = [k for k in ("outer", "corrector", "cells", "regions") if getattr(self, k) is None]
        if missing:
            raise ValueError(f"expansion bundle lacks {', '.join(missing)}")
        self.n = self.ref_grid.ndim
        self.map = StripMap.build(self.ref_grid, self.cells.strip, self.eps, self.resolution)
        planes = self.regions.planes
        self.sampler = GridSampler(self.outer.grid, self.ref_grid, planes)
        self.coarse_sampler = GridSampler(self.outer.grid, self.ref_grid, planes, stride=2)
        if self.corrector.grid.shape != self.outer.grid.shape:
            raise ValueError("outer and corrector must share a grid")
        yc = self.ref_grid.centers[-1]
        self.band = np.broadcast_to(self.ref_grid._bcast(np.abs(yc) < self.regions.b, self.n - 1),
                                    self.ref_grid.shape)
        self._cell_cache = {}

    @property
    def log_factor(self):
        return self.regions.d * self.eps * math.log(1.0 / self.eps)

    def cell(self, problem, index=()):
        key = (problem, tuple(index))
        if key not in self._cell_cache:
            vals = self.cells.get(problem, tuple(index)).values
            self._cell_cache[key] = np.nan_to_num(self.map(vals))
        return self._cell_cache[key]

    def source_value(self, k):
        return float(self.outer.transient.scales[k])

    def _sample(self, res, k, sampler=None):
        return (sampler or self.sampler)(res.transient.full(k))

    def _derivatives(self, res, k, order=1, extra=None):
        g = res.grid
        planes = self.regions.planes
        v = res.transient.full(k)
        if extra is not None:
            v = v + extra
        first = [region_derivative(g, v, a, planes) for a in range(g.ndim)]
        if order == 1:
            return [self.sampler(d) for d in first]
        second = [[self.sampler(region_derivative(g, first[a], b, planes)) for b in range(g.ndim)]
                  for a in range(g.ndim)]
        return second

    def _velocity(self, t):
        if self.velocity is None:
            return None
        g = self.ref_grid
        out = []
        for a in range(g.ndim):
            fv = self.velocity.face_normal(g, a, t, self.eps)
            lo = [slice(None)] * g.ndim
            hi = [slice(None)] * g.ndim
            lo[a] = slice(0, -1)
            hi[a] = slice(1, None)
            out.append(0.5 * (fv[tuple(lo)] + fv[tuple(hi)]))
        return out

    def assemble_H(self, k):
        """``phi0 + eps (chi^k d_k phi0 + w Phi)`` in the band, ``phi0`` outside."""
        phi0 = self._sample(self.outer, k)
        grads = self._derivatives(self.outer, k)
        band = sum(self.cell("chi-k", (j + 1,)) * grads[j] for j in range(self.n))
        band = band + self.cell("w") * self.source_value(k)
        return np.where(self.band, phi0 + self.eps * band, phi0)

    def assemble_F(self, k):
        """Second-order expansion: ``phi0 + dlog phi1`` plus band correctors."""
        lf = self.log_factor
        phi0 = self._sample(self.outer, k)
        phi1 = self._sample(self.corrector, k)
        base = phi0 + lf * phi1
        aug = self._derivatives(self.outer, k, extra=lf * self.corrector.transient.full(k))
        band1 = sum(self.cell("chi-k", (j + 1,)) * aug[j] for j in range(self.n))
        Phi = self.source_value(k)
        band1 = band1 + self.cell("w") * Phi
        hess = self._derivatives(self.outer, k, order=2)
        band2 = sum(self.cell("chi-lm", (a + 1, b + 1)) * hess[a][b] for a in range(self.n) for b in range(self.n))
        vel = self._velocity(self.outer.times[k])
        if vel is not None:
            g0 = self._derivatives(self.outer, k)
            band2 = band2 + sum(self.cell("w-ij", (i + 1, j + 1)) * g0[i] * vel[j]
                                for i in range(self.n) for j in range(self.n))
            band2 = band2 + Phi * sum(self.cell("z-k", (j + 1,)) * vel[j] for j in range(self.n))
        eps = self.eps
        return np.where(self.band, base + eps * band1 + eps**2 * band2, base)

    def interface_mismatch(self, k, which="F"):
        """Largest jump of the assembled expansion across the planes ``+-b``."""
        f = self.assemble_F(k) if which == "F" else self.assemble_H(k)
        g = self.ref_grid
        out = 0.0
        for j in self.regions_plane_faces():
            lo = np.take(f, j - 1, axis=-1)
            hi = np.take(f, j, axis=-1)
            out = max(out, float(np.nanmax(np.abs(hi - lo))))
        return out

    def regions_plane_faces(self):
        yf = self.ref_grid.faces[-1]
        return [int(np.argmin(np.abs(yf - p))) for p in self.regions.planes]

    def interpolation_error(self, k):
        """Richardson estimate of the outer-field sampling error (``L2`` on the reference grid)."""
        fine = self._sample(self.outer, k)
        coarse = self._sample(self.outer, k, self.coarse_sampler)
        return math.sqrt(l2_norm_sq(self.ref_grid, (fine - coarse) / 3.0))


# ---------------------------------------------------------------------------
# norms and rates


@dataclass(frozen=True)
class ErrorNorms:
    l2h1: float
    linf_l2: float


def error_norms(reference, candidate, *, broken=(), times=None, mask=None):
    """``L2(0,T;H1)`` and ``L_inf(0,T;L2)`` norms of ``reference - candidate``.

    ``reference`` is a :class:`~perfhom.micro.SolveResult` on the reference
    grid; ``candidate`` a sequence (or callable ``k -> field``) of fields on
    the same grid and timeline. ``broken`` lists vertical faces excluded from
    the gradient (the ``H1`` norm is broken there). The time integral uses
    the right-endpoint rule of implicit Euler. ``mask`` restricts both norms
    to a cell region (pass the faces bounding it in ``broken``).
    """
    g = reference.grid
    t = reference.times
    if times is not None and (len(times) != len(t) or np.max(np.abs(np.asarray(times) - t)) > 1e-12):
        raise ValueError("reference and candidate timelines differ")
    get = candidate if callable(candidate) else (lambda k: candidate[k])
    acc = 0.0
    linf = 0.0
    for k in range(len(t)):
        e = reference.transient.full(k) - np.asarray(get(k))
        e = np.where(g.active if mask is None else g.active & mask, e, 0.0)
        l2 = l2_norm_sq(g, e)
        linf = max(linf, math.sqrt(l2))
        if k > 0:
            acc += (t[k] - t[k - 1]) * (l2 + gradient_seminorm_sq(g, e, broken))
    return ErrorNorms(math.sqrt(acc), linf)


@dataclass(frozen=True)
class RateFit:
    exponent: float
    r2: float
    flag: str = ""

    @property
    def ok(self):
        return self.flag == ""


def rate_abscissa(eps):
    eps = np.asarray(eps, dtype=float)
    return eps * np.log(1.0 / eps)


def fit_rate(eps, errors, model="eps-log"):
    """Least-squares slope of ``log error`` against ``log(eps log(1/eps))`` (or ``log eps``)."""
    eps = np.asarray(eps, dtype=float)
    err = np.asarray(errors, dtype=float)
    if eps.size < 3:
        raise ValueError("a rate fit needs at least 3 eps values")
    if np.any(err <= 0) or not np.all(np.isfinite(err)):
        raise ValueError("errors must be positive and finite")
    order = np.argsort(-eps)
    eps, err = eps[order], err[order]
    x = np.log(rate_abscissa(eps) if model == "eps-log" else eps)
    y = np.log(err)
    slope, icpt = np.polyfit(x, y, 1)
    pred = slope * x + icpt
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - pred) ** 2)) / ss if ss > 0 else 0.0
    flag = "" if np.all(np.diff(err) < 0) else "errors do not decrease"
    return RateFit(float(slope), r2, flag)


@dataclass
class RateReport:
    """Per-eps error table with fitted exponents."""

    eps: list
    errors: dict
    fits: dict = field(default_factory=dict)
    reference_exponent: float = None

    def fit_all(self):
        for name, vals in self.errors.items():
            try:
                self.fits[name] = fit_rate(self.eps, vals)
            except ValueError as exc:
                self.fits[name] = RateFit(float("nan"), float("nan"), str(exc))
        return self
