"""Structured tensor-product grids with masked cells and cut faces.

A :class:`TensorGrid` is the common discretization substrate for the
microscopic solver (cells inside alveoli are masked out), the limit solvers
(no masking) and the strip cell problems (masked scaled obstacle, or a sheet
of cut faces for the flat obstacle).

Axis ``ndim - 1`` is always the vertical axis ``x_n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

GEO_TOL = 1e-12


def _check_faces(faces):
    faces = np.asarray(faces, dtype=float)
    if faces.ndim != 1 or faces.size < 2:
        raise ValueError("an axis needs at least two face coordinates")
    if np.any(np.diff(faces) <= 0):
        raise ValueError("face coordinates must be strictly increasing")
    return faces


@dataclass(frozen=True)
class ObstacleFaces:
    """Faces separating an active cell from an obstacle.

    ``sign`` is +1 when the obstacle lies on the high side of the cell along
    ``axis`` (the outward normal of the cell, pointing into the obstacle, is
    ``+e_axis``) and -1 otherwise.
    """

    cell: np.ndarray
    axis: np.ndarray
    sign: np.ndarray
    area: np.ndarray
    hole: np.ndarray
    center: np.ndarray

    def __len__(self):
        return int(self.cell.size)

    def normal(self, ndim):
        """Unit normals pointing from the fluid into the obstacle, shape (k, ndim)."""
        nrm = np.zeros((len(self), ndim))
        nrm[np.arange(len(self)), self.axis] = self.sign
        return nrm


@dataclass(frozen=True, eq=False)
class TensorGrid:
    """Cell-centred tensor grid.

    Parameters
    ----------
    faces : tuple of 1-D arrays
        Face coordinates along every axis.
    periodic : tuple of bool
        Periodic wrap per axis.
    active : bool array, optional
        Cell mask; inactive cells are obstacle (hole) cells.
    hole_id : int array, optional
        Obstacle index for inactive cells, -1 for active cells.
    cut : tuple, optional
        Per axis either ``None`` or an int array of connection shape holding
        the obstacle index of a double-sided internal sheet (-1 = open face).
    """

    faces: tuple
    periodic: tuple
    active: np.ndarray = None
    hole_id: np.ndarray = None
    cut: tuple = None
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        faces = tuple(_check_faces(f) for f in self.faces)
        object.__setattr__(self, "faces", faces)
        if len(self.periodic) != len(faces):
            raise ValueError("periodic flags must match the number of axes")
        object.__setattr__(self, "periodic", tuple(bool(p) for p in self.periodic))
        shape = self.shape
        active = np.ones(shape, bool) if self.active is None else np.asarray(self.active, bool)
        if active.shape != shape:
            raise ValueError(f"mask shape {active.shape} does not match grid shape {shape}")
        object.__setattr__(self, "active", active)
        if self.hole_id is None:
            hole = np.full(shape, -1, dtype=int)
            hole[~active] = 0
        else:
            hole = np.asarray(self.hole_id, dtype=int)
        object.__setattr__(self, "hole_id", hole)
        cut = self.cut if self.cut is not None else (None,) * self.ndim
        cut = tuple(None if c is None else np.asarray(c, dtype=int) for c in cut)
        for a, c in enumerate(cut):
            if c is not None and c.shape != self.conn_shape(a):
                raise ValueError(f"cut array on axis {a} has wrong shape")
        object.__setattr__(self, "cut", cut)

    # -- basic geometry -------------------------------------------------
    @property
    def ndim(self):
        return len(self.faces)

    @property
    def shape(self):
        return tuple(f.size - 1 for f in self.faces)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @cached_property
    def centers(self):
        return tuple(0.5 * (f[1:] + f[:-1]) for f in self.faces)

    @cached_property
    def widths(self):
        return tuple(np.diff(f) for f in self.faces)

    @cached_property
    def volumes(self):
        vol = np.ones(self.shape)
        for a, w in enumerate(self.widths):
            vol = vol * self._bcast(w, a)
        return vol

    def _bcast(self, arr, axis):
        shp = [1] * self.ndim
        shp[axis] = -1
        return np.asarray(arr).reshape(shp)

    def mesh(self):
        """Cell-centre coordinate arrays, each of grid shape."""
        return np.meshgrid(*self.centers, indexing="ij")

    @cached_property
    def flat_index(self):
        return np.arange(self.size).reshape(self.shape)

    @cached_property
    def unknown_index(self):
        """Map from flat cell index to unknown index (-1 for inactive cells)."""
        idx = np.full(self.size, -1, dtype=int)
        act = self.active.ravel()
        idx[act] = np.arange(int(act.sum()))
        return idx

    @property
    def n_active(self):
        return int(self.active.sum())

    # -- connections ------------------------------------------------------
    def conn_shape(self, axis):
        shp = list(self.shape)
        if not self.periodic[axis]:
            shp[axis] -= 1
        return tuple(shp)

    def connections(self, axis):
        """Flat indices of the low and high cell of every face along ``axis``.

        Face ``j`` connects cell ``j`` and ``(j + 1) % n`` so the periodic wrap
        face, when present, is the last one.
        """
        key = ("conn", axis)
        if key not in self._cache:
            idx = self.flat_index
            hi = np.roll(idx, -1, axis=axis)
            n = self.conn_shape(axis)[axis]
            sl = [slice(None)] * self.ndim
            sl[axis] = slice(0, n)
            self._cache[key] = (idx[tuple(sl)], hi[tuple(sl)])
        return self._cache[key]

    def conn_area(self, axis):
        area = np.ones(self.conn_shape(axis))
        for b, w in enumerate(self.widths):
            if b == axis:
                continue
            area = area * self._bcast(w, b)
        return area

    def conn_halves(self, axis):
        """Centre-to-face distances on the low and high side of every face."""
        w = self.widths[axis]
        n = self.conn_shape(axis)[axis]
        lo = 0.5 * w[:n]
        hi = 0.5 * np.roll(w, -1)[:n]
        return self._bcast(lo, axis), self._bcast(hi, axis)

    def conn_coordinate(self, axis):
        f = self.faces[axis]
        n = self.conn_shape(axis)[axis]
        return f[1 : n + 1]

    def conn_center(self, axis):
        """Coordinates of face centres along ``axis``, list of arrays of connection shape."""
        out = []
        shp = self.conn_shape(axis)
        for b in range(self.ndim):
            c = self.conn_coordinate(axis) if b == axis else self.centers[b]
            out.append(np.broadcast_to(self._bcast(c, b), shp))
        return out

    def open_connection(self, axis):
        """Mask of faces joining two active cells without a cut sheet."""
        lo, hi = self.connections(axis)
        act = self.active.ravel()
        ok = act[lo] & act[hi]
        if self.cut[axis] is not None:
            ok &= self.cut[axis] < 0
        return ok

    def boundary_faces(self, axis, side):
        """Cells adjoining the low (side=-1) or high (side=+1) boundary of a non-periodic axis."""
        if self.periodic[axis]:
            raise ValueError("periodic axes have no boundary faces")
        sl = [slice(None)] * self.ndim
        sl[axis] = 0 if side < 0 else -1
        cells = self.flat_index[tuple(sl)]
        area = (self.volumes / self._bcast(self.widths[axis], axis))[tuple(sl)]
        half = 0.5 * self.widths[axis][0 if side < 0 else -1]
        return cells.ravel(), area.ravel(), half

    @cached_property
    def obstacle_faces(self):
        cells, axes, signs, areas, holes, centers = [], [], [], [], [], []
        act = self.active.ravel()
        hid = self.hole_id.ravel()
        for a in range(self.ndim):
            lo, hi = self.connections(a)
            area = self.conn_area(a)
            cc = np.stack([c.ravel() for c in self.conn_center(a)], axis=1)
            lo, hi, area = lo.ravel(), hi.ravel(), area.ravel()
            m1 = act[lo] & ~act[hi]
            m2 = ~act[lo] & act[hi]
            for m, cell, other, sgn in ((m1, lo, hi, 1), (m2, hi, lo, -1)):
                cells.append(cell[m])
                axes.append(np.full(m.sum(), a))
                signs.append(np.full(m.sum(), sgn))
                areas.append(area[m])
                holes.append(hid[other[m]])
                centers.append(cc[m])
            if self.cut[a] is not None:
                cut = self.cut[a].ravel()
                m = (cut >= 0) & act[lo] & act[hi]
                for cell, sgn in ((lo, 1), (hi, -1)):
                    cells.append(cell[m])
                    axes.append(np.full(m.sum(), a))
                    signs.append(np.full(m.sum(), sgn))
                    areas.append(area[m])
                    holes.append(cut[m])
                    centers.append(cc[m])
        return ObstacleFaces(
            cell=np.concatenate(cells).astype(int),
            axis=np.concatenate(axes).astype(int),
            sign=np.concatenate(signs).astype(int),
            area=np.concatenate(areas),
            hole=np.concatenate(holes).astype(int),
            center=np.concatenate(centers) if centers else np.zeros((0, self.ndim)),
        )

    def face_index(self, axis, coordinate, tol=1e-9):
        """Index ``j`` with ``faces[axis][j] == coordinate``, or ``None``."""
        f = self.faces[axis]
        j = int(np.argmin(np.abs(f - coordinate)))
        scale = max(1.0, abs(coordinate))
        return j if abs(f[j] - coordinate) <= tol * scale else None


def uniform_faces(lo, hi, h):
    n = int(round((hi - lo) / h))
    if n < 1 or abs(n * h - (hi - lo)) > 1e-9 * max(1.0, hi - lo):
        raise ValueError(f"spacing {h} does not divide [{lo}, {hi}]")
    return lo + (hi - lo) * np.arange(n + 1) / n


def graded_half_faces(extent, h0, *, locked=(), required=(), ratio=1.0, h_fine=None,
                      fine_extent=0.0, h_max=None):
    """Face coordinates on ``[0, extent]`` marching outward from 0.

    The spacing starts at ``h0``, is held at ``h0`` up to the last ``locked``
    coordinate, then grows geometrically by ``ratio`` up to ``h_fine`` while
    inside ``fine_extent`` and up to ``h_max`` beyond. Every coordinate in
    ``locked``/``required`` becomes a face; cells near a required face are
    stretched by at most 1.5x or split in two to avoid slivers.
    """
    if h0 <= 0 or extent <= 0:
        raise ValueError("extent and initial spacing must be positive")
    h_fine = h0 if h_fine is None else max(h_fine, h0)
    h_max = h_fine if h_max is None else max(h_max, h_fine)
    stops = sorted({float(s) for s in tuple(locked) + tuple(required) if 0 < s < extent} | {extent})
    hold = max(locked) if len(locked) else 0.0
    out = [0.0]
    cur, h = 0.0, h0
    for stop in stops:
        while stop - cur > GEO_TOL * max(1.0, extent):
            gap = stop - cur
            if gap <= 1.5 * h + GEO_TOL:
                nxt = stop
            elif gap < 2.0 * h:
                nxt = cur + 0.5 * gap
            else:
                nxt = cur + h
            out.append(nxt)
            cur = nxt
            if cur >= hold - GEO_TOL:
                cap = h_fine if cur < fine_extent else h_max
                h = min(h * ratio, cap)
        out[-1] = stop
    return np.asarray(out)


def symmetric_faces(half_faces):
    half = np.asarray(half_faces)
    return np.concatenate([-half[:0:-1], half])
