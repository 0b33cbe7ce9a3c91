"""Box domain, alveolus array, perforated grids, strips and region bands."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import TensorGrid, graded_half_faces, symmetric_faces, uniform_faces


def _is_integer(x, tol=1e-9):
    return abs(x - round(x)) <= tol * max(1.0, abs(x))


@dataclass(frozen=True)
class BoxDomain:
    """The box ``]-L/2, L/2[^n`` crossed by the repository plane ``x_n = 0``."""

    n: int = 2
    L: float = 1.0
    sigma_height: float = 0.0

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ValueError(f"dimension must be 2 or 3, got {self.n}")
        if not self.L > 0:
            raise ValueError("side length L must be positive")
        if self.sigma_height != 0.0:
            raise ValueError("the repository plane is fixed at x_n = 0")


@dataclass(frozen=True)
class AlveolusArray:
    """Periodic array of rectangular alveoli ``eps (alpha + M) x ]-eps^beta, eps^beta[``.

    ``m`` holds the half-widths of ``M = prod ]-m_i, m_i[`` in units of the
    periodicity cell.
    """

    m: tuple
    eps: float
    beta: float = 2.0

    def __post_init__(self):
        m = tuple(float(v) for v in np.atleast_1d(self.m))
        object.__setattr__(self, "m", m)
        if not m or any(not (0.0 < v < 0.5) for v in m):
            raise ValueError(f"obstacle half-widths must lie in (0, 1/2), got {m}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if not self.beta > 1:
            raise ValueError("beta must exceed 1")

    @property
    def n(self):
        return len(self.m) + 1

    @property
    def half_height(self):
        return self.eps**self.beta

    def holes_per_axis(self, L):
        k = L / self.eps
        if not _is_integer(k):
            raise ValueError(f"L/eps = {k:.6g} is not an integer")
        return int(round(k))

    def hole_count(self, L):
        return self.holes_per_axis(L) ** (self.n - 1)


def obstacle_measure(array):
    """``|M|``: the (n-1)-dimensional measure of the obstacle cross-section."""
    return float(np.prod([2.0 * m for m in array.m]))


def obstacle_perimeter(array):
    """Perimeter of ``M`` (number of end points, 2, when n = 2)."""
    m = np.asarray(array.m)
    if m.size == 1:
        return 2.0
    return float(2.0 * sum(np.prod(np.delete(2.0 * m, i)) for i in range(m.size)))


def hole_boundary_measure(array):
    """``|dP_eps|`` for ``P_eps = M x ]-eps^(beta-1), eps^(beta-1)[``."""
    return 2.0 * obstacle_measure(array) + 2.0 * array.eps ** (array.beta - 1.0) * obstacle_perimeter(array)


# ---------------------------------------------------------------------------
# perforated grid


@dataclass(frozen=True, eq=False)
class PerforatedGrid:
    """Grid of a box with the alveoli masked out.

    ``grid.hole_id`` numbers holes by their flattened lattice index ``alpha``.
    """

    grid: TensorGrid
    box: BoxDomain
    array: AlveolusArray
    resolution: int
    hole_cells: int
    info: dict = field(default_factory=dict)

    @property
    def hole_count(self):
        return self.array.hole_count(self.box.L)

    def hole_boundary_areas(self):
        """Discrete ``|Gamma_alpha|`` for every hole index."""
        obs = self.grid.obstacle_faces
        return np.bincount(obs.hole, weights=obs.area, minlength=self.hole_count)

    def exact_hole_boundary_area(self):
        a = self.array
        eps = a.eps
        return eps ** (a.n - 1) * obstacle_measure(a) * 2.0 + 2.0 * eps**a.beta * eps ** (a.n - 2) * obstacle_perimeter(a)

    def hole_volume_fraction(self):
        g = self.grid
        return float(g.volumes[~g.active].sum() / self.box.L**self.box.n)


def lateral_faces(box, array, resolution):
    """Uniform lateral faces with every hole edge on a face."""
    if int(resolution) != resolution or resolution < 1:
        raise ValueError("resolution (cells per eps) must be a positive integer")
    N = array.holes_per_axis(box.L)
    for m in array.m:
        # hole edges sit at eps*(alpha +- m); the box edge at -N*eps/2
        off = m * resolution if N % 2 == 0 else (m + 0.5) * resolution
        if not _is_integer(off):
            raise ValueError(
                f"resolution {resolution} does not put the obstacle edge m={m} on a face"
            )
    return uniform_faces(-0.5 * box.L, 0.5 * box.L, array.eps / resolution)


def vertical_faces(box, half_height, hole_cells, *, grading=1.0, h_fine=None, fine_extent=0.0,
                   max_spacing=None, required=()):
    h0 = half_height / hole_cells
    locked = (half_height,)
    req = [abs(r) for r in required if 0 < abs(r) < 0.5 * box.L]
    half = graded_half_faces(0.5 * box.L, h0, locked=locked, required=req, ratio=grading,
                             h_fine=h_fine, fine_extent=fine_extent, h_max=max_spacing)
    return symmetric_faces(half)


def _hole_lattice_ids(centers, eps, N, m):
    alpha = np.rint(centers / eps)
    inside = np.abs(centers - alpha * eps) < m * eps
    return inside, np.mod(alpha.astype(int), N)


def build_perforated_grid(box, array, resolution, *, hole_cells=2, grading=1.0, h_fine=None,
                          fine_extent=0.0, max_spacing=None, required=()):
    """Mask the alveoli ``B_eps`` out of a tensor grid of the box.

    Parameters
    ----------
    resolution : int
        Lateral cells per period ``eps``.
    hole_cells : int
        Vertical cells across the half-thickness ``eps^beta`` (at least 2).
    grading, h_fine, fine_extent, max_spacing : optional
        Geometric vertical grading away from the holes. The default
        (``grading=1``) keeps the vertical spacing uniform.
    required : sequence of float
        Extra vertical coordinates (and their mirror images) that must be faces.
    """
    if box.n != array.n:
        raise ValueError("box and alveolus array dimensions differ")
    N = array.holes_per_axis(box.L)
    if hole_cells < 2:
        raise ValueError("the hole half-thickness eps^beta must span at least 2 vertical cells")
    hh = array.half_height
    if hh >= 0.5 * box.L:
        raise ValueError("hole thickness exceeds the box")
    xf = lateral_faces(box, array, resolution)
    yf = vertical_faces(box, hh, hole_cells, grading=grading, h_fine=h_fine,
                        fine_extent=fine_extent, max_spacing=max_spacing, required=required)
    faces = [xf] * (box.n - 1) + [yf]
    periodic = [True] * (box.n - 1) + [False]
    shape = tuple(f.size - 1 for f in faces)
    active = np.ones(shape, bool)
    hole = np.zeros(shape, dtype=int)
    inside = np.ones(shape, bool)
    for a in range(box.n - 1):
        c = 0.5 * (xf[1:] + xf[:-1])
        ins, ids = _hole_lattice_ids(c, array.eps, N, array.m[a])
        shp = [1] * box.n
        shp[a] = -1
        inside &= ins.reshape(shp)
        hole = hole * N + ids.reshape(shp)
    yc = 0.5 * (yf[1:] + yf[:-1])
    shp = [1] * box.n
    shp[-1] = -1
    inside &= (np.abs(yc) < hh).reshape(shp)
    active[inside] = False
    hole_id = np.where(active, -1, np.broadcast_to(hole, shape))
    grid = TensorGrid(tuple(faces), tuple(periodic), active=active, hole_id=hole_id)
    pg = PerforatedGrid(grid, box, array, int(resolution), int(hole_cells))
    pg.info["holes"] = pg.hole_count
    return pg


def build_box_grid(box, lateral_spacing, vertical_faces_):
    """Unperforated grid used by the limit and interface solvers."""
    xf = uniform_faces(-0.5 * box.L, 0.5 * box.L, lateral_spacing)
    faces = [xf] * (box.n - 1) + [np.asarray(vertical_faces_, float)]
    return TensorGrid(tuple(faces), tuple([True] * (box.n - 1) + [False]))


# ---------------------------------------------------------------------------
# region decomposition


@dataclass(frozen=True)
class RegionDecomposition:
    """Split of the box into ``Omega+`` (above ``b``), ``Omega-`` and the band ``G``."""

    d: float
    eps: float
    b_exact: float
    b: float
    snap_distance: float
    near_degenerate: bool
    plane_index: tuple = None

    def labels(self, y):
        """+1 above the band, -1 below, 0 inside, for vertical coordinates ``y``."""
        y = np.asarray(y)
        return np.where(y > self.b, 1, np.where(y < -self.b, -1, 0))

    @property
    def planes(self):
        return (-self.b, self.b)


def band_half_width(eps, d):
    return d * eps * math.log(1.0 / eps)


def decompose_regions(box, eps, d=2.0, grid=None):
    """Band ``|x_n| < d eps log(1/eps)`` and the outer regions.

    With ``grid`` the planes are snapped to the nearest vertical face and the
    snap distance is recorded.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if d < 2:
        raise ValueError("the band constant d must be at least 2")
    b = band_half_width(eps, d)
    half = 0.5 * box.L
    if b >= half:
        raise ValueError(f"band half-width {b:.4g} reaches the box half-height {half:.4g}")
    b_snap, idx = b, None
    if grid is not None:
        yf = grid.faces[-1]
        j = int(np.argmin(np.abs(yf - b)))
        jm = int(np.argmin(np.abs(yf + b)))
        b_snap = float(yf[j])
        if not (0 < b_snap < half) or abs(yf[jm] + b_snap) > 1e-12 * max(1.0, b_snap):
            raise ValueError("snapped band planes are not symmetric interior faces")
        idx = (jm, j)
    return RegionDecomposition(
        d=float(d), eps=float(eps), b_exact=b, b=b_snap, snap_distance=abs(b_snap - b),
        near_degenerate=bool(b > 0.9 * half), plane_index=idx,
    )


# ---------------------------------------------------------------------------
# strips for cell problems


@dataclass(frozen=True, eq=False)
class StripDomain:
    """Truncated periodic strip ``]-1/2, 1/2[^(n-1) x ]-Y, Y[`` around one obstacle.

    ``mode='scaled'`` removes ``P_eps = M x ]-eps^(beta-1), eps^(beta-1)[``;
    ``mode='flat'`` cuts the faces of ``M x {0}`` (double-sided sheet).
    """

    mode: str
    m: tuple
    eps: float
    beta: float
    Y: float
    grid: TensorGrid

    @property
    def n(self):
        return len(self.m) + 1

    @property
    def obstacle_half_height(self):
        return 0.0 if self.mode == "flat" else self.eps ** (self.beta - 1.0)

    def boundary_measure(self):
        if self.mode == "flat":
            return 2.0 * float(np.prod([2 * v for v in self.m]))
        return hole_boundary_measure(AlveolusArray(self.m, self.eps, self.beta))


def strip_lateral_faces(m, resolution):
    for v in m:
        if not _is_integer((v + 0.5) * resolution):
            raise ValueError(f"resolution {resolution} does not put the obstacle edge m={v} on a face")
    return uniform_faces(-0.5, 0.5, 1.0 / resolution)


def build_strip(mode, m, eps, beta, Y=4.0, resolution=16, *, y_faces=None, hole_cells=2,
                spacing=None, grading=1.0, max_spacing=None, required=()):
    """Build the truncated strip for a cell problem.

    Either pass the vertical faces explicitly (``y_faces``, symmetric, must
    contain ``+-Y`` and the obstacle faces) or let them be generated: spacing
    ``eps^(beta-1)/hole_cells`` near a scaled obstacle (``spacing`` for the
    flat sheet) graded up to ``max_spacing``.
    """
    if mode not in ("scaled", "flat"):
        raise ValueError(f"unknown strip mode {mode!r}")
    m = tuple(float(v) for v in np.atleast_1d(m))
    AlveolusArray(m, eps, beta)  # validates m, eps, beta
    if Y < 2:
        raise ValueError("truncation height Y must be at least 2")
    hh = eps ** (beta - 1.0)
    if mode == "scaled" and hh >= 0.5:
        raise ValueError("scaled obstacle does not fit inside |y_n| < 1/2")
    xf = strip_lateral_faces(m, resolution)
    if y_faces is None:
        if mode == "scaled":
            h0 = hh / hole_cells
            locked = (hh,)
        else:
            h0 = spacing if spacing is not None else 1.0 / resolution
            locked = ()
        half = graded_half_faces(Y, h0, locked=locked, required=[r for r in required if 0 < r < Y],
                                 ratio=grading, h_max=max_spacing)
        yf = symmetric_faces(half)
    else:
        yf = np.asarray(y_faces, float)
        if abs(yf[0] + Y) > 1e-9 or abs(yf[-1] - Y) > 1e-9:
            raise ValueError("explicit strip faces must span [-Y, Y]")
    n = len(m) + 1
    faces = [xf] * (n - 1) + [yf]
    periodic = [True] * (n - 1) + [False]
    shape = tuple(f.size - 1 for f in faces)
    lat = np.ones(shape[:-1], bool)
    for a, v in enumerate(m):
        c = 0.5 * (xf[1:] + xf[:-1])
        shp = [1] * (n - 1)
        shp[a] = -1
        lat = lat & (np.abs(c) < v).reshape(shp)
    yc = 0.5 * (yf[1:] + yf[:-1])
    if mode == "scaled":
        if not np.any(np.isclose(yf, hh, rtol=0, atol=1e-12 * max(1, hh))):
            raise ValueError("strip faces miss the obstacle boundary")
        active = ~(lat[..., None] & (np.abs(yc) < hh))
        grid = TensorGrid(tuple(faces), tuple(periodic), active=active)
    else:
        j0 = np.flatnonzero(np.isclose(yf, 0.0, atol=1e-14))
        if j0.size != 1:
            raise ValueError("flat strip needs a face at y_n = 0")
        cut_shape = shape[:-1] + (shape[-1] - 1,)
        cut = np.full(cut_shape, -1, dtype=int)
        cut[..., int(j0[0]) - 1] = np.where(lat, 0, -1)
        grid = TensorGrid(tuple(faces), tuple(periodic), cut=(None,) * (n - 1) + (cut,))
    return StripDomain(mode, m, float(eps), float(beta), float(Y), grid)
