"""Cell-centred finite-volume operator for convection-diffusion on tensor grids.

Sign conventions
----------------
The transport flux is ``J = -A grad(phi) + v phi``. Row ``i`` of the assembled
operator is the total outward transport flux of cell ``i`` (times face area),
so the semi-discrete balance reads ``omega V dphi/dt + K phi + c = s``.

Diffusion uses two-point fluxes with the harmonic mean of the normal
diffusivities; convection is fully upwinded. Off-diagonal diffusion entries
are collected in a separate cross-flux matrix so time steppers can lag them.

Interfaces are horizontal faces carrying a prescribed value jump ``g0`` and
a prescribed jump ``g1`` of ``e_n . (A grad(phi) - v phi)``. The two one-sided
traces of an interface face are eliminated in closed form, so the value jump
holds exactly and the flux jump holds to round-off. With ``g0 = g1 = 0`` the
interface face reduces to the ordinary face stencil.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp


class SolverError(RuntimeError):
    """A linear solve or time step failed."""


class AssemblyError(SolverError):
    """The discrete operator could not be assembled."""


class StagnationError(SolverError):
    """The iterative linear solver did not reach its tolerance."""


@dataclass
class Interface:
    """Horizontal interface on vertical face ``index``.

    ``value_coef`` and ``flux_coef`` are per unit source scale; they may be
    scalars or arrays over the lateral cells.
    """

    index: int
    value_coef: object = 0.0
    flux_coef: object = 0.0


@dataclass
class BoundarySide:
    """Condition on one side of the vertical axis: ``'dirichlet'`` (value 0) or ``'flux'`` (zero total flux)."""

    kind: str = "flux"
    value: float = 0.0

    def __post_init__(self):
        if self.kind not in ("dirichlet", "flux"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")


def transmissibility(area, d_lo, a_lo, d_hi, a_hi):
    return area / (d_lo / a_lo + d_hi / a_hi)


class Operator:
    """Assembled steady transport operator on the active cells of a grid.

    Parameters
    ----------
    grid : TensorGrid
    diffusion : array, shape ``grid.shape + (n, n)``
    velocity : list of arrays or None
        Normal velocities on all faces of each axis (``n_a + 1`` along the axis).
    bottom, top : BoundarySide
        Conditions on the vertical boundaries (ignored for periodic axes).
    interfaces : sequence of Interface
    """

    def __init__(self, grid, diffusion, velocity=None, bottom=None, top=None, interfaces=()):
        self.grid = grid
        self.n = grid.ndim
        diffusion = np.asarray(diffusion, dtype=float)
        if diffusion.shape != grid.shape + (self.n, self.n):
            raise AssemblyError(f"diffusion array has shape {diffusion.shape}")
        self.diffusion = diffusion
        self.velocity = velocity
        self.bottom = bottom or BoundarySide("flux")
        self.top = top or BoundarySide("flux")
        self.interfaces = list(interfaces)
        self.uidx = grid.unknown_index
        self.n_unknowns = grid.n_active
        for itf in self.interfaces:
            if not 0 < itf.index < grid.shape[-1]:
                raise AssemblyError(f"interface face {itf.index} is not an interior vertical face")
        self._build()

    # ------------------------------------------------------------------
    def _face_velocity(self, axis):
        """Velocity times area on the connection faces of ``axis``."""
        if self.velocity is None:
            return None
        g = self.grid
        u = np.asarray(self.velocity[axis], dtype=float)
        n = g.conn_shape(axis)[axis]
        sl = [slice(None)] * self.n
        sl[axis] = slice(1, n + 1)
        return u[tuple(sl)] * g.conn_area(axis)

    def _itf_conn(self):
        return {itf.index - 1: itf for itf in self.interfaces}

    def _build(self):
        g = self.grid
        rows, cols, vals = [], [], []
        nu = self.n_unknowns
        uid = self.uidx
        itf_rows = self._itf_conn()
        self._conn = []
        for a in range(self.n):
            lo, hi = g.connections(a)
            open_ = g.open_connection(a)
            # interface faces keep the ordinary stencil; their jumps enter through const()
            regular = open_
            if a == self.n - 1:
                for j in itf_rows:
                    if not np.all(open_[..., j]):
                        raise AssemblyError("interface faces must join active cells")
            area = g.conn_area(a)
            dlo, dhi = g.conn_halves(a)
            a_lo = self.diffusion[..., a, a].ravel()[lo]
            a_hi = self.diffusion[..., a, a].ravel()[hi]
            T = transmissibility(area, dlo, a_lo, dhi, a_hi)
            u = self._face_velocity(a)
            self._conn.append(dict(lo=lo, hi=hi, open=open_, regular=regular, T=T, u=u,
                                   dlo=np.broadcast_to(dlo, T.shape), dhi=np.broadcast_to(dhi, T.shape),
                                   a_lo=a_lo, a_hi=a_hi, area=area))
            m = regular
            L, H, Tm = uid[lo[m]], uid[hi[m]], T[m]
            # flux F = -T (phi_H - phi_L) + up phi_L + un phi_H, added to row L, subtracted from row H
            up = np.zeros_like(Tm) if u is None else np.maximum(u[m], 0.0)
            un = np.zeros_like(Tm) if u is None else np.minimum(u[m], 0.0)
            rows += [L, L, H, H]
            cols += [L, H, L, H]
            vals += [Tm + up, -Tm + un, -Tm - up, Tm - un]
        # vertical boundaries
        self._bnd = []
        a = self.n - 1
        if not g.periodic[a]:
            for side, bc in ((-1, self.bottom), (1, self.top)):
                cells, area, half = g.boundary_faces(a, side)
                act = g.active.ravel()[cells]
                cells, area = cells[act], area[act]
                u = None
                if self.velocity is not None:
                    full = np.asarray(self.velocity[a])
                    sl = [slice(None)] * self.n
                    sl[a] = 0 if side < 0 else -1
                    u = (full[tuple(sl)].ravel()[act]) * side * area  # outward
                dval = self.diffusion[..., a, a].ravel()[cells]
                Tb = area * dval / half
                rec = dict(side=side, bc=bc, cells=cells, area=area, T=Tb, u=u)
                self._bnd.append(rec)
                if bc.kind == "dirichlet":
                    U = uid[cells]
                    out = np.zeros_like(Tb) if u is None else np.maximum(u, 0.0)
                    rows.append(U)
                    cols.append(U)
                    vals.append(Tb + out)
        rows = np.concatenate(rows) if rows else np.zeros(0, int)
        cols = np.concatenate(cols) if cols else np.zeros(0, int)
        vals = np.concatenate(vals) if vals else np.zeros(0)
        self.K = sp.csr_matrix((vals, (rows, cols)), shape=(nu, nu))
        self.C = self._cross_matrix()

    # ------------------------------------------------------------------
    def _cross_matrix(self):
        """Flux divergence of off-diagonal diffusion terms (zero for diagonal tensors)."""
        g = self.grid
        D = self.diffusion
        off = D.copy()
        for a in range(self.n):
            off[..., a, a] = 0.0
        nu = self.n_unknowns
        if not np.any(off):
            return sp.csr_matrix((nu, nu))
        # cell gradient operators G_b: unknown -> d/dx_b at cell centres (central where possible)
        grads = [self._cell_gradient(b) for b in range(self.n)]
        uid = self.uidx
        rows, cols, vals = [], [], []
        for a, conn in enumerate(self._conn):
            m = conn["regular"]
            lo, hi = conn["lo"][m], conn["hi"][m]
            area = np.broadcast_to(conn["area"], m.shape)[m]
            L, H = uid[lo], uid[hi]
            for b in range(self.n):
                if b == a:
                    continue
                coef = 0.5 * (off[..., a, b].ravel()[lo] + off[..., a, b].ravel()[hi])
                if not np.any(coef):
                    continue
                # face gradient = average of the two cell gradients
                Gf = 0.5 * (grads[b][L] + grads[b][H])
                F = sp.diags(-coef * area) @ Gf  # flux from L to H
                Lmat = sp.csr_matrix((np.ones(L.size), (L, np.arange(L.size))), shape=(nu, L.size))
                Hmat = sp.csr_matrix((np.ones(H.size), (H, np.arange(H.size))), shape=(nu, H.size))
                rows.append((Lmat - Hmat) @ F)
        if not rows:
            return sp.csr_matrix((nu, nu))
        return sum(rows[1:], rows[0]).tocsr()

    def _cell_gradient(self, b):
        """Sparse map from unknowns to the ``x_b`` derivative at active cell centres."""
        g = self.grid
        conn = self._conn[b]
        uid = self.uidx
        nu = self.n_unknowns
        lo, hi, open_ = conn["lo"], conn["hi"], conn["open"]
        dist = (conn["dlo"] + conn["dhi"])
        # one-sided slope on every open face, averaged onto the adjoining cells
        m = open_
        L, H, dd = uid[lo[m]], uid[hi[m]], dist[m]
        k = np.arange(L.size)
        S = sp.csr_matrix((np.concatenate([-1 / dd, 1 / dd]), (np.concatenate([k, k]), np.concatenate([L, H]))),
                          shape=(L.size, nu))
        P = sp.csr_matrix((np.ones(2 * L.size), (np.concatenate([L, H]), np.concatenate([k, k]))),
                          shape=(nu, L.size))
        cnt = np.asarray(P.sum(axis=1)).ravel()
        cnt[cnt == 0] = 1.0
        return (sp.diags(1.0 / cnt) @ P @ S).tocsr()

    # ------------------------------------------------------------------
    def _itf_coefs(self, itf, lateral_shape):
        g0 = np.broadcast_to(np.asarray(itf.value_coef, dtype=float), lateral_shape).ravel()
        g1 = np.broadcast_to(np.asarray(itf.flux_coef, dtype=float), lateral_shape).ravel()
        return g0, g1

    def _itf_parts(self, itf):
        """Per-face pieces of the condensed interface fluxes for a unit source scale."""
        a = self.n - 1
        conn = self._conn[a]
        j = itf.index - 1
        sl = (Ellipsis, j)
        T = conn["T"][sl].ravel()
        area = np.broadcast_to(conn["area"], conn["T"].shape)[sl].ravel()
        Dlo = conn["a_lo"][sl].ravel() / np.broadcast_to(conn["dlo"], conn["T"].shape)[sl].ravel()
        Dhi = conn["a_hi"][sl].ravel() / np.broadcast_to(conn["dhi"], conn["T"].shape)[sl].ravel()
        u = np.zeros_like(T) if conn["u"] is None else conn["u"][sl].ravel()
        g0, g1 = self._itf_coefs(itf, self.grid.shape[:-1])
        vel = u / area
        G = -(g1 + vel * g0)  # jump of J_diffusive = -(g1 + v g0)
        th_lo = Dlo / (Dlo + Dhi)
        th_hi = Dhi / (Dlo + Dhi)
        up, un = np.maximum(u, 0.0), np.minimum(u, 0.0)
        # constant parts: flux leaving low cell / entering high cell
        c_lo = T * g0 - th_lo * G * area - un * g0
        c_hi = T * g0 + th_hi * G * area + up * g0
        return dict(L=self.uidx[conn["lo"][sl].ravel()], H=self.uidx[conn["hi"][sl].ravel()],
                    T=T, area=area, c_lo=c_lo, c_hi=c_hi, g0=g0, g1=g1, Dlo=Dlo, Dhi=Dhi, G=G, u=u)

    def const(self, scale=1.0, dirichlet_scale=1.0):
        """Affine part ``c`` of the outward fluxes for a source scale."""
        c = np.zeros(self.n_unknowns)
        for itf in self.interfaces:
            p = self._itf_parts(itf)
            np.add.at(c, p["L"], scale * p["c_lo"])
            np.add.at(c, p["H"], -scale * p["c_hi"])
        for rec in self._bnd:
            bc = rec["bc"]
            if bc.kind == "dirichlet" and bc.value != 0.0:
                U = self.uidx[rec["cells"]]
                inflow = np.zeros_like(rec["T"]) if rec["u"] is None else np.minimum(rec["u"], 0.0)
                np.add.at(c, U, -dirichlet_scale * bc.value * (rec["T"] - inflow))
        return c

    def interface_injection(self):
        """Mass injected per unit time and unit scale by all interface flux jumps."""
        tot = 0.0
        for itf in self.interfaces:
            p = self._itf_parts(itf)
            tot += float(np.sum(-p["g1"] * p["area"]))
        return tot

    def obstacle_inflow(self, flux_density):
        """Source vector from prescribed inflow densities on every obstacle face."""
        obs = self.grid.obstacle_faces
        s = np.zeros(self.n_unknowns)
        np.add.at(s, self.uidx[obs.cell], np.asarray(flux_density) * obs.area)
        return s

    # ------------------------------------------------------------------
    def interface_traces(self, phi, scale=1.0):
        """One-sided traces, fluxes and jumps on every interface.

        Returns a list of dicts with ``lower``/``upper`` traces, the transport
        fluxes ``J_lower``/``J_upper`` (per unit area, upward) and the jumps
        of value and of ``e_n.(A grad phi - v phi)``.
        """
        out = []
        for itf in self.interfaces:
            p = self._itf_parts(itf)
            pl, ph = phi[p["L"]], phi[p["H"]]
            g0, G = scale * p["g0"], scale * p["G"]
            u_minus = (G + p["Dhi"] * (ph - g0) + p["Dlo"] * pl) / (p["Dlo"] + p["Dhi"])
            u_plus = u_minus + g0
            Jd_lo = -p["Dlo"] * (u_minus - pl)
            Jd_hi = -p["Dhi"] * (ph - u_plus)
            vel = p["u"] / p["area"]
            # upwind values as in the assembled rows: the donor cell, shifted by g0 across the face
            ja_lo = np.where(vel > 0, vel * pl, vel * (ph - g0))
            ja_hi = np.where(vel > 0, vel * (pl + g0), vel * ph)
            J_lo, J_hi = Jd_lo + ja_lo, Jd_hi + ja_hi
            out.append(dict(index=itf.index, lower=u_minus, upper=u_plus, J_lower=J_lo, J_upper=J_hi,
                            value_jump=u_plus - u_minus, flux_jump=-(J_hi - J_lo),
                            area=p["area"], expected_value_jump=g0, expected_flux_jump=scale * p["g1"]))
        return out

    def condensed_interface_fluxes(self, phi, scale=1.0):
        """Face fluxes exactly as they enter the assembled rows (per face, times area)."""
        out = []
        for itf in self.interfaces:
            p = self._itf_parts(itf)
            pl, ph = phi[p["L"]], phi[p["H"]]
            conn = self._conn[-1]
            u = p["u"]
            up, un = np.maximum(u, 0.0), np.minimum(u, 0.0)
            base = -p["T"] * (ph - pl) + up * pl + un * ph
            out.append((base + scale * p["c_lo"], base + scale * p["c_hi"], p["area"]))
        return out

    def boundary_outflow(self, phi):
        """Total outward transport flux through the vertical boundaries (times area)."""
        total = 0.0
        for rec in self._bnd:
            bc = rec["bc"]
            if bc.kind != "dirichlet":
                continue
            pc = phi[self.uidx[rec["cells"]]]
            diff = rec["T"] * (pc - bc.value)
            if rec["u"] is None:
                adv = 0.0
            else:
                adv = np.where(rec["u"] > 0, rec["u"] * pc, rec["u"] * bc.value)
            total += float(np.sum(diff + adv))
        return total

    def diffusion_energy(self, phi):
        """``sum_f T_f (phi_H - phi_L)^2`` over ordinary open faces."""
        e = 0.0
        for conn in self._conn:
            m = conn["regular"]
            L, H = self.uidx[conn["lo"][m]], self.uidx[conn["hi"][m]]
            e += float(np.sum(conn["T"][m] * (phi[H] - phi[L]) ** 2))
        return e


def gradient_seminorm_sq(grid, values, exclude_vertical=()):
    """Discrete ``|grad u|^2_{L2}`` over open faces of ``grid``.

    ``values`` has grid shape (inactive entries ignored); vertical faces with
    index in ``exclude_vertical`` are skipped (broken norm across interfaces).
    """
    v = np.asarray(values, dtype=float).ravel()
    tot = 0.0
    for a in range(grid.ndim):
        lo, hi = grid.connections(a)
        m = grid.open_connection(a).copy()
        if a == grid.ndim - 1:
            for j in exclude_vertical:
                m[..., j - 1] = False
        dlo, dhi = grid.conn_halves(a)
        dist = np.broadcast_to(dlo + dhi, m.shape)
        area = np.broadcast_to(grid.conn_area(a), m.shape)
        diff = v[hi[m]] - v[lo[m]]
        tot += float(np.sum(area[m] * diff**2 / dist[m]))
    return tot


def l2_norm_sq(grid, values):
    v = np.asarray(values, dtype=float)
    act = grid.active
    return float(np.sum(grid.volumes[act] * v[act] ** 2))
