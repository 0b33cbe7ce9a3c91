"""Implicit time integration with exact decay and discrete budgets.

The decay term is integrated exactly: with ``psi = exp(lambda t) phi`` the
equation loses its reaction term, ``psi`` is advanced by implicit Euler and
mapped back. Every datum proportional to the leak ``Phi`` enters a step
through the effective value ``(1/dt) int Phi(s) exp(-lambda (t1 - s)) ds``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fv import SolverError, StagnationError, gradient_seminorm_sq

logger = logging.getLogger(__name__)

LINEAR_RTOL = 1e-10


def time_grid(schedule, dt, *, pulse_refinement=10):
    """Step times with ``t_m``, ``T`` and all source breakpoints on the grid.

    Inside the leak support the step is capped at ``t_m / pulse_refinement``.
    """
    if not dt > 0:
        raise ValueError("time step must be positive")
    pts = schedule.breakpoints
    times = [0.0]
    for a, b in zip(pts[:-1], pts[1:]):
        h = dt
        if schedule.t_m > 0 and b <= schedule.t_m + 1e-15:
            h = min(dt, schedule.t_m / pulse_refinement)
        k = max(1, int(math.ceil((b - a) / h - 1e-9)))
        times.extend(a + (b - a) * np.arange(1, k + 1) / k)
    return np.asarray(times)


class LinearSolver:
    """Factor-once direct solver, or ILU-preconditioned BiCGSTAB."""

    def __init__(self, method="direct", rtol=LINEAR_RTOL):
        if method not in ("direct", "iterative"):
            raise ValueError(f"unknown linear solver {method!r}")
        self.method = method
        self.rtol = rtol
        self._key = None

    def prepare(self, M, key):
        if key == self._key:
            return
        self._key = key
        self.M = M.tocsc()
        if self.method == "direct":
            try:
                self._lu = spla.splu(self.M)
            except RuntimeError as exc:
                raise SolverError(f"factorization failed: {exc}") from exc
        else:
            self._ilu = spla.spilu(self.M, drop_tol=1e-5, fill_factor=20)
            self._prec = spla.LinearOperator(self.M.shape, self._ilu.solve)

    def solve(self, rhs, x0=None):
        if self.method == "direct":
            return self._lu.solve(rhs)
        x, info = spla.bicgstab(self.M, rhs, x0=x0, rtol=self.rtol, atol=0.0, M=self._prec, maxiter=2000)
        if info != 0:
            raise StagnationError(f"BiCGSTAB did not converge (info={info})")
        return x


@dataclass
class TransientRunReport:
    """Per-step diagnostics of a transient solve (row 0 is the initial state)."""

    t: np.ndarray
    mass: np.ndarray
    min: np.ndarray
    max: np.ndarray
    l2: np.ndarray
    h1_semi: np.ndarray
    storage: np.ndarray
    decay: np.ndarray
    outflow: np.ndarray
    injection: np.ndarray
    balance_residual: np.ndarray
    energy: dict = field(default_factory=dict)

    @property
    def total_injection(self):
        return float(np.sum(self.injection))

    def l2_h1_norm(self):
        """``L2(0,T;H1)`` norm (right-endpoint rule, matching implicit Euler)."""
        dt = np.diff(self.t)
        return float(np.sqrt(np.sum(dt * (self.l2[1:] ** 2 + self.h1_semi[1:] ** 2))))

    def max_abs(self):
        return float(max(np.max(np.abs(self.min)), np.max(np.abs(self.max))))

    def columns(self):
        return {
            "t": self.t, "mass": self.mass, "min": self.min, "max": self.max,
            "l2": self.l2, "h1_seminorm": self.h1_semi, "storage": self.storage,
            "decay": self.decay, "outflow": self.outflow, "injection": self.injection,
            "balance_residual": self.balance_residual,
        }


@dataclass
class TransientResult:
    grid: object
    times: np.ndarray
    values: np.ndarray  # (n_times, n_active)
    report: TransientRunReport
    scales: np.ndarray  # effective source value used in each step

    def full(self, k=-1):
        """Values of snapshot ``k`` on the full grid (NaN in obstacle cells)."""
        out = np.full(self.grid.size, np.nan)
        out[self.grid.active.ravel()] = self.values[k]
        return out.reshape(self.grid.shape)

    def full_series(self):
        out = np.full((self.times.size, self.grid.size), np.nan)
        out[:, self.grid.active.ravel()] = self.values
        return out.reshape((self.times.size,) + self.grid.shape)


def integrate(operator_at, storage, lam, schedule, phi0, times, *, source=None, injection_rate=None,
              broken_faces=(), solver="direct", rtol=LINEAR_RTOL, time_dependent=False):
    """Advance ``storage dphi/dt + K phi + c = s`` with exact decay.

    Parameters
    ----------
    operator_at : callable
        ``operator_at(t)`` returns the :class:`~perfhom.fv.Operator` valid at
        time ``t`` (called once unless ``time_dependent``).
    storage : array
        ``omega * volume`` per active cell.
    source : array, optional
        Cell inflow per unit source scale (e.g. hole-face areas).
    injection_rate : float, optional
        Injected mass per unit time and unit source scale used by the mass
        budget; defaults to the total source plus the interface injections.
    broken_faces : sequence of int
        Vertical faces excluded from the ``H1`` seminorm.
    """
    nt = len(times)
    op = operator_at(times[0])
    grid = op.grid
    act = grid.active.ravel()
    nu = op.n_unknowns
    phi = np.asarray(phi0, dtype=float).copy()
    if phi.shape != (nu,):
        raise ValueError(f"initial state has shape {phi.shape}, expected ({nu},)")
    src = np.zeros(nu) if source is None else np.asarray(source, dtype=float)
    if injection_rate is None:
        injection_rate = float(src.sum()) + op.interface_injection()
    lin = LinearSolver(solver, rtol)
    values = np.empty((nt, nu))
    values[0] = phi
    rep = {k: np.zeros(nt) for k in ("mass", "min", "max", "l2", "h1", "storage", "decay", "outflow",
                                      "injection", "residual")}
    eterms = {k: np.zeros(nt) for k in ("kinetic", "numerical_dissipation", "decay", "diffusion",
                                         "transport", "cross", "source", "residual")}
    scales = np.zeros(nt)
    full = np.zeros(grid.size)
    vol = grid.volumes.ravel()[act]

    def record(k, p):
        full[act] = p
        rep["mass"][k] = float(np.sum(storage * p))
        rep["min"][k] = float(p.min()) if p.size else 0.0
        rep["max"][k] = float(p.max()) if p.size else 0.0
        rep["l2"][k] = math.sqrt(float(np.sum(vol * p * p)))
        rep["h1"][k] = math.sqrt(gradient_seminorm_sq(grid, full.reshape(grid.shape), broken_faces))

    record(0, phi)
    for k in range(1, nt):
        t0, t1 = times[k - 1], times[k]
        dt = t1 - t0
        if time_dependent:
            op = operator_at(t1)
        decay_f = math.exp(-lam * dt)
        scale = schedule.integral(t0, t1, lam) / dt
        nominal = schedule.integral(t0, t1, 0.0)
        scales[k] = scale
        M = sp.diags(storage / dt) + op.K
        # steps of one interval differ only in round-off; reuse their factorization
        lin.prepare(M, (float(f"{dt:.12e}"), k if time_dependent else 0))
        c = op.const(scale)
        cross = op.C @ phi if op.C.nnz else np.zeros(nu)
        rhs = storage / dt * decay_f * phi - c - decay_f * cross + scale * src
        new = lin.solve(rhs, x0=phi)
        if not np.all(np.isfinite(new)):
            raise SolverError(f"non-finite values at step {k} (t={t1:.6g})")
        # mass budget
        storage_k = float(np.sum(storage * (new - phi)))
        eff = dt * scale * injection_rate
        nom = nominal * injection_rate
        decay_k = float(np.sum(storage * (1.0 - decay_f) * phi)) + (nom - eff)
        out_k = dt * op.boundary_outflow(new)
        res = storage_k + decay_k + out_k - nom
        denom = abs(storage_k) + abs(decay_k) + abs(out_k) + abs(nom)
        rep["storage"][k], rep["decay"][k], rep["outflow"][k], rep["injection"][k] = storage_k, decay_k, out_k, nom
        rep["residual"][k] = abs(res) / denom if denom > 0 else 0.0
        # discrete energy identity (scheme row times new state)
        Kn = op.K @ new
        diff_e = op.diffusion_energy(new)
        e = eterms
        e["kinetic"][k] = 0.5 * float(np.sum(storage * (new**2 - phi**2)))
        e["numerical_dissipation"][k] = 0.5 * float(np.sum(storage * (new - phi) ** 2))
        e["decay"][k] = float(np.sum(storage * (1.0 - decay_f) * phi * new))
        e["diffusion"][k] = dt * diff_e
        e["transport"][k] = dt * (float(new @ Kn) - diff_e + float(new @ c))
        e["cross"][k] = dt * decay_f * float(new @ cross)
        e["source"][k] = -dt * scale * float(new @ src)
        parts = [e[n][k] for n in ("kinetic", "numerical_dissipation", "decay", "diffusion", "transport",
                                    "cross", "source")]
        tot = sum(parts)
        mag = sum(abs(p) for p in parts)
        e["residual"][k] = abs(tot) / mag if mag > 0 else 0.0
        phi = new
        values[k] = phi
        record(k, phi)
    report = TransientRunReport(
        t=np.asarray(times), mass=rep["mass"], min=rep["min"], max=rep["max"], l2=rep["l2"],
        h1_semi=rep["h1"], storage=rep["storage"], decay=rep["decay"], outflow=rep["outflow"],
        injection=rep["injection"], balance_residual=rep["residual"], energy=eterms,
    )
    return TransientResult(grid, np.asarray(times), values, report, scales)
