"""Estimator-style wrappers: ``fit`` runs a solve, ``predict`` samples the field at points.

Parameters follow the scikit-learn convention (stored verbatim in
``__init__``, fitted state in trailing-underscore attributes), so
``get_params``/``set_params``/``clone`` work. ``fit`` ignores ``X``.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .cells import solve_cell
from .coefficients import LayeredTensor
from .config import Scenario, from_dict, load_scenario
from .study import solve_variant

__all__ = ["MicroscopicSolver", "LimitSolver", "CellProblemSolver", "sample_cells"]


def _scenario(spec, eps):
    if spec is None:
        raise ValueError("a scenario (mapping, path or Scenario) is required")
    if isinstance(spec, Scenario):
        sc = spec
    elif isinstance(spec, (str, Path)):
        sc = load_scenario(spec)
    else:
        sc = from_dict(dict(spec))
    return sc if eps is None else sc.with_eps(eps)


def sample_cells(grid, values, X):
    """Cell value containing each point (NaN in obstacles or outside the box)."""
    X = check_array(X, ensure_2d=True)
    if X.shape[1] != grid.ndim:
        raise ValueError(f"points have {X.shape[1]} coordinates, grid has {grid.ndim}")
    idx = []
    inside = np.ones(len(X), dtype=bool)
    for a, f in enumerate(grid.faces):
        x = X[:, a]
        if grid.periodic[a]:
            x = f[0] + np.mod(x - f[0], f[-1] - f[0])
        i = np.searchsorted(f, x, side="right") - 1
        inside &= (x >= f[0]) & (x <= f[-1])
        idx.append(np.clip(i, 0, len(f) - 2))
    out = np.asarray(values, dtype=float)[tuple(idx)]
    ok = inside & grid.active[tuple(idx)]
    return np.where(ok, out, np.nan)


class _FieldEstimator(BaseEstimator):
    def _time_index(self, t):
        times = self.times_
        if t is None:
            return len(times) - 1
        k = int(np.argmin(np.abs(times - t)))
        if abs(times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not on the time grid")
        return k

    def predict(self, X, t=None):
        """Field at points ``X`` (shape ``(n_points, n)``) at time ``t`` (default: final)."""
        check_is_fitted(self, "result_")
        return sample_cells(self.grid_, self.result_.field(self._time_index(t)), X)

    def _store(self, res):
        self.result_ = res
        self.grid_ = res.grid
        self.times_ = np.asarray(res.times)
        self.report_ = res.report
        return self


class MicroscopicSolver(_FieldEstimator):
    """Microscopic solve on the perforated reference grid of ``scenario``."""

    def __init__(self, scenario=None, eps=None):
        self.scenario = scenario
        self.eps = eps

    def fit(self, X=None, y=None):
        sc = _scenario(self.scenario, self.eps)
        return self._store(solve_variant(sc, "micro"))


class LimitSolver(_FieldEstimator):
    """Jump problem on the coarse box grid: ``variant`` is ``limit``, ``outer`` or ``corrector``."""

    def __init__(self, scenario=None, eps=None, variant="limit"):
        self.scenario = scenario
        self.eps = eps
        self.variant = variant

    def fit(self, X=None, y=None):
        if self.variant not in ("limit", "outer", "corrector"):
            raise ValueError(f"unknown variant {self.variant!r}")
        sc = _scenario(self.scenario, self.eps)
        return self._store(solve_variant(sc, self.variant))


class CellProblemSolver(BaseEstimator):
    """One strip problem; ``predict`` takes points in strip coordinates ``y``."""

    def __init__(self, problem="w", index=(), mode="scaled", m=(0.25,), eps=0.1, beta=2.0, A=None, Y=4.0,
                 auto_extend=True):
        self.problem = problem
        self.index = index
        self.mode = mode
        self.m = m
        self.eps = eps
        self.beta = beta
        self.A = A
        self.Y = Y
        self.auto_extend = auto_extend

    def fit(self, X=None, y=None):
        n = len(self.m) + 1
        A = self.A if self.A is not None else LayeredTensor(np.eye(n), np.eye(n), 1.5)
        self.solution_ = solve_cell(self.problem, tuple(self.index), mode=self.mode, m=tuple(self.m), eps=self.eps,
                                    beta=self.beta, A=A, Y=self.Y, auto_extend=self.auto_extend)
        self.far_field_flux_ = self.solution_.far_field_flux
        return self

    def predict(self, X):
        check_is_fitted(self, "solution_")
        return sample_cells(self.solution_.grid, self.solution_.values, X)
