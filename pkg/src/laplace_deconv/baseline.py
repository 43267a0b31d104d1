"""Discretized-convolution baselines: Tikhonov regularization and truncated SVD.

The convolution integral on an equispaced grid ``t_i = t_1 + (i - 1) dt`` is
replaced by a quadrature sum, giving a lower-triangular system ``C f = y``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import DeconvolutionError, ValidationError, stage
from .simulate import monte_carlo, prepare, simulate_dataset

RULES = ("rectangular", "trapezoid")
LAMBDA_GRID = np.geomspace(1e-6, 1e2, 25)
TAU_GRID = np.geomspace(1e-6, 1e-1, 25)


@dataclass(frozen=True, eq=False)
class ConvolutionMatrix:
    """Lower-triangular quadrature matrix of the convolution on a grid."""

    entries: np.ndarray
    rule: str
    dt: float

    @property
    def n(self):
        return self.entries.shape[0]

    def __matmul__(self, other):
        return self.entries @ other


def build_conv_matrix(kernel, times, rule="rectangular", rtol=1e-8):
    """Quadrature matrix for ``q(t_i) = int g(t_i - s) f(s) ds``.

    ``rectangular``: ``C[i, j] = dt g(t_i - t_j)`` for ``j <= i``.
    ``trapezoid``: the same with half weights on ``j = 1`` and ``j = i``
    (row 1 then vanishes, as a one-point trapezoid has zero width).
    """
    if rule not in RULES:
        raise ValidationError(f"unknown rule {rule!r}; expected one of {RULES}")
    t = np.asarray(times, dtype=float).reshape(-1)
    if t.size < 2:
        raise ValidationError("the grid needs at least two points")
    d = np.diff(t)
    dt = float(d.mean())
    if not dt > 0 or np.max(np.abs(d - dt)) > rtol * dt:
        raise ValidationError("the convolution matrix requires an equispaced increasing grid")
    n = t.size
    lag = np.subtract.outer(np.arange(n), np.arange(n))
    lower = lag >= 0
    gv = np.asarray(kernel(dt * np.clip(lag, 0, None)), dtype=float)
    C = np.where(lower, dt * gv, 0.0)
    if rule == "trapezoid":
        C[:, 0] *= 0.5
        C[np.arange(n), np.arange(n)] *= 0.5
        C[0, 0] = 0.0
    return ConvolutionMatrix(C, rule, dt)


def _entries(C):
    return C.entries if isinstance(C, ConvolutionMatrix) else np.asarray(C, dtype=float)


def tikhonov_solve(C, y, lam):
    """Minimizer of ``||C f - y||^2 + lam ||f||^2`` via Cholesky of ``C^T C + lam I``.

    ``y`` may hold several right-hand sides as columns.
    """
    if not lam > 0:
        raise ValidationError(f"lambda must be positive, got {lam!r}")
    A = _entries(C)
    N = A.T @ A
    N[np.diag_indices_from(N)] += lam
    return linalg.cho_solve(linalg.cho_factor(N, lower=True), A.T @ np.asarray(y, dtype=float))


def svd_truncate_solve(C, y, tau):
    """Pseudo-inverse solution keeping singular values ``>= tau * s_max``."""
    if not 0 < tau < 1:
        raise ValidationError(f"tau must lie in (0, 1), got {tau!r}")
    U, s, Vt = np.linalg.svd(_entries(C))
    return _svd_apply(U, s, Vt, np.asarray(y, dtype=float), tau)


def _svd_apply(U, s, Vt, y, tau):
    keep = s >= tau * s[0]
    return Vt[keep].T @ ((U[:, keep].T @ y) / (s[keep] if y.ndim == 1 else s[keep, None]))


@dataclass(frozen=True, eq=False)
class SweepResult:
    """Mean risk over replicates for each value of the tuning parameter."""

    method: str
    grid: np.ndarray
    mean_risk: np.ndarray

    @property
    def best_index(self):
        return int(np.argmin(self.mean_risk))

    @property
    def best_param(self):
        return float(self.grid[self.best_index])

    @property
    def best_risk(self):
        return float(self.mean_risk[self.best_index])

    def to_dict(self):
        return {"method": self.method, "grid": [float(v) for v in self.grid],
                "mean_risk": [float(v) for v in self.mean_risk],
                "best_param": self.best_param, "best_risk": self.best_risk}


def _replicate_matrix(scenario):
    return np.column_stack([simulate_dataset(scenario, r).values for r in range(scenario.reps)])


def baseline_sweeps(scenario, rule="rectangular", lambdas=None, taus=None):
    """Oracle-tuned Tikhonov and truncated-SVD risks over parameter grids.

    All replicates share one factorization per grid value, so the sweep cost
    is dominated by ``len(grid)`` dense solves with ``reps`` right-hand sides.
    """
    lambdas = LAMBDA_GRID if lambdas is None else np.asarray(lambdas, dtype=float)
    taus = TAU_GRID if taus is None else np.asarray(taus, dtype=float)
    times = scenario.times
    with stage("baseline"):
        C = build_conv_matrix(scenario.kernel_callable(), times, rule)
        Y = _replicate_matrix(scenario)
        f_true = scenario.target_callable()(times)[:, None]
        tik = np.array([np.mean((tikhonov_solve(C, Y, lam) - f_true) ** 2) for lam in lambdas])
        U, s, Vt = np.linalg.svd(C.entries)
        svd = np.array([np.mean((_svd_apply(U, s, Vt, Y, tau) - f_true) ** 2) for tau in taus])
    return SweepResult("tikhonov", lambdas, tik), SweepResult("tsvd", taus, svd)


@dataclass(frozen=True, eq=False)
class Comparison:
    laguerre: object
    tikhonov: SweepResult
    tsvd: SweepResult
    rule: str

    def to_dict(self):
        return {"laguerre": self.laguerre.to_dict(), "tikhonov": self.tikhonov.to_dict(),
                "tsvd": self.tsvd.to_dict(), "rule": self.rule}


def compare_methods(scenario, rule="rectangular", lambdas=None, taus=None):
    """Penalized Laguerre risk next to the best-tuned baseline risks on the same data."""
    report = monte_carlo(scenario)
    tik, svd = baseline_sweeps(scenario, rule, lambdas, taus)
    return Comparison(report, tik, svd, rule)


def example_estimates(scenario, comparison, rep=0):
    """All three estimates on replicate ``rep`` (for plotting)."""
    _, sigma, dec = prepare(scenario)
    obs = simulate_dataset(scenario, rep)
    times = scenario.times
    C = build_conv_matrix(scenario.kernel_callable(), times, comparison.rule)
    try:
        lag = dec.fit(obs.values, sigma)(times)
    except DeconvolutionError:
        lag = np.full(times.size, math.nan)
    return {
        "t": times,
        "y": obs.values,
        "truth": scenario.target_callable()(times),
        "laguerre": lag,
        "tikhonov": tikhonov_solve(C, obs.values, comparison.tikhonov.best_param),
        "tsvd": svd_truncate_solve(C, obs.values, comparison.tsvd.best_param),
    }

