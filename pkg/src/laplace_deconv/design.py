"""From samples ``(t_i, y_i)`` to Laguerre-coordinate data.

For the ``n x M`` matrix ``Phi[i, k] = phi_k(t_i)`` the normalized Gram
matrix is ``A = (T/n) Phi^T Phi`` and ``Omega = A^{-1}``.  The observed
coefficients ``z = (Phi^T Phi)^{-1} Phi^T y`` are computed with a QR
factorization of ``Phi`` rather than the normal equations.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import EmptyAfterShift, RankDeficientDesign, ValidationError
from .laguerre import LaguerreBasis, design_matrix

PIVOT_RTOL = 1e-10


@dataclass(frozen=True, eq=False)
class Observations:
    """Samples ``y_i`` at strictly increasing times ``0 < t_i <= T``.

    ``horizon`` defaults to the last sample time.  ``sigma`` is the noise
    standard deviation when it is known.
    """

    times: np.ndarray
    values: np.ndarray
    horizon: float | None = None
    sigma: float | None = None

    def __post_init__(self):
        t = np.array(self.times, dtype=float).reshape(-1)
        y = np.array(self.values, dtype=float).reshape(-1)
        if t.size != y.size:
            raise ValidationError(f"{t.size} times but {y.size} values")
        if t.size < 2:
            raise ValidationError("at least two observations are required")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(y))):
            raise ValidationError("times and values must be finite")
        if np.any(np.diff(t) <= 0):
            raise ValidationError("times must be strictly increasing")
        if t[0] <= 0:
            raise ValidationError("sample times must be positive")
        T = float(t[-1]) if self.horizon is None else float(self.horizon)
        if T < t[-1] * (1.0 - 1e-12):
            raise ValidationError(f"horizon T={T} precedes the last sample {t[-1]}")
        if self.sigma is not None and not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ValidationError(f"sigma must be a non-negative number, got {self.sigma!r}")
        t.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", y)
        object.__setattr__(self, "horizon", T)
        if self.sigma is not None:
            object.__setattr__(self, "sigma", float(self.sigma))

    @property
    def n(self):
        return self.times.size

    def with_values(self, values, sigma=None):
        return Observations(self.times, values, self.horizon, sigma)

    def __eq__(self, other):
        if not isinstance(other, Observations):
            return NotImplemented
        return (np.array_equal(self.times, other.times)
                and np.array_equal(self.values, other.values)
                and self.horizon == other.horizon and self.sigma == other.sigma)

    __hash__ = None


class GramFactor:
    """QR of ``Phi`` and Cholesky of ``A`` for a fixed set of sample times.

    Built once per design; every new data vector only costs one ``Q^T y``
    product and a triangular solve.
    """

    def __init__(self, times, horizon, basis):
        times = np.asarray(times, dtype=float)
        self.basis = basis
        self.n = times.size
        self.horizon = float(horizon)
        M = basis.M
        if self.n < M:
            raise RankDeficientDesign(
                f"{self.n} samples cannot determine {M} Laguerre coefficients (need n > M)")
        self.phi = design_matrix(basis, times)
        self.A = (self.horizon / self.n) * (self.phi.T @ self.phi)
        try:
            self.chol = linalg.cholesky(self.A, lower=True)
        except linalg.LinAlgError:
            raise RankDeficientDesign(
                f"Gram matrix is not positive definite (n={self.n}, M={M}, a={basis.a:g})") from None
        # the largest diagonal entry bounds every pivot; the largest pivot alone
        # can be tiny when the leading functions barely register on the grid
        pivots = np.diag(self.chol) ** 2
        scale = np.max(np.diag(self.A))
        if not pivots.min() > PIVOT_RTOL * scale:
            raise RankDeficientDesign(
                f"Gram matrix is numerically singular: pivot ratio "
                f"{pivots.min() / scale:.2e} <= {PIVOT_RTOL:.0e} "
                f"(M={M} too large for n={self.n} or a degenerate grid)")
        self.q, self.r = np.linalg.qr(self.phi)

    def coefficients(self, values, m=None):
        """Least-squares coefficients of ``values`` on the first ``m`` columns."""
        if m is None or m == self.basis.M:
            return linalg.solve_triangular(self.r, self.q.T @ values)
        q, r = np.linalg.qr(self.phi[:, :m])
        return linalg.solve_triangular(r, q.T @ values)

    def omega(self, m=None):
        """``(A[:m, :m])^{-1}``; the leading Cholesky block factors the leading block of A."""
        m = self.basis.M if m is None else m
        L = self.chol[:m, :m]
        Linv = linalg.solve_triangular(L, np.eye(m), lower=True)
        om = Linv.T @ Linv
        return 0.5 * (om + om.T)

    def omega_factor(self, m):
        """Upper-triangular ``C`` with ``C C^T = Omega_m`` (``C = L_m^{-T}``)."""
        L = self.chol[:m, :m]
        return linalg.solve_triangular(L, np.eye(m), lower=True).T


@dataclass(frozen=True, eq=False)
class DesignSummary:
    """Normalized Gram matrix, its inverse and the observed coefficients."""

    A: np.ndarray
    Omega: np.ndarray
    z: np.ndarray
    basis: LaguerreBasis
    n: int
    horizon: float
    factor: GramFactor = field(repr=False, default=None)


def summarize_design(obs, basis):
    """Gram matrix ``A``, ``Omega = A^{-1}`` and ``z`` for observations ``obs``.

    Raises
    ------
    RankDeficientDesign
        When ``n < M`` or the smallest Cholesky pivot of ``A`` is below
        ``1e-10`` times the largest diagonal entry of ``A``.
    """
    factor = GramFactor(obs.times, obs.horizon, basis)
    return DesignSummary(A=factor.A, Omega=factor.omega(), z=factor.coefficients(obs.values),
                         basis=basis, n=obs.n, horizon=obs.horizon, factor=factor)


def omega_sub(summary, m):
    """``Omega_m``, the inverse of the leading ``m x m`` block of ``A``."""
    if not 1 <= m <= summary.basis.M:
        raise ValidationError(f"m={m} outside [1, {summary.basis.M}]")
    if summary.factor is not None:
        return summary.factor.omega(m)
    block = summary.A[:m, :m]
    try:
        c = linalg.cho_factor(block, lower=True)
    except linalg.LinAlgError:
        raise RankDeficientDesign(f"leading {m}x{m} block of A is not positive definite") from None
    om = linalg.cho_solve(c, np.eye(m))
    return 0.5 * (om + om.T)


def observed_coefficients(basis, times, values):
    """``z = (Phi^T Phi)^{-1} Phi^T y`` for samples in any order."""
    phi = design_matrix(basis, times)
    q, r = np.linalg.qr(phi)
    return linalg.solve_triangular(r, q.T @ np.asarray(values, dtype=float))


def shift_delay(obs, delta):
    """Move the time origin to ``delta``; samples at or before it are dropped."""
    delta = float(delta)
    if delta < 0:
        raise ValidationError(f"delay must be non-negative, got {delta}")
    if delta == 0:
        return obs
    if delta >= obs.horizon:
        raise EmptyAfterShift(f"delay {delta} is not below the horizon {obs.horizon}")
    keep = obs.times > delta
    if keep.sum() == 0:
        raise EmptyAfterShift(f"no samples remain after a delay of {delta}")
    if keep.sum() < 2:
        raise EmptyAfterShift(f"only one sample remains after a delay of {delta}")
    return Observations(obs.times[keep] - delta, obs.values[keep], obs.horizon - delta, obs.sigma)


def estimate_sigma(obs):
    """First-difference noise estimate ``sum (y_{i+1} - y_i)^2 / (2 (n - 1))``.

    Smooth trends contribute only at second order when sampling is dense.  A
    warning is issued when the sampling step varies by more than 20 %.
    """
    if obs.n < 3:
        raise ValidationError("noise estimation needs at least three samples")
    dt = np.diff(obs.times)
    if (dt.max() - dt.min()) > 0.2 * dt.mean():
        warnings.warn("sampling grid is irregular; the difference-based noise estimate is biased",
                      RuntimeWarning, stacklevel=2)
    d = np.diff(obs.values)
    return float(np.sqrt(np.sum(d ** 2) / (2.0 * (obs.n - 1))))
