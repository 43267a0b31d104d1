"""Penalized choice of the number of Laguerre terms and the final estimator.

For every model size ``m`` the variance of ``f_m = G_m^{-1} z_m`` is governed by

    Q_m = G_m^{-1} Omega_m G_m^{-T},   v_m^2 = tr Q_m,   rho_m^2 = lambda_max(Q_m)

and the selected size minimizes ``-||f_m||^2 + pen(m)`` with

    pen(m) = c_pen sigma^2 (T/n) [(1 + B) v_m^2 + (1 + 1/B)(2 alpha + 2) rho_m^2 log m].

The coefficient vector is computed once at size ``M`` and truncated, so all
candidate estimators are prefixes of one another.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg

from .design import GramFactor, Observations, estimate_sigma
from .errors import DegenerateRegression, NotSymmetric, ValidationError, stage
from .laguerre import CoeffVector, LaguerreBasis
from .toeplitz import LowerToeplitz, build_G, check_invertible, toeplitz_mul, toeplitz_solve


@dataclass(frozen=True)
class EstimatorConfig:
    """Tuning of the penalized estimator.

    ``alpha=None`` estimates the growth exponent from ``rho_m^2`` over
    ``alpha_range`` (inclusive).  ``refit_per_m`` switches from truncating
    ``z_M`` to refitting ``z_m`` with the first ``m`` basis columns.
    """

    M: int = 11
    B: float = 0.5
    c_pen: float = 1.5
    alpha: float | None = None
    alpha_range: tuple = (1, 7)
    refit_per_m: bool = False

    def __post_init__(self):
        problems = []
        if int(self.M) != self.M or self.M < 1:
            problems.append(f"M must be a positive integer, got {self.M!r}")
        if not self.B > 0:
            problems.append(f"B must be positive, got {self.B!r}")
        if not self.c_pen > 0:
            problems.append(f"c_pen must be positive, got {self.c_pen!r}")
        lo, hi = self.alpha_range
        if not 1 <= lo < hi:
            problems.append(f"alpha_range must satisfy 1 <= lo < hi, got {self.alpha_range!r}")
        if problems:
            raise ValidationError("; ".join(problems))
        object.__setattr__(self, "alpha_range", (int(lo), int(hi)))

    def to_dict(self):
        d = asdict(self)
        d["alpha_range"] = list(self.alpha_range)
        return d


@dataclass(frozen=True, eq=False)
class PenaltyTable:
    """Per-size diagnostics, index ``i`` describing model size ``m = i + 1``."""

    v2: np.ndarray
    rho2: np.ndarray
    pen: np.ndarray
    contrast: np.ndarray
    alpha: float
    log_c: float

    @property
    def objective(self):
        return self.contrast + self.pen

    @property
    def sizes(self):
        return np.arange(1, self.v2.size + 1)

    def records(self):
        return [dict(m=int(m), v2=float(v), rho2=float(r), pen=float(p), contrast=float(c),
                     objective=float(c + p))
                for m, v, r, p, c in zip(self.sizes, self.v2, self.rho2, self.pen, self.contrast)]


@dataclass(frozen=True, eq=False)
class ModelFit:
    """Selected estimator and its diagnostics."""

    m_hat: int
    coeffs: CoeffVector
    full_coeffs: np.ndarray
    table: PenaltyTable
    beta_hat: float
    transit_integral: float
    sigma_used: float
    G: LowerToeplitz
    kernel: CoeffVector | None = None
    config: EstimatorConfig = field(default_factory=EstimatorConfig)

    @property
    def basis(self):
        return self.coeffs.basis

    def __call__(self, times):
        return self.coeffs(times)

    def candidate(self, m):
        """Coefficients of the size-``m`` estimator."""
        return CoeffVector(self.full_coeffs[:m], self.basis)

    def fitted_convolution(self, times):
        """Model curve ``q_hat = g * f_hat``.

        With ``K`` kernel terms and ``m`` estimator terms the convolution has
        exactly ``K + m`` Laguerre coefficients, the first column of the
        Toeplitz matrix applied to ``f_hat`` padded with zeros.
        """
        g = self.kernel
        f = self.coeffs.coeffs
        size = len(g) + f.size
        pad_g = CoeffVector(np.pad(g.coeffs, (0, size - len(g))), LaguerreBasis(g.basis.a, size))
        qc = toeplitz_mul(build_G(pad_g), np.pad(f, (0, size - f.size)))
        return CoeffVector(qc, pad_g.basis)(times)


def q_matrix(G, Omega):
    """``Q = G^{-1} Omega G^{-T}`` through ``Omega = C C^T`` and ``W = G^{-1} C``."""
    Omega = np.asarray(Omega, dtype=float)
    if Omega.shape != (G.size, G.size):
        raise ValidationError(f"Omega has shape {Omega.shape}, G has size {G.size}")
    C = linalg.cholesky(0.5 * (Omega + Omega.T), lower=True)
    return _q_from_factor(G, C)


def _q_from_factor(G, C):
    W = toeplitz_solve(G, C)
    Q = W @ W.T
    return 0.5 * (Q + Q.T)


def variance_trace(Q):
    """``v^2 = tr Q``."""
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {Q.shape}")
    return float(np.trace(Q))


def jacobi_eigenvalues(S, tol=1e-12, max_sweeps=64):
    """Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.

    Sweeps run over all pairs ``p < q`` in row order until the off-diagonal
    Frobenius norm falls below ``tol`` times the Frobenius norm of ``S``.
    The result is sorted ascending.
    """
    A = np.array(S, dtype=float)
    n = A.shape[0]
    scale = np.linalg.norm(A)
    if n == 1 or scale == 0.0:
        return np.sort(np.diag(A))
    for _ in range(max_sweeps):
        off = math.sqrt(max(np.sum(A * A) - np.sum(np.diag(A) ** 2), 0.0))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                # negligible against both diagonal entries: annihilate without rotating
                if abs(apq) <= 1e-300 + 1e-18 * (abs(A[p, p]) + abs(A[q, q])):
                    A[p, q] = A[q, p] = 0.0
                    continue
                theta = (A[q, q] - A[p, p]) / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                col_p = A[:, p].copy()
                col_q = A[:, q].copy()
                A[:, p] = c * col_p - s * col_q
                A[:, q] = s * col_p + c * col_q
                row_p = A[p, :].copy()
                row_q = A[q, :].copy()
                A[p, :] = c * row_p - s * row_q
                A[q, :] = s * row_p + c * row_q
                A[p, q] = A[q, p] = 0.0
    return np.sort(np.diag(A))


def spectral_norm(Q):
    """``rho^2 = lambda_max(Q)`` for symmetric positive semi-definite ``Q``."""
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
        raise ValidationError(f"expected a square matrix, got shape {Q.shape}")
    scale = max(1.0, float(np.max(np.abs(Q))))
    if np.max(np.abs(Q - Q.T)) > 1e-8 * scale:
        raise NotSymmetric("matrix is not symmetric to 1e-8 (relative to its largest entry)")
    return float(jacobi_eigenvalues(Q)[-1])


def estimate_alpha(rho2_by_m, m_range=(1, 7)):
    """Least-squares fit ``log rho_m^2 = log C + alpha log m`` over ``m_range``.

    ``rho2_by_m[i]`` belongs to ``m = i + 1``.  Returns ``(alpha, log C)``.
    """
    rho2 = np.asarray(rho2_by_m, dtype=float)
    lo, hi = m_range
    m = np.arange(1, rho2.size + 1)
    sel = (m >= lo) & (m <= hi)
    x = np.log(m[sel])
    if x.size < 2 or np.ptp(x) == 0.0:
        raise DegenerateRegression(
            f"need two distinct model sizes in {m_range} to fit the growth of rho_m^2")
    if np.any(rho2[sel] <= 0):
        raise DegenerateRegression("rho_m^2 must be positive to take logarithms")
    y = np.log(rho2[sel])
    xm = x.mean()
    slope = float(np.sum((x - xm) * (y - y.mean())) / np.sum((x - xm) ** 2))
    return slope, float(y.mean() - slope * xm)


def penalty(m, v2, rho2, sigma, T, n, B, alpha, c_pen=1.5):
    """Complexity penalty for model size ``m`` (vectorizes over arrays)."""
    m = np.asarray(m, dtype=float)
    val = c_pen * sigma ** 2 * (T / n) * (
        (1.0 + B) * np.asarray(v2) + (1.0 + 1.0 / B) * (2.0 * alpha + 2.0) * np.asarray(rho2) * np.log(m))
    return val[()] if np.ndim(val) == 0 else val


def contrast_value(fhat_m, fhatM=None):
    """Contrast of a truncation ``fhat_m`` of ``fhatM = G_M^{-1} z_M``.

    Because the truncation agrees with ``fhatM`` on its support,
    ``||t||^2 - 2 <t, fhatM>`` reduces to ``-||fhat_m||^2``.
    """
    f = np.asarray(fhat_m, dtype=float)
    return -float(f @ f)


def contrast_literal(t, fhatM):
    """``||t||^2 - 2 <t, fhatM>`` for ``t`` zero-padded to the length of ``fhatM``."""
    t = np.asarray(t, dtype=float)
    full = np.zeros(len(fhatM))
    full[: t.size] = t
    return float(full @ full - 2.0 * full @ np.asarray(fhatM, dtype=float))


def select_model(table):
    """``argmin_m`` of the penalized contrast, smallest ``m`` on ties."""
    obj = table.objective if isinstance(table, PenaltyTable) else np.asarray(table, dtype=float)
    return int(np.argmin(obj)) + 1


class Deconvolver:
    """Estimator prepared for fixed sample times, kernel and configuration.

    Everything that does not depend on the data values (basis matrix, Gram
    factorization, ``G_M``, ``v_m^2``, ``rho_m^2``, ``alpha``) is computed once,
    so Monte-Carlo replicates on a common grid only pay for the least-squares
    projection and a triangular solve.
    """

    def __init__(self, times, horizon, g_coeffs, config=None):
        self.config = config or EstimatorConfig()
        M = self.config.M
        if len(g_coeffs) < M:
            raise ValidationError(f"kernel has {len(g_coeffs)} Laguerre coefficients, M={M} needed")
        self.basis = LaguerreBasis(g_coeffs.basis.a, M)
        self.kernel = g_coeffs
        with stage("design"):
            self.factor = GramFactor(times, horizon, self.basis)
        with stage("toeplitz"):
            self.G = build_G(g_coeffs, M)
            check_invertible(self.G)
        with stage("select"):
            v2 = np.empty(M)
            rho2 = np.empty(M)
            for m in range(1, M + 1):
                Q = _q_from_factor(self.G.leading(m), self.factor.omega_factor(m))
                v2[m - 1] = variance_trace(Q)
                rho2[m - 1] = spectral_norm(Q)
            self.v2, self.rho2 = v2, rho2
            self.log_c = float("nan")
            if self.config.alpha is None:
                lo, hi = self.config.alpha_range
                self.alpha, self.log_c = estimate_alpha(rho2, (lo, min(hi, M)))
            else:
                self.alpha = float(self.config.alpha)

    @property
    def n(self):
        return self.factor.n

    @property
    def horizon(self):
        return self.factor.horizon

    def penalties(self, sigma):
        m = np.arange(1, self.config.M + 1)
        return penalty(m, self.v2, self.rho2, sigma, self.horizon, self.n,
                       self.config.B, self.alpha, self.config.c_pen)

    def coefficient_paths(self, values):
        """``f_M = G_M^{-1} z_M`` and the list of candidate coefficient vectors."""
        M = self.config.M
        z = self.factor.coefficients(values)
        full = toeplitz_solve(self.G, z)
        if not self.config.refit_per_m:
            return full, [full[:m] for m in range(1, M + 1)]
        cands = []
        for m in range(1, M + 1):
            zm = self.factor.coefficients(values, m)
            cands.append(toeplitz_solve(self.G.leading(m), zm))
        return full, cands

    def fit(self, values, sigma):
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n,):
            raise ValidationError(f"expected {self.n} values, got shape {values.shape}")
        with stage("select"):
            full, cands = self.coefficient_paths(values)
            if self.config.refit_per_m:
                contrast = np.array([contrast_literal(c, full) for c in cands])
            else:
                contrast = np.array([contrast_value(c) for c in cands])
            pen = self.penalties(sigma)
            table = PenaltyTable(v2=self.v2.copy(), rho2=self.rho2.copy(), pen=pen,
                                 contrast=contrast, alpha=self.alpha, log_c=self.log_c)
            m_hat = select_model(table)
        coeffs = CoeffVector(cands[m_hat - 1], self.basis)
        a = self.basis.a
        return ModelFit(
            m_hat=m_hat,
            coeffs=coeffs,
            full_coeffs=full,
            table=table,
            beta_hat=math.sqrt(2.0 * a) * float(np.sum(coeffs.coeffs)),
            transit_integral=float(self.basis.integrals(m_hat) @ coeffs.coeffs),
            sigma_used=float(sigma),
            G=self.G,
            kernel=self.kernel,
            config=self.config,
        )


def resolve_sigma(obs, sigma=None):
    """Noise level: explicit value, else the one carried by ``obs``, else estimated."""
    if sigma is not None and sigma != "estimate":
        return float(sigma)
    if sigma is None and obs.sigma is not None:
        return obs.sigma
    return estimate_sigma(obs)


def fit(obs: Observations, g_coeffs: CoeffVector, config: EstimatorConfig | None = None,
        sigma=None) -> ModelFit:
    """Penalized Laguerre deconvolution of ``obs`` with kernel coefficients ``g_coeffs``.

    ``sigma`` may be a number, ``"estimate"`` or ``None`` (use ``obs.sigma``
    when present, otherwise estimate it from first differences).
    """
    sig = resolve_sigma(obs, sigma)
    return Deconvolver(obs.times, obs.horizon, g_coeffs, config).fit(obs.values, sig)
