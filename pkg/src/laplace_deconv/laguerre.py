"""Laguerre polynomials, Laguerre functions and expansions over them.

The orthonormal system on ``[0, inf)`` is

    phi_k(t) = sqrt(2a) * exp(-a t) * L_k(2 a t),    k = 0, 1, ...

where ``L_k`` are the (simple) Laguerre polynomials.  Functions are evaluated
with the three-term recurrence applied to ``phi_k`` directly, so the weight is
folded in from the start and nothing overflows for large ``k * t``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import QuadratureError, RankDeficientDesign, ValidationError
from .quadrature import composite_rule

DEFAULT_A_GRID = np.geomspace(0.01, 2.0, 32)
DEFAULT_A_GRID.setflags(write=False)


@dataclass(frozen=True)
class LaguerreBasis:
    """Scale ``a`` (inverse time) and maximal size ``M`` of the system."""

    a: float
    M: int

    def __post_init__(self):
        if not (np.isfinite(self.a) and self.a > 0):
            raise ValidationError(f"Laguerre scale a must be positive, got {self.a!r}")
        if int(self.M) != self.M or self.M < 1:
            raise ValidationError(f"basis size M must be a positive integer, got {self.M!r}")
        object.__setattr__(self, "a", float(self.a))
        object.__setattr__(self, "M", int(self.M))

    def __call__(self, t, m=None):
        """Matrix ``phi_k(t_i)`` of shape ``(len(t), m)``; ``m`` defaults to ``M``."""
        m = self.M if m is None else m
        if m > self.M:
            raise ValidationError(f"requested {m} functions from a basis of size {self.M}")
        return laguerre_functions(self.a, m, t)

    def value_at_zero(self):
        """``phi_k(0)``, identical for every k."""
        return math.sqrt(2.0 * self.a)

    def integrals(self, m=None):
        """``int_0^inf phi_k``, which equals ``(-1)^k sqrt(2/a)``."""
        m = self.M if m is None else m
        return math.sqrt(2.0 / self.a) * (-1.0) ** np.arange(m)


@dataclass(frozen=True)
class QuadratureConfig:
    """Composite Gauss-Legendre settings for projections onto the basis.

    Panels have width ``min(2/a, max_panel_width)`` and ``order`` nodes each.
    The integration range ``[0, T_quad]`` is long enough that the weight tail
    ``exp(-a T_quad)`` is below ``weight_tail`` *and* every requested
    ``phi_k`` is well past its last turning point ``(2k + 1) / a``.
    """

    order: int = 32
    max_panel_width: float = 4.0
    weight_tail: float = 1e-12
    tail_tol: float = 1e-8

    def horizon(self, a, m):
        return (math.log(1.0 / self.weight_tail) + 4.0 * m) / a

    def rule(self, a, m):
        T = self.horizon(a, m)
        return composite_rule(0.0, T, min(2.0 / a, self.max_panel_width), self.order)


@dataclass(frozen=True, eq=False)
class CoeffVector:
    """Laguerre coordinates ``c_0 .. c_{m-1}`` tied to their basis."""

    coeffs: np.ndarray
    basis: LaguerreBasis
    tail_estimate: float = field(default=0.0, compare=False)

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if c.size > self.basis.M:
            raise ValidationError(
                f"{c.size} coefficients exceed basis size M={self.basis.M}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def __len__(self):
        return self.coeffs.size

    def __getitem__(self, item):
        return self.coeffs[item]

    def __call__(self, times):
        return expand(self, times)

    def truncate(self, m):
        return CoeffVector(self.coeffs[:m], self.basis)


def laguerre_poly_eval(k, x):
    """``L_k(x)`` by the recurrence ``(j+1) L_{j+1} = (2j+1-x) L_j - j L_{j-1}``."""
    if k < 0:
        raise ValidationError("polynomial degree must be non-negative")
    x = np.asarray(x, dtype=float)
    prev = np.ones_like(x)
    if k == 0:
        return prev[()] if prev.ndim == 0 else prev
    cur = 1.0 - x
    for j in range(1, k):
        prev, cur = cur, ((2 * j + 1 - x) * cur - j * prev) / (j + 1)
    return cur[()] if cur.ndim == 0 else cur


def laguerre_functions(a, m, t):
    """Matrix of ``phi_k(t_i)`` for ``k < m``; rows follow ``t``."""
    t = np.asarray(t, dtype=float).reshape(-1)
    if np.any(t < 0):
        raise ValidationError("Laguerre functions are defined for t >= 0 only")
    out = np.empty((t.size, m))
    x = 2.0 * a * t
    out[:, 0] = math.sqrt(2.0 * a) * np.exp(-a * t)
    if m > 1:
        out[:, 1] = out[:, 0] * (1.0 - x)
    for k in range(1, m - 1):
        out[:, k + 1] = ((2 * k + 1 - x) * out[:, k] - k * out[:, k - 1]) / (k + 1)
    return out


def basis_eval(basis, k, t):
    """``phi_k(t)`` for the given basis (scalar or array ``t``)."""
    if not 0 <= k < basis.M:
        raise ValidationError(f"index k={k} outside basis of size {basis.M}")
    t_arr = np.asarray(t, dtype=float)
    vals = laguerre_functions(basis.a, k + 1, t_arr)[:, k]
    return vals.reshape(t_arr.shape)[()] if t_arr.ndim == 0 else vals.reshape(t_arr.shape)


def design_matrix(basis, times):
    """``n x M`` matrix with entries ``phi_k(t_i)``."""
    times = np.asarray(times, dtype=float).reshape(-1)
    if times.size < 1:
        raise ValidationError("design matrix needs at least one time point")
    if np.any(times < 0):
        raise ValidationError("negative times are not allowed in the design matrix")
    return laguerre_functions(basis.a, basis.M, times)


def project_function(func: Callable, basis: LaguerreBasis, m: int | None = None,
                     quad: QuadratureConfig | None = None) -> CoeffVector:
    """Laguerre coefficients ``int_0^inf func(t) phi_k(t) dt`` for ``k < m``.

    ``func`` must accept a numpy array.  The integral is truncated at
    ``quad.horizon(a, m)``; the neglected tail is estimated by integrating
    ``|func * phi_k|`` over one more horizon length, and a
    :class:`QuadratureError` is raised if it exceeds ``quad.tail_tol``.
    """
    quad = quad or QuadratureConfig()
    m = basis.M if m is None else int(m)
    if not 1 <= m <= basis.M:
        raise ValidationError(f"projection size m={m} must lie in [1, {basis.M}]")
    nodes, weights = quad.rule(basis.a, m)
    fx = np.asarray(func(nodes), dtype=float)
    if not np.all(np.isfinite(fx)):
        raise QuadratureError("function to project is not finite on the quadrature grid")
    phi = laguerre_functions(basis.a, m, nodes)
    coeffs = phi.T @ (weights * fx)

    T = quad.horizon(basis.a, m)
    tail_nodes, tail_weights = composite_rule(T, 2.0 * T, min(2.0 / basis.a, quad.max_panel_width),
                                              quad.order)
    tail_fx = np.abs(np.asarray(func(tail_nodes), dtype=float))
    tail = np.abs(laguerre_functions(basis.a, m, tail_nodes)).T @ (tail_weights * tail_fx)
    tail_est = float(np.max(tail)) if np.all(np.isfinite(tail)) else math.inf
    if tail_est > quad.tail_tol:
        raise QuadratureError(
            f"projection tail beyond t={T:.4g} is {tail_est:.3e} > {quad.tail_tol:.1e}; "
            f"the function does not decay fast enough against exp(-{basis.a:.4g} t)")
    return CoeffVector(coeffs, basis, tail_estimate=tail_est)


def expand(coeffs: CoeffVector, times) -> np.ndarray:
    """Evaluate ``sum_k c_k phi_k(t_i)``."""
    times = np.asarray(times, dtype=float)
    flat = times.reshape(-1)
    m = len(coeffs)
    if m == 0:
        if np.any(flat < 0):
            raise ValidationError("negative times")
        return np.zeros(times.shape)
    vals = laguerre_functions(coeffs.basis.a, m, flat) @ coeffs.coeffs
    return vals.reshape(times.shape)


def least_squares_coefficients(basis, times, values):
    """Discrete least-squares Laguerre fit of samples (orthogonal factorization).

    Returns the coefficient vector and the RMS residual on the samples.
    """
    times = np.asarray(times, dtype=float).reshape(-1)
    values = np.asarray(values, dtype=float).reshape(-1)
    phi = design_matrix(basis, times)
    q, r = np.linalg.qr(phi)
    diag = np.abs(np.diag(r))
    if times.size < basis.M or diag.min() <= 1e-10 * diag.max():
        raise RankDeficientDesign(
            f"{times.size} samples cannot determine {basis.M} Laguerre coefficients")
    c = np.linalg.solve(r, q.T @ values)
    resid = values - phi @ c
    return CoeffVector(c, basis), float(np.sqrt(np.mean(resid ** 2)))


def select_scale_a(g, M, a_grid=None, *, times=None, horizon=None, quad=None):
    """Pick the grid value of ``a`` whose ``M``-term expansion best reproduces ``g``.

    Parameters
    ----------
    g : callable or Observations
        An analytic kernel (projected with :func:`project_function` and
        compared on ``times``) or sampled kernel values (least-squares fit,
        compared on the sample times).
    M : int
        Number of Laguerre terms.
    a_grid : sequence of float, optional
        Candidate scales, default :data:`DEFAULT_A_GRID`.
    times : array, optional
        Evaluation grid for a callable ``g``.  Defaults to 2001 equispaced
        points on ``[0, horizon]``.
    horizon : float, optional
        Right end of the default evaluation grid (required for callables when
        ``times`` is not given).

    Returns
    -------
    a_star : float
    fit_error : float
        Discrete RMS error of the reconstruction at ``a_star``.

    Ties go to the smallest ``a``.
    """
    grid = np.asarray(DEFAULT_A_GRID if a_grid is None else a_grid, dtype=float).reshape(-1)
    if grid.size == 0 or np.any(~(grid > 0)):
        raise ValidationError("a_grid must be non-empty with positive entries")
    errors = scale_fit_errors(g, M, grid, times=times, horizon=horizon, quad=quad)
    best = min(range(grid.size), key=lambda i: (errors[i], grid[i]))
    return float(grid[best]), float(errors[best])


def scale_fit_errors(g, M, a_grid, *, times=None, horizon=None, quad=None):
    """Discrete RMS reconstruction error of ``g`` for every ``a`` in ``a_grid``."""
    if callable(g):
        if times is None:
            if horizon is None:
                raise ValidationError("either times or horizon is needed for a callable kernel")
            times = np.linspace(0.0, horizon, 2001)
        times = np.asarray(times, dtype=float)
        target = np.asarray(g(times), dtype=float)
        errs = []
        for a in a_grid:
            c = project_function(g, LaguerreBasis(a, M), M, quad)
            errs.append(float(np.sqrt(np.mean((expand(c, times) - target) ** 2))))
        return np.array(errs)
    errs = [least_squares_coefficients(LaguerreBasis(a, M), g.times, g.values)[1]
            for a in a_grid]
    return np.array(errs)
