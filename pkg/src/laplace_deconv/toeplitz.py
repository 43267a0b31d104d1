"""Lower-triangular Toeplitz operator linking Laguerre coefficients of g, f and g*f.

With ``b_0 = g_0 / sqrt(2a)`` and ``b_k = (g_k - g_{k-1}) / sqrt(2a)``, the
first ``m`` Laguerre coefficients of ``q = g * f`` are ``q_m = G_m f_m`` where
``G_m[i, j] = b_{i-j}`` for ``j <= i``.  Only the first column is stored; the
product and the solve are plain O(m^2) loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NearSingular, ValidationError

NEAR_SINGULAR_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class LowerToeplitz:
    """Lower-triangular Toeplitz matrix given by its first column."""

    first_col: np.ndarray

    def __post_init__(self):
        b = np.array(self.first_col, dtype=float).reshape(-1)
        if b.size == 0:
            raise ValidationError("Toeplitz matrix needs at least one entry")
        b.setflags(write=False)
        object.__setattr__(self, "first_col", b)

    @property
    def size(self):
        return self.first_col.size

    def leading(self, m):
        """Leading ``m x m`` block, itself lower-triangular Toeplitz."""
        if not 1 <= m <= self.size:
            raise ValidationError(f"block size {m} outside [1, {self.size}]")
        return LowerToeplitz(self.first_col[:m])

    def dense(self):
        m = self.size
        idx = np.subtract.outer(np.arange(m), np.arange(m))
        out = np.where(idx >= 0, self.first_col[np.clip(idx, 0, None)], 0.0)
        return out

    def bandwidth(self, atol=0.0):
        """Number of leading diagonals up to the last one exceeding ``atol``."""
        nz = np.flatnonzero(np.abs(self.first_col) > atol)
        return 0 if nz.size == 0 else int(nz[-1]) + 1


def build_G(g_coeffs, m=None):
    """Convolution matrix ``G_m`` from the kernel's Laguerre coefficients."""
    m = len(g_coeffs) if m is None else int(m)
    if m < 1 or len(g_coeffs) < m:
        raise ValidationError(f"need at least m={m} kernel coefficients, have {len(g_coeffs)}")
    g = np.asarray(g_coeffs.coeffs[:m], dtype=float)
    b = np.empty(m)
    b[0] = g[0]
    b[1:] = np.diff(g)
    return LowerToeplitz(b / math.sqrt(2.0 * g_coeffs.basis.a))


def toeplitz_mul(T, x):
    """``T @ x`` for a vector or a matrix of column vectors."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != T.size:
        raise ValidationError(f"dimension mismatch: matrix size {T.size}, operand {x.shape[0]}")
    b = T.first_col
    out = np.empty_like(x)
    for i in range(T.size):
        out[i] = b[i::-1] @ x[: i + 1]
    return out


def check_invertible(T):
    b = T.first_col
    scale = np.max(np.abs(b))
    if not abs(b[0]) > NEAR_SINGULAR_RTOL * scale:
        raise NearSingular(
            f"leading Toeplitz coefficient {b[0]:.3e} is negligible relative to {scale:.3e}; "
            "the kernel has (numerically) no mass on phi_0")


def toeplitz_solve(T, y):
    """Solve ``T x = y`` by forward substitution (vector or matrix right-hand side)."""
    check_invertible(T)
    y = np.asarray(y, dtype=float)
    if y.shape[0] != T.size:
        raise ValidationError(f"dimension mismatch: matrix size {T.size}, rhs {y.shape[0]}")
    b = T.first_col
    x = np.empty_like(y)
    for i in range(T.size):
        x[i] = (y[i] - b[i:0:-1] @ x[:i]) / b[0]
    return x


def symbol_eval(laplace_G, a, theta):
    """Generating symbol ``G(a (1 + e^{i theta}) / (1 - e^{i theta}))``.

    Its Fourier coefficients are the first-column entries of ``G``.  ``theta``
    may be an array; ``theta = 0 (mod 2 pi)`` maps to ``s = inf`` and is
    rejected.
    """
    theta = np.asarray(theta, dtype=float)
    if np.any(np.isclose(np.mod(theta + np.pi, 2 * np.pi) - np.pi, 0.0, atol=1e-15)):
        raise ValidationError("theta = 0 (mod 2 pi) corresponds to s = infinity")
    z = np.exp(1j * theta)
    return laplace_G(a * (1.0 + z) / (1.0 - z))


def symbol_coefficients(laplace_G, a, count, n_points=4096):
    """First ``count`` Fourier coefficients of the symbol, by FFT.

    The symbol is sampled on the half-shifted grid ``theta_j = 2 pi (j + 1/2) / N``
    so the excluded point ``theta = 0`` is never touched.
    """
    j = np.arange(n_points)
    theta = 2.0 * np.pi * (j + 0.5) / n_points
    vals = symbol_eval(laplace_G, a, theta)
    k = np.arange(count)
    coef = np.fft.fft(vals)[:count] / n_points * np.exp(-1j * np.pi * k / n_points)
    return coef
