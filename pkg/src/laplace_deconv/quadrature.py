"""Gauss-Legendre quadrature: fixed composite panels and a globally adaptive rule."""

import heapq
from functools import lru_cache

import numpy as np

from .errors import QuadratureError


@lru_cache(maxsize=None)
def gauss_legendre(order):
    """Nodes and weights of the ``order``-point rule on [-1, 1] (read-only arrays)."""
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def composite_rule(lo, hi, width, order=32):
    """Composite Gauss-Legendre rule on ``[lo, hi]``.

    The interval is cut into ``ceil((hi - lo) / width)`` panels of equal size
    (so no panel is wider than ``width``) and each panel carries an
    ``order``-point rule.

    Returns
    -------
    nodes, weights : ndarray
        Flattened nodes and matching weights, nodes increasing.
    """
    if not hi > lo:
        raise ValueError(f"empty interval [{lo}, {hi}]")
    if not width > 0:
        raise ValueError("panel width must be positive")
    npanels = max(1, int(np.ceil((hi - lo) / width - 1e-12)))
    h = (hi - lo) / npanels
    x, w = gauss_legendre(order)
    left = lo + h * np.arange(npanels)
    nodes = (left[:, None] + 0.5 * h * (x + 1.0)).ravel()
    weights = np.tile(0.5 * h * w, npanels)
    return nodes, weights


def _panel(func, lo, hi, x, w):
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    coarse = half * np.dot(w, func(mid + half * x))
    hq = 0.5 * half
    left = hq * np.dot(w, func(0.5 * (lo + mid) + hq * x))
    right = hq * np.dot(w, func(0.5 * (mid + hi) + hq * x))
    fine = left + right
    if not (np.isfinite(fine) and np.isfinite(coarse)):
        raise QuadratureError(f"integrand is not finite on [{lo}, {hi}]")
    return fine, abs(fine - coarse)


def adaptive_gauss_legendre(func, lo, hi, abs_tol=1e-9, rel_tol=0.0, order=15,
                            initial_panels=8, max_panels=20000):
    """Globally adaptive Gauss-Legendre integration of a vectorized ``func``.

    Each panel is integrated with the ``order``-point rule on the whole panel
    and on its two halves; the difference is the panel's error estimate and
    the halves' sum its value.  The panel with the largest estimate is bisected
    until the summed estimate drops below ``max(abs_tol, rel_tol * |I|)``.

    Returns
    -------
    value, error : float

    Raises
    ------
    QuadratureError
        If the tolerance is not met within ``max_panels`` panels or the
        integrand produces non-finite values.
    """
    if hi == lo:
        return 0.0, 0.0
    if hi < lo:
        value, err = adaptive_gauss_legendre(func, hi, lo, abs_tol, rel_tol, order,
                                             initial_panels, max_panels)
        return -value, err
    x, w = gauss_legendre(order)
    edges = np.linspace(lo, hi, initial_panels + 1)
    heap = []
    total = 0.0
    total_err = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, err = _panel(func, a, b, x, w)
        heapq.heappush(heap, (-err, a, b, val))
        total += val
        total_err += err
    npanels = initial_panels
    while total_err > max(abs_tol, rel_tol * abs(total)):
        if npanels >= max_panels:
            raise QuadratureError(
                f"adaptive quadrature on [{lo}, {hi}] did not converge: "
                f"error estimate {total_err:.3e} after {npanels} panels")
        neg_err, a, b, val = heapq.heappop(heap)
        total -= val
        total_err += neg_err
        m = 0.5 * (a + b)
        for p, q in ((a, m), (m, b)):
            v, e = _panel(func, p, q, x, w)
            heapq.heappush(heap, (-e, p, q, v))
            total += v
            total_err += e
        npanels += 1
    # re-sum to shed accumulated cancellation from the running updates
    total = float(sum(item[3] for item in heap))
    total_err = float(sum(-item[0] for item in heap))
    return total, total_err
