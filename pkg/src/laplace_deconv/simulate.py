"""Synthetic perfusion-style datasets and Monte-Carlo risk studies.

Kernels (arterial input functions) are rescaled to peak at 1 on ``[0, T]``:

* ``g2(t) = t^2 exp(-0.1 t)``, a long injection;
* ``g3(t) = t^7 / (100 + t) exp(-0.9 t^{3/4})``, with recirculation;
* ``g1_surrogate``, a gamma-variate first pass plus a damped second pass.
  It is an invented stand-in for a measured AIF, not a reproduction of one.

Targets (residue curves) are ``f1 = e^{-0.1x}``, ``f2 = e^{-0.6x}``,
``f3 = (f1 + f2) / 2``, ``f4`` the survival function of Gamma(2, scale 0.5)
and ``f5 = (x + 1)^{-1/3}``.

Noise is drawn from a Philox generator keyed by ``(seed, rep)``; the sample
index is the counter, so any replicate can be regenerated on its own.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, fields
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import optimize, stats

from .design import Observations
from .errors import (DeconvolutionError, MonteCarloFailure, NegativeVariance, ValidationError,
                     stage)
from .laguerre import LaguerreBasis, project_function, select_scale_a
from .quadrature import adaptive_gauss_legendre
from .select import Deconvolver, EstimatorConfig

log = logging.getLogger(__name__)

KERNELS = ("g2", "g3", "g1_surrogate", "custom")
TARGETS = ("f1", "f2", "f3", "f4", "f5", "custom")
SIGMA_FORMS = ("averaged", "literal")
# number of terms used when choosing ``a`` (the surrogate is fitted with a longer expansion)
SCALE_FIT_TERMS = {"g1_surrogate": 18}


def _g2_raw(t):
    t = np.asarray(t, dtype=float)
    return t ** 2 * np.exp(-0.1 * t)


def _g3_raw(t):
    t = np.asarray(t, dtype=float)
    return t ** 7 / (100.0 + t) * np.exp(-0.9 * t ** 0.75)


def _gamma_variate(t, t_peak, shape):
    s = np.clip(np.asarray(t, dtype=float) / t_peak, 0.0, None)
    return s ** shape * np.exp(shape * (1.0 - s))


def _g1_raw(t):
    # first pass peaking at t=6, recirculation 14 time units later at a quarter height
    t = np.asarray(t, dtype=float)
    return _gamma_variate(t, 6.0, 3.0) + 0.25 * _gamma_variate(t - 14.0, 8.0, 2.0)


_RAW_KERNELS = {"g2": _g2_raw, "g3": _g3_raw, "g1_surrogate": _g1_raw}


@lru_cache(maxsize=None)
def kernel_peak(kind, T):
    """Maximum of the raw kernel over ``[0, T]``.

    ``g2`` peaks at ``t = 20`` (root of ``2/t = 0.1``) when ``T >= 20``;
    other kernels are located on a fine grid and refined with a bounded
    scalar search.
    """
    raw = _RAW_KERNELS[kind]
    if kind == "g2":
        t_star = min(20.0, T)
        return float(raw(t_star))
    grid = np.linspace(0.0, T, 20001)
    vals = raw(grid)
    i = int(np.argmax(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    res = optimize.minimize_scalar(lambda s: -float(raw(s)), bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-12})
    return float(max(vals[i], -res.fun))


def kernel_eval(kind, t, T=100.0, normalized=True):
    """Kernel ``kind`` at times ``t >= 0``, scaled to peak at 1 on ``[0, T]``."""
    if kind not in _RAW_KERNELS:
        raise ValidationError(f"unknown kernel {kind!r}; expected one of {KERNELS[:-1]}")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValidationError("kernels are evaluated at t >= 0 only")
    vals = _RAW_KERNELS[kind](t)
    return vals / kernel_peak(kind, float(T)) if normalized else vals


def kernel_laplace(kind, T=100.0):
    """Closed-form Laplace transform of a normalized kernel, where one exists.

    Only ``g2`` has one here: ``2 / (s + 0.1)^3`` divided by its peak value.
    """
    if kind != "g2":
        raise ValidationError(f"no closed-form Laplace transform for kernel {kind!r}")
    peak = kernel_peak("g2", float(T))
    return lambda s: 2.0 / (s + 0.1) ** 3 / peak


def target_eval(kind, x):
    """Residue curve ``kind`` at ``x >= 0``."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise ValidationError("targets are evaluated at x >= 0 only")
    if kind == "f1":
        return np.exp(-0.1 * x)
    if kind == "f2":
        return np.exp(-0.6 * x)
    if kind == "f3":
        return 0.5 * np.exp(-0.1 * x) + 0.5 * np.exp(-0.6 * x)
    if kind == "f4":
        return stats.gamma.sf(x, 2.0, scale=0.5)
    if kind == "f5":
        return (x + 1.0) ** (-1.0 / 3.0)
    raise ValidationError(f"unknown target {kind!r}; expected one of {TARGETS[:-1]}")


def true_convolution(kernel: Callable, target: Callable, t, abs_tol=1e-9):
    """``q(t) = int_0^t g(t - s) f(s) ds`` by adaptive Gauss-Legendre quadrature."""
    t_arr = np.asarray(t, dtype=float)
    out = np.empty(t_arr.size)
    for i, ti in enumerate(t_arr.reshape(-1)):
        if ti < 0:
            raise ValidationError("convolution is evaluated at t >= 0 only")
        if ti == 0:
            out[i] = 0.0
            continue
        out[i], _ = adaptive_gauss_legendre(lambda s, ti=ti: kernel(ti - s) * target(s), 0.0, ti,
                                            abs_tol=abs_tol)
    return out.reshape(t_arr.shape)[()] if t_arr.ndim == 0 else out.reshape(t_arr.shape)


def variance_over(func, T, form="averaged"):
    """Spread of ``func`` on ``[0, T]``.

    ``averaged``: ``(1/T) int f^2 - ((1/T) int f)^2``.  ``literal``: the same
    without the ``1/T`` factors, which is not a variance and can be negative.
    """
    m1, _ = adaptive_gauss_legendre(func, 0.0, T, abs_tol=1e-12, rel_tol=1e-12)
    m2, _ = adaptive_gauss_legendre(lambda x: func(x) ** 2, 0.0, T, abs_tol=1e-12, rel_tol=1e-12)
    if form == "averaged":
        return m2 / T - (m1 / T) ** 2
    if form == "literal":
        return m2 - m1 ** 2
    raise ValidationError(f"unknown variance form {form!r}; expected one of {SIGMA_FORMS}")


def snr_to_sigma(kernel: Callable, target: Callable, snr, T, form="averaged"):
    """Noise level giving ``snr = sqrt(Var_T(f) / (sigma^2 Var_T(g)))``."""
    if not snr > 0:
        raise ValidationError(f"snr must be positive, got {snr!r}")
    vf = variance_over(target, T, form)
    vg = variance_over(kernel, T, form)
    if vf < 0 or vg <= 0:
        raise NegativeVariance(
            f"{form} variance is not positive (Var f = {vf:.4g}, Var g = {vg:.4g})")
    return math.sqrt(max(vf, 0.0) / (snr ** 2 * vg))


@dataclass(frozen=True)
class Scenario:
    """One Monte-Carlo cell together with the estimator settings.

    ``a`` is a positive number or ``"auto"`` (grid search of the kernel fit).
    ``sigma`` overrides the SNR calibration when given.  ``kernel_func`` and
    ``target_func`` are required for the ``custom`` kinds.
    """

    kernel: str = "g2"
    target: str = "f1"
    n: int = 100
    T: float = 100.0
    snr: float = 5.0
    reps: int = 400
    seed: int = 20240101
    a: float | str = "auto"
    M: int = 11
    B: float = 0.5
    c_pen: float = 1.5
    alpha: float | None = None
    alpha_range: tuple = (1, 7)
    refit_per_m: bool = False
    sigma: float | None = None
    sigma_form: str = "averaged"
    kernel_func: Callable | None = field(default=None, repr=False)
    target_func: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        if isinstance(self.alpha_range, (list, tuple)):
            object.__setattr__(self, "alpha_range", tuple(self.alpha_range))
        problems = self.problems()
        if problems:
            err = ValidationError("invalid scenario: " + "; ".join(problems))
            err.problems = problems
            raise err

    def problems(self):
        """Every validation failure, one message per offending field."""
        out = []
        if self.kernel not in KERNELS:
            out.append(f"kernel: unknown kernel {self.kernel!r} (expected one of {', '.join(KERNELS)})")
        elif self.kernel == "custom" and self.kernel_func is None:
            out.append("kernel: 'custom' needs kernel_func")
        if self.target not in TARGETS:
            out.append(f"target: unknown target {self.target!r} (expected one of {', '.join(TARGETS)})")
        elif self.target == "custom" and self.target_func is None:
            out.append("target: 'custom' needs target_func")
        if not _is_int(self.n) or self.n < 2:
            out.append(f"n: must be an integer >= 2, got {self.n!r}")
        if not _is_pos(self.T):
            out.append(f"T: must be positive, got {self.T!r}")
        if not _is_pos(self.snr):
            out.append(f"snr: must be positive, got {self.snr!r}")
        if not _is_int(self.reps) or self.reps < 1:
            out.append(f"reps: must be an integer >= 1, got {self.reps!r}")
        if not _is_int(self.seed) or not 0 <= self.seed < 2 ** 64:
            out.append(f"seed: must be an unsigned 64-bit integer, got {self.seed!r}")
        if self.a != "auto" and not _is_pos(self.a):
            out.append(f"a: must be positive or 'auto', got {self.a!r}")
        if not _is_int(self.M) or self.M < 1:
            out.append(f"M: must be a positive integer, got {self.M!r}")
        elif _is_int(self.n) and self.n < self.M:
            out.append(f"M: {self.M} exceeds the number of samples n={self.n}")
        if not _is_pos(self.B):
            out.append(f"B: must be positive, got {self.B!r}")
        if not _is_pos(self.c_pen):
            out.append(f"c_pen: must be positive, got {self.c_pen!r}")
        if self.alpha is not None and not (isinstance(self.alpha, (int, float))
                                           and math.isfinite(self.alpha)):
            out.append(f"alpha: must be a number or None, got {self.alpha!r}")
        if (not isinstance(self.alpha_range, tuple) or len(self.alpha_range) != 2 or not all(_is_int(v) for v in self.alpha_range)
                or not 1 <= self.alpha_range[0] < self.alpha_range[1]):
            out.append(f"alpha_range: must be two integers 1 <= lo < hi, got {self.alpha_range!r}")
        if self.sigma is not None and not (isinstance(self.sigma, (int, float)) and self.sigma >= 0):
            out.append(f"sigma: must be a non-negative number, got {self.sigma!r}")
        if self.sigma_form not in SIGMA_FORMS:
            out.append(f"sigma_form: must be one of {SIGMA_FORMS}, got {self.sigma_form!r}")
        return out

    def replace(self, **changes):
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(changes)
        return Scenario(**vals)

    def estimator_config(self):
        return EstimatorConfig(M=self.M, B=self.B, c_pen=self.c_pen, alpha=self.alpha,
                               alpha_range=self.alpha_range, refit_per_m=self.refit_per_m)

    def to_dict(self):
        d = {f.name: getattr(self, f.name) for f in fields(self)
             if f.name not in ("kernel_func", "target_func")}
        d["alpha_range"] = list(self.alpha_range)
        return d

    @property
    def times(self):
        return self.T * np.arange(1, self.n + 1) / self.n

    def kernel_callable(self):
        if self.kernel == "custom":
            return self.kernel_func
        T = float(self.T)
        kind = self.kernel
        return lambda t: kernel_eval(kind, t, T)

    def target_callable(self):
        if self.target == "custom":
            return self.target_func
        kind = self.target
        return lambda x: target_eval(kind, x)


def _is_int(v):
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _is_pos(v):
    return isinstance(v, (int, float, np.number)) and not isinstance(v, bool) and math.isfinite(v) and v > 0


@lru_cache(maxsize=64)
def _truth(scn):
    return true_convolution(scn.kernel_callable(), scn.target_callable(), scn.times)


@lru_cache(maxsize=64)
def _sigma(scn):
    if scn.sigma is not None:
        return float(scn.sigma)
    return snr_to_sigma(scn.kernel_callable(), scn.target_callable(), scn.snr, scn.T, scn.sigma_form)


def scenario_truth(scenario):
    """Noiseless convolution ``q(t_i)`` on the scenario grid (cached)."""
    return _truth(scenario)


def scenario_sigma(scenario):
    """Noise level of the scenario: the override, else the SNR calibration (cached)."""
    return _sigma(scenario)


@lru_cache(maxsize=64)
def kernel_coefficients(scenario):
    """Laguerre coefficients of the scenario kernel, with ``a`` chosen if ``"auto"``."""
    g = scenario.kernel_callable()
    if scenario.a == "auto":
        terms = max(scenario.M, SCALE_FIT_TERMS.get(scenario.kernel, scenario.M))
        a, _ = select_scale_a(g, terms, horizon=scenario.T)
    else:
        a = float(scenario.a)
    return project_function(g, LaguerreBasis(a, scenario.M))


def noise(seed, rep, n):
    """Standard normal vector of length ``n`` from Philox keyed by ``(seed, rep)``."""
    bitgen = np.random.Philox(key=np.array([seed, rep], dtype=np.uint64))
    return np.random.Generator(bitgen).standard_normal(n)


def simulate_dataset(scenario, rep_index):
    """Replicate ``rep_index``: ``y_i = q(t_i) + sigma eps_i`` with known sigma."""
    if not _is_int(rep_index) or rep_index < 0:
        raise ValidationError(f"replicate index must be a non-negative integer, got {rep_index!r}")
    q = scenario_truth(scenario)
    sigma = scenario_sigma(scenario)
    y = q + sigma * noise(scenario.seed, rep_index, scenario.n) if sigma > 0 else q.copy()
    return Observations(scenario.times, y, scenario.T, sigma)


def empirical_risk(fit, target, times):
    """``mean_i (fhat(t_i) - f(t_i))^2``; ``fit`` and ``target`` are callables."""
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        raise ValidationError("empirical risk needs at least one time point")
    return float(np.mean((np.asarray(fit(times)) - np.asarray(target(times))) ** 2))


@dataclass(frozen=True, eq=False)
class RiskReport:
    """Monte-Carlo summary of one scenario.

    ``fixed_m_risk[m-1]`` is the mean risk of the size-``m`` estimator; its
    minimum is the oracle risk.  ``runtime`` is wall-clock seconds and is
    excluded from :meth:`to_dict` so reports are reproducible bit for bit.
    """

    scenario: Scenario
    mean_risk: float
    std_error: float
    risks: np.ndarray
    m_hat_hist: np.ndarray
    fixed_m_risk: np.ndarray
    a: float
    sigma: float
    alpha: float
    n_failed: int = 0
    failures: tuple = ()
    runtime: float = field(default=0.0, compare=False)

    @property
    def risk_x100(self):
        return 100.0 * self.mean_risk

    @property
    def oracle_risk(self):
        return float(np.min(self.fixed_m_risk))

    @property
    def oracle_m(self):
        return int(np.argmin(self.fixed_m_risk)) + 1

    def to_dict(self):
        return {
            "scenario": self.scenario.to_dict(),
            "mean_risk": self.mean_risk,
            "risk_x100": self.risk_x100,
            "std_error": self.std_error,
            "m_hat_hist": [int(v) for v in self.m_hat_hist],
            "fixed_m_risk": [float(v) for v in self.fixed_m_risk],
            "oracle_risk": self.oracle_risk,
            "oracle_m": self.oracle_m,
            "a": self.a,
            "sigma": self.sigma,
            "alpha": self.alpha,
            "n_failed": self.n_failed,
            "failures": list(self.failures),
        }


def prepare(scenario):
    """Kernel coefficients, noise level and estimator shared by all replicates."""
    with stage("simulate"):
        g_coeffs = kernel_coefficients(scenario)
        sigma = scenario_sigma(scenario)
    dec = Deconvolver(scenario.times, scenario.T, g_coeffs, scenario.estimator_config())
    return g_coeffs, sigma, dec


def monte_carlo(scenario, max_failure_rate=0.01):
    """Run ``scenario.reps`` independent replicates and average their risks.

    Replicates that raise a package error are recorded and skipped; if more
    than ``max_failure_rate`` of them fail, :class:`MonteCarloFailure` is
    raised.
    """
    start = time.perf_counter()
    g_coeffs, sigma, dec = prepare(scenario)
    times = scenario.times
    f_true = scenario.target_callable()(times)
    phi = dec.factor.phi
    M = scenario.M

    risks = np.full(scenario.reps, np.nan)
    m_hats = np.zeros(scenario.reps, dtype=int)
    fixed = np.zeros(M)
    failures = []
    for rep in range(scenario.reps):
        try:
            obs = simulate_dataset(scenario, rep)
            fit = dec.fit(obs.values, sigma)
            _, cands = dec.coefficient_paths(obs.values)
        except DeconvolutionError as err:
            failures.append(f"rep {rep}: {err}")
            continue
        risks[rep] = float(np.mean((phi[:, : fit.m_hat] @ fit.coeffs.coeffs - f_true) ** 2))
        m_hats[rep] = fit.m_hat
        for m, c in enumerate(cands, start=1):
            fixed[m - 1] += np.mean((phi[:, :m] @ c - f_true) ** 2)

    n_failed = len(failures)
    if n_failed > max_failure_rate * scenario.reps:
        raise MonteCarloFailure(
            f"{n_failed} of {scenario.reps} replicates failed; first: {failures[0]}")
    ok = risks[~np.isnan(risks)]
    n_ok = ok.size
    se = float(ok.std(ddof=1) / math.sqrt(n_ok)) if n_ok > 1 else 0.0
    runtime = time.perf_counter() - start
    log.info("scenario %s/%s snr=%g n=%d: 100R=%.4g in %.2fs", scenario.kernel, scenario.target,
             scenario.snr, scenario.n, 100 * ok.mean(), runtime)
    return RiskReport(
        scenario=scenario,
        mean_risk=float(ok.mean()),
        std_error=se,
        risks=risks,
        m_hat_hist=np.bincount(m_hats[~np.isnan(risks)], minlength=M + 1)[1:],
        fixed_m_risk=fixed / n_ok,
        a=g_coeffs.basis.a,
        sigma=sigma,
        alpha=dec.alpha,
        n_failed=n_failed,
        failures=tuple(failures),
        runtime=runtime,
    )
