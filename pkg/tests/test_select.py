import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import linalg, optimize

from laplace_deconv.design import Observations
from laplace_deconv.errors import DegenerateRegression, NotSymmetric, ValidationError
from laplace_deconv.laguerre import CoeffVector, LaguerreBasis, expand, project_function
from laplace_deconv.quadrature import adaptive_gauss_legendre
from laplace_deconv.select import (Deconvolver, EstimatorConfig, PenaltyTable, contrast_literal,
                                   contrast_value, estimate_alpha, fit, jacobi_eigenvalues, penalty,
                                   q_matrix, select_model, spectral_norm, variance_trace)
from laplace_deconv.simulate import kernel_eval
from laplace_deconv.toeplitz import LowerToeplitz, build_G

T, N = 100.0, 200
TIMES = T * np.arange(1, N + 1) / N


def g2_coeffs(a=0.25, M=11):
    return project_function(lambda t: kernel_eval("g2", t), LaguerreBasis(a, M))


def short_kernel(a=0.5, M=11):
    """A kernel that is exactly a three-term Laguerre combination."""
    c = np.zeros(M)
    c[:3] = [0.8, 0.3, -0.1]
    return CoeffVector(c, LaguerreBasis(a, M))


def convolve_numerically(g, f, times):
    """q(t) = int_0^t g(t - s) f(s) ds by adaptive quadrature (oracle)."""
    return np.array([adaptive_gauss_legendre(lambda s: g(t - s) * f(s), 0.0, t, abs_tol=1e-13)[0]
                     for t in times])


def largest_root_by_bisection(S):
    """lambda_max from the characteristic polynomial, bracketed by Gershgorin."""
    coeffs = np.poly(S)
    hi = np.max(np.sum(np.abs(S), axis=1)) * 1.01 + 1e-12
    # scan down from the Gershgorin bound to bracket the top root
    grid = np.linspace(hi, 0.0, 20001)
    vals = np.polyval(coeffs, grid)
    j = np.flatnonzero(np.sign(vals[1:]) != np.sign(vals[:-1]))[0]
    return optimize.brentq(lambda x: np.polyval(coeffs, x), grid[j + 1], grid[j], xtol=1e-14, rtol=1e-15)


# --- Q, trace, top eigenvalue -------------------------------------------------------------

def test_q_matrix_examples():
    np.testing.assert_allclose(q_matrix(LowerToeplitz([1, 0, 0, 0, 0]), np.eye(5)), np.eye(5))
    np.testing.assert_allclose(q_matrix(LowerToeplitz([2.0]), np.eye(1)), [[0.25]])


def test_q_matrix_matches_dense_oracle():
    rng = np.random.default_rng(4)
    G = LowerToeplitz(np.r_[1.5, rng.standard_normal(5) * 0.4])
    X = rng.standard_normal((6, 6))
    Om = X @ X.T + np.eye(6)
    Gi = np.linalg.inv(G.dense())
    Q = q_matrix(G, Om)
    np.testing.assert_allclose(Q, Gi @ Om @ Gi.T, rtol=1e-10, atol=1e-10)
    np.testing.assert_array_equal(Q, Q.T)


def test_variance_trace_examples():
    assert variance_trace(np.eye(7)) == 7
    assert variance_trace(np.diag([1.0, 4.0])) == 5
    with pytest.raises(ValidationError):
        variance_trace(np.ones((2, 3)))


def test_variance_trace_equals_frobenius_of_square_root():
    dec = Deconvolver(TIMES, T, g2_coeffs(), EstimatorConfig(M=6))
    Q = q_matrix(dec.G.leading(6), dec.factor.omega(6))
    root = linalg.sqrtm(Q).real
    assert variance_trace(Q) == pytest.approx(np.sum(root ** 2), rel=1e-8)


def test_spectral_norm_examples():
    assert spectral_norm(np.diag([1.0, 4.0])) == pytest.approx(4.0)
    assert spectral_norm(np.array([[2.0, 1.0], [1.0, 2.0]])) == pytest.approx(3.0)
    with pytest.raises(NotSymmetric):
        spectral_norm(np.array([[1.0, 0.1], [0.0, 1.0]]))


def test_spectral_norm_matches_characteristic_polynomial():
    rng = np.random.default_rng(8)
    X = rng.standard_normal((8, 8))
    S = X @ X.T
    assert spectral_norm(S) == pytest.approx(largest_root_by_bisection(S), rel=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 12), st.integers(0, 2 ** 32 - 1))
def test_jacobi_spectrum_matches_lapack(m, seed):
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((m, m))
    S = X + X.T
    ev = np.linalg.eigvalsh(S)
    np.testing.assert_allclose(jacobi_eigenvalues(S), ev, atol=1e-10 * max(1.0, np.abs(ev).max()))


def test_jacobi_is_deterministic():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((9, 9))
    S = X @ X.T
    assert np.array_equal(jacobi_eigenvalues(S), jacobi_eigenvalues(S.copy()))


# --- alpha, penalty, contrast, argmin ------------------------------------------------------

def test_estimate_alpha_exact_power_laws():
    m = np.arange(1, 8)
    alpha, logc = estimate_alpha(m ** 2.0)
    assert alpha == pytest.approx(2.0, abs=1e-12) and logc == pytest.approx(0.0, abs=1e-12)
    alpha, logc = estimate_alpha(np.full(7, 5.0))
    assert alpha == pytest.approx(0.0, abs=1e-12) and logc == pytest.approx(math.log(5.0))


def test_estimate_alpha_respects_range():
    rho2 = np.r_[np.arange(1, 8) ** 3.0, [1e9, 1e12]]
    assert estimate_alpha(rho2, (1, 7))[0] == pytest.approx(3.0)


def test_estimate_alpha_degenerate():
    with pytest.raises(DegenerateRegression):
        estimate_alpha([2.0], (1, 7))
    with pytest.raises(DegenerateRegression):
        estimate_alpha([2.0, 3.0, 4.0], (3, 7))
    with pytest.raises(DegenerateRegression):
        estimate_alpha([2.0, 0.0, 4.0])


def test_estimate_alpha_on_g2_design():
    # kernel order r = 3, so rho_m^2 grows roughly like m^{2r}
    dec = Deconvolver(TIMES, T, g2_coeffs(0.25), EstimatorConfig())
    assert 5.0 <= dec.alpha <= 7.0


def test_penalty_examples():
    assert penalty(1, 1.0, 1.0, 1.0, 100.0, 100, 0.5, 0.0, c_pen=4) == pytest.approx(6.0)
    assert penalty(math.e, 0.0, 1.0, 1.0, 50.0, 50, 1.0, 0.0, c_pen=1) == pytest.approx(4.0)


def test_penalty_table_for_g2_is_positive_and_increasing():
    dec = Deconvolver(TIMES, T, g2_coeffs(), EstimatorConfig())
    pen = dec.penalties(0.1)
    assert np.all(pen > 0)
    assert np.all(np.diff(pen[2:]) > 0)
    assert np.all(dec.v2 >= dec.rho2) and np.all(dec.rho2 > 0)


def test_contrast_examples():
    assert contrast_value([]) == 0.0
    assert contrast_value([3.0, 4.0]) == -25.0


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=12), st.data())
def test_contrast_matches_literal_definition(full, data):
    m = data.draw(st.integers(1, len(full)))
    assert contrast_value(full[:m]) == pytest.approx(contrast_literal(full[:m], full), abs=1e-12 * (1 + np.sum(np.square(full))))


def test_select_model_examples():
    assert select_model(np.array([5.0, 1.0, 7.0])) == 2
    assert select_model(np.zeros(4)) == 1
    tab = PenaltyTable(v2=np.ones(3), rho2=np.ones(3), pen=np.array([1.0, 1.0, 1.0]),
                       contrast=np.array([0.0, -2.0, -2.0]), alpha=1.0, log_c=0.0)
    assert select_model(tab) == 2


def test_identity_design_trace_is_nondecreasing():
    rng = np.random.default_rng(3)
    G = LowerToeplitz(np.r_[1.0, rng.standard_normal(9) * 0.5])
    v2 = [variance_trace(q_matrix(G.leading(m), np.eye(m))) for m in range(1, 11)]
    assert np.all(np.diff(v2) >= 0)


def test_config_validation():
    for bad in [dict(M=0), dict(B=0.0), dict(c_pen=-1.0), dict(alpha_range=(3, 3)), dict(alpha_range=(0, 7))]:
        with pytest.raises(ValidationError):
            EstimatorConfig(**bad)


# --- assembled estimator -------------------------------------------------------------------

def test_noiseless_phi0_is_recovered():
    a = 0.5
    g = short_kernel(a)
    phi0 = CoeffVector([1.0], g.basis)
    q = convolve_numerically(g, phi0, TIMES)
    res = fit(Observations(TIMES, q, T, sigma=1e-6), g)
    assert res.m_hat == 1
    np.testing.assert_allclose(res.full_coeffs, np.eye(11)[0], atol=1e-7)
    assert res.beta_hat == pytest.approx(math.sqrt(2 * a), abs=1e-7)
    assert res.transit_integral == pytest.approx(2.0, abs=1e-7)
    np.testing.assert_allclose(res.fitted_convolution(TIMES), q, atol=1e-9)


def test_functionals_match_their_definitions():
    res = fit(Observations(TIMES, np.exp(-0.05 * TIMES), T, sigma=0.01), g2_coeffs())
    c = res.coeffs.coeffs
    a = res.basis.a
    assert res.beta_hat == pytest.approx(float(expand(res.coeffs, np.array([0.0]))[0]), rel=1e-12)
    assert res.beta_hat == pytest.approx(math.sqrt(2 * a) * c.sum(), rel=1e-12)
    assert res.transit_integral == pytest.approx(math.sqrt(2 / a) * np.sum((-1.0) ** np.arange(c.size) * c),
                                                 rel=1e-12)
    assert 1 <= res.m_hat <= 11


def test_zero_data():
    res = fit(Observations(TIMES, np.zeros(N), T, sigma=1.0), g2_coeffs())
    assert res.m_hat == 1
    assert np.all(res.coeffs.coeffs == 0.0)


def test_pure_noise_selects_smallest_model():
    dec = Deconvolver(TIMES, T, g2_coeffs(), EstimatorConfig())
    rng = np.random.default_rng(99)
    fits = [dec.fit(rng.standard_normal(N), 1.0) for _ in range(100)]
    pen1 = dec.penalties(1.0)[0]
    assert np.mean([f.m_hat == 1 for f in fits]) >= 0.95
    assert np.mean([np.sum(f.coeffs.coeffs ** 2) for f in fits]) < pen1


def test_nesting_of_candidates():
    rng = np.random.default_rng(12)
    dec = Deconvolver(TIMES, T, g2_coeffs(), EstimatorConfig())
    y = np.exp(-0.1 * TIMES) + 0.1 * rng.standard_normal(N)
    full, cands = dec.coefficient_paths(y)
    for m, c in enumerate(cands, start=1):
        np.testing.assert_allclose(c, full[:m], rtol=0, atol=1e-12)
    res = dec.fit(y, 0.1)
    np.testing.assert_array_equal(res.coeffs.coeffs, full[: res.m_hat])


def test_refit_mode_uses_literal_contrast():
    rng = np.random.default_rng(12)
    cfg = EstimatorConfig(refit_per_m=True)
    dec = Deconvolver(TIMES, T, g2_coeffs(), cfg)
    y = np.exp(-0.1 * TIMES) + 0.1 * rng.standard_normal(N)
    full, cands = dec.coefficient_paths(y)
    res = dec.fit(y, 0.1)
    assert res.table.contrast[2] == pytest.approx(contrast_literal(cands[2], full))
    np.testing.assert_array_equal(res.coeffs.coeffs, cands[res.m_hat - 1])


@settings(max_examples=25, deadline=None)
@given(st.floats(1e-3, 1e3), st.integers(0, 2 ** 32 - 1))
def test_scaling_equivariance(c, seed):
    dec = _SCALING_DEC
    rng = np.random.default_rng(seed)
    y = np.exp(-0.1 * TIMES) + 0.05 * rng.standard_normal(N)
    base = dec.fit(y, 0.05)
    scaled = dec.fit(c * y, c * 0.05)
    assert scaled.m_hat == base.m_hat
    np.testing.assert_allclose(scaled.coeffs.coeffs, c * base.coeffs.coeffs, rtol=1e-9, atol=1e-12 * c)


_SCALING_DEC = Deconvolver(TIMES, T, g2_coeffs(), EstimatorConfig())


def test_fixed_alpha_and_sigma_resolution():
    g = g2_coeffs()
    obs = Observations(TIMES, np.exp(-0.1 * TIMES), T)
    res = fit(obs, g, EstimatorConfig(alpha=3.0), sigma=0.2)
    assert res.table.alpha == 3.0 and res.sigma_used == 0.2
    res = fit(obs, g)
    # estimated from first differences of a smooth curve: tiny but positive
    assert 0 < res.sigma_used < 0.01


def test_errors_carry_stage():
    g = CoeffVector(np.r_[0.0, np.ones(10)], LaguerreBasis(0.3, 11))
    with pytest.raises(Exception) as info:
        fit(Observations(TIMES, np.ones(N), T, sigma=1.0), g)
    assert "[toeplitz]" in str(info.value)
    with pytest.raises(ValidationError):
        fit(Observations(TIMES, np.ones(N), T, sigma=1.0), g2_coeffs(M=5))
