import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from laplace_deconv.design import (GramFactor, Observations, estimate_sigma, observed_coefficients,
                                   omega_sub, shift_delay, summarize_design)
from laplace_deconv.errors import EmptyAfterShift, RankDeficientDesign, ValidationError
from laplace_deconv.laguerre import LaguerreBasis, design_matrix, expand, CoeffVector


def equispaced(n, T):
    return T * np.arange(1, n + 1) / n


# --- Observations ------------------------------------------------------------------------

@pytest.mark.parametrize("times, values, kw", [
    ([1.0], [1.0], {}),
    ([1.0, 1.0], [1.0, 2.0], {}),
    ([2.0, 1.0], [1.0, 2.0], {}),
    ([0.0, 1.0], [1.0, 2.0], {}),
    ([1.0, 2.0], [1.0], {}),
    ([1.0, 2.0], [1.0, np.nan], {}),
    ([1.0, 2.0], [1.0, 2.0], {"horizon": 1.5}),
    ([1.0, 2.0], [1.0, 2.0], {"sigma": -1.0}),
])
def test_observations_validation(times, values, kw):
    with pytest.raises(ValidationError):
        Observations(times, values, **kw)


def test_observations_defaults_and_equality():
    obs = Observations([1.0, 2.0, 3.0], [4.0, 5.0, 6.0])
    assert obs.horizon == 3.0 and obs.n == 3 and obs.sigma is None
    assert obs == Observations([1.0, 2.0, 3.0], [4.0, 5.0, 6.0], 3.0)
    assert obs != obs.with_values([4.0, 5.0, 7.0])


# --- Gram matrix and coefficients ---------------------------------------------------------

def test_gram_near_identity_for_dense_equispaced_design():
    # midpoint grid on (0, 100]
    t = (np.arange(400) + 0.5) * 0.25
    s = summarize_design(Observations(t, np.zeros(400), 100.0), LaguerreBasis(0.5, 6))
    assert np.max(np.abs(s.A - np.eye(6))) < 0.05


def test_gram_right_endpoint_bias():
    # with t_i = i T/n the sum misses half of the t = 0 mass: A - I ~ -dt phi_j(0) phi_k(0) / 2 = -dt a
    dt, a = 0.25, 0.5
    s = summarize_design(Observations(equispaced(400, 100.0), np.zeros(400), 100.0), LaguerreBasis(a, 6))
    assert s.A[0, 0] - 1.0 == pytest.approx(-dt * a, rel=0.05)


def test_gram_definitions():
    t = equispaced(50, 30.0)
    b = LaguerreBasis(0.3, 5)
    s = summarize_design(Observations(t, np.sin(t), 30.0), b)
    phi = design_matrix(b, t)
    np.testing.assert_allclose(s.A, (30.0 / 50) * phi.T @ phi, rtol=1e-13)
    np.testing.assert_allclose(s.A @ s.Omega, np.eye(5), atol=1e-8)
    np.testing.assert_allclose(s.Omega, s.Omega.T)
    assert np.all(np.linalg.eigvalsh(s.Omega) > 0)
    np.testing.assert_allclose(s.z, np.linalg.lstsq(phi, np.sin(t), rcond=None)[0], rtol=1e-9, atol=1e-11)


def test_noiseless_phi0_coefficients():
    b = LaguerreBasis(0.4, 6)
    t = equispaced(100, 40.0)
    s = summarize_design(Observations(t, design_matrix(b, t)[:, 0]), b)
    np.testing.assert_allclose(s.z, np.eye(6)[0], atol=1e-6)


def test_interpolation_of_span_members():
    b = LaguerreBasis(0.4, 6)
    t = equispaced(60, 40.0)
    c = np.array([1.0, -0.5, 0.25, 0.0, 0.1, -0.2])
    y = design_matrix(b, t) @ c
    s = summarize_design(Observations(t, y), b)
    np.testing.assert_allclose(expand(CoeffVector(s.z, b), t), y, atol=1e-8)


def test_rank_deficient_designs():
    b = LaguerreBasis(0.5, 11)
    with pytest.raises(RankDeficientDesign):
        summarize_design(Observations(equispaced(5, 10.0), np.ones(5)), b)
    # eleven samples crowded into a tiny window cannot separate eleven functions
    t = 1.0 + 1e-6 * np.arange(11)
    with pytest.raises(RankDeficientDesign):
        summarize_design(Observations(t, np.ones(11)), b)


def test_n_equals_M_decided_by_pivot_test():
    b = LaguerreBasis(0.5, 4)
    t = equispaced(4, 10.0)
    s = summarize_design(Observations(t, np.ones(4)), b)
    assert np.all(np.isfinite(s.Omega))


def test_omega_sub_examples():
    b = LaguerreBasis(0.3, 6)
    t = equispaced(40, 25.0)
    s = summarize_design(Observations(t, np.cos(t)), b)
    np.testing.assert_allclose(omega_sub(s, 6), s.Omega, rtol=1e-12)
    for m in range(1, 7):
        np.testing.assert_allclose(omega_sub(s, m), np.linalg.inv(s.A[:m, :m]), rtol=1e-9)
        C = s.factor.omega_factor(m)
        np.testing.assert_allclose(C @ C.T, omega_sub(s, m), rtol=1e-9)
    with pytest.raises(ValidationError):
        omega_sub(s, 7)


def test_omega_sub_identity_and_random_spd():
    from laplace_deconv.design import DesignSummary

    b = LaguerreBasis(1.0, 5)
    ident = DesignSummary(A=np.eye(5), Omega=np.eye(5), z=np.zeros(5), basis=b, n=10, horizon=1.0)
    np.testing.assert_allclose(omega_sub(ident, 3), np.eye(3))
    rng = np.random.default_rng(2)
    X = rng.standard_normal((5, 5))
    A = X @ X.T + 5 * np.eye(5)
    rnd = DesignSummary(A=A, Omega=np.linalg.inv(A), z=np.zeros(5), basis=b, n=10, horizon=1.0)
    np.testing.assert_allclose(omega_sub(rnd, 3), np.linalg.inv(A[:3, :3]), rtol=1e-12)


def test_coefficients_invariant_under_reordering():
    b = LaguerreBasis(0.3, 5)
    t = equispaced(30, 20.0)
    y = np.exp(-0.2 * t) + 0.1 * np.sin(t)
    perm = np.random.default_rng(0).permutation(30)
    np.testing.assert_allclose(observed_coefficients(b, t[perm], y[perm]), observed_coefficients(b, t, y),
                               rtol=1e-10, atol=1e-12)


def test_refit_coefficients_for_smaller_m():
    b = LaguerreBasis(0.3, 5)
    t = equispaced(30, 20.0)
    y = np.exp(-0.2 * t)
    fac = GramFactor(t, 20.0, b)
    np.testing.assert_allclose(fac.coefficients(y, 3),
                               np.linalg.lstsq(design_matrix(b, t)[:, :3], y, rcond=None)[0], rtol=1e-9)


# --- delay shift ---------------------------------------------------------------------------

def test_shift_delay_examples():
    obs = Observations([1.0, 2.0, 3.0], [10.0, 20.0, 30.0], 3.0, sigma=0.5)
    assert shift_delay(obs, 0.0) is obs
    out = shift_delay(obs, 1.5)
    np.testing.assert_allclose(out.times, [0.5, 1.5])
    np.testing.assert_allclose(out.values, [20.0, 30.0])
    assert out.horizon == 1.5 and out.sigma == 0.5
    with pytest.raises(EmptyAfterShift):
        shift_delay(obs, 3.0)
    with pytest.raises(EmptyAfterShift):
        shift_delay(obs, 2.5)
    with pytest.raises(ValidationError):
        shift_delay(obs, -1.0)


# --- noise level ---------------------------------------------------------------------------

def test_estimate_sigma_constant_and_alternating():
    t = equispaced(11, 11.0)
    assert estimate_sigma(Observations(t, np.full(11, 3.0))) == 0.0
    c = 0.7
    y = c * (-1.0) ** np.arange(11)
    # every difference is 2c, so sigma^2 = (n-1) 4c^2 / (2(n-1)) = 2c^2
    assert estimate_sigma(Observations(t, y)) == pytest.approx(c * np.sqrt(2.0), rel=1e-14)


def test_estimate_sigma_monte_carlo():
    rng = np.random.default_rng(123)
    t = equispaced(10_000, 100.0)
    assert estimate_sigma(Observations(t, 4.0 + rng.standard_normal(10_000))) == pytest.approx(1.0, abs=0.05)


def test_estimate_sigma_warns_on_irregular_grid_and_needs_three_points():
    with pytest.warns(RuntimeWarning):
        estimate_sigma(Observations([1.0, 2.0, 5.0, 6.0], [0.0, 1.0, 0.0, 1.0]))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        estimate_sigma(Observations([1.0, 2.0, 3.0], [0.0, 1.0, 0.0]))
    with pytest.raises(ValidationError):
        estimate_sigma(Observations([1.0, 2.0], [0.0, 1.0]))


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 2.0), st.integers(8, 60))
def test_gram_is_spd_or_rejected(a, n):
    b = LaguerreBasis(a, 5)
    try:
        s = summarize_design(Observations(equispaced(n, 50.0), np.zeros(n), 50.0), b)
    except RankDeficientDesign:
        return
    np.testing.assert_allclose(s.A, s.A.T)
    assert np.linalg.eigvalsh(s.A).min() > 0


def test_rank_test_uses_gram_scale():
    # every pivot is small here because the first functions have decayed before t_1
    n = 11
    with pytest.raises(RankDeficientDesign):
        summarize_design(Observations(equispaced(n, 50.0), np.zeros(n), 50.0), LaguerreBasis(1.1875, 5))
