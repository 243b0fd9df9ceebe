import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import (ALPHA_TRUE, B1_TRUE, central_difference, design_restrictions, population_moments,
                      random_spd, relative_gap)
from proxysvar.linalg import duplication, duplication_pinv
from proxysvar.md_estimation import (IdentificationError, MdOptions, RankConditionWarning,
                                     delta_method_irf_ci, distance_g, distance_g_Bform, iv_estimate_psi,
                                     jacobian_G_alpha, jacobian_G_beta, jacobian_G_sigma,
                                     jacobian_G_sigma_Bform, map_restrictions_to_Bform, md_estimate,
                                     md_estimate_Bform)
from proxysvar.montecarlo import B as B_TRUE, DgpSpec, simulate
from proxysvar.pipeline import CovarianceConfig, moments_with_covariance
from proxysvar.proxy_model import (ProxyMoments, RestrictionSet, build_restrictions, compute_moments,
                                   gaussian_sigma_plus_cov, split_sigma_plus, stack_sigma_plus)
from proxysvar.var_core import TimeSeriesDataset, fit_var

IDENTITY = MdOptions(weighting="identity")


def _random_problem(rng, k, n, s):
    Su = random_spd(rng, n)
    Suw = rng.standard_normal((n, s))
    A1 = rng.standard_normal((k, n))
    return stack_sigma_plus(Su, Suw), A1


def test_distance_zero_at_population_design():
    m = population_moments()
    g = distance_g(m.sigma_plus, ALPHA_TRUE, design_restrictions())
    # the design alpha values carry three decimals
    assert np.max(np.abs(g)) < 5e-3
    A_exact = np.linalg.inv(B_TRUE)[:1]
    R = design_restrictions()
    assert abs(A_exact[0, 1]) < 1e-12
    g_exact = distance_g(m.sigma_plus, R.params_from_matrix(A_exact), R)
    np.testing.assert_allclose(g_exact, 0.0, atol=1e-10)
    np.testing.assert_allclose(A_exact[0, [0, 2]], ALPHA_TRUE, atol=5e-4)


def test_distance_scalar_normalized_case():
    R = build_restrictions([["a"]])
    assert distance_g(np.array([1.0]), np.array([1.0]), R).tolist() == [0.0]


def test_distance_first_order_taylor():
    m = population_moments()
    R = design_restrictions()
    a0 = R.params_from_matrix(np.linalg.inv(B_TRUE)[:1])
    da = np.array([0.1, 0.0])
    g = distance_g(m.sigma_plus, a0 + da, R)
    pred = jacobian_G_alpha(m.sigma_plus, a0, R) @ da
    assert np.linalg.norm(g) > 0
    assert np.linalg.norm(g - pred) < 0.05 * np.linalg.norm(pred)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 2), st.integers(1, 2))
def test_G_alpha_matches_finite_differences(seed, k, s):
    rng = np.random.default_rng(seed)
    n = k + s + 1
    sp, A1 = _random_problem(rng, k, n, s)
    R = RestrictionSet.free(k, n)
    a = R.params_from_matrix(A1)
    G = jacobian_G_alpha(sp, a, R)
    fd = central_difference(lambda x: distance_g(sp, x, R), a)
    assert relative_gap(G, fd) < 1e-5


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 2), st.integers(1, 2))
def test_G_sigma_matches_finite_differences(seed, k, s):
    rng = np.random.default_rng(seed)
    n = k + s + 1
    sp, A1 = _random_problem(rng, k, n, s)
    R = RestrictionSet.free(k, n)
    a = R.params_from_matrix(A1)
    Gs = jacobian_G_sigma(a, R, s)
    fd = central_difference(lambda x: distance_g(x, a, R), sp)
    assert relative_gap(Gs, fd) < 1e-5


def test_G_sigma_identity_blocks():
    n = 3
    R = RestrictionSet.free(n, n)
    Gs = jacobian_G_sigma(R.params_from_matrix(np.eye(n)), R, 1)
    h = n * (n + 1) // 2
    np.testing.assert_allclose(Gs[:h, :h], duplication_pinv(n) @ duplication(n), atol=1e-14)
    np.testing.assert_allclose(Gs[h:, h:], np.eye(n), atol=0)


def test_G_sigma_singular_for_rank_deficient_A1():
    R = RestrictionSet.free(2, 3)
    A1 = np.array([[1.0, 2.0, 0.5], [2.0, 4.0, 1.0]])
    Gs = jacobian_G_sigma(R.params_from_matrix(A1), R, 1)
    assert np.linalg.matrix_rank(Gs) < Gs.shape[0]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 2), st.integers(1, 2))
def test_Bform_jacobians_match_finite_differences(seed, k, s):
    rng = np.random.default_rng(seed)
    n = k + s + 1
    sp, _ = _random_problem(rng, k, n, s)
    R = RestrictionSet.free(n, k, "B1")
    b = rng.standard_normal(n * k)
    assert relative_gap(jacobian_G_beta(sp, b, R),
                        central_difference(lambda x: distance_g_Bform(sp, x, R), b)) < 1e-5
    Su_, Suw_ = split_sigma_plus(sp, n, s)
    Gs = jacobian_G_sigma_Bform(b, R, Su_, Suw_)
    fd = central_difference(lambda x: distance_g_Bform(x, b, R), sp)
    assert relative_gap(Gs, fd) < 1e-5


def test_rank_fails_without_relevance():
    m = population_moments(lam=0.0)
    R = design_restrictions()
    G = jacobian_G_alpha(m.sigma_plus, ALPHA_TRUE, R)
    assert np.linalg.matrix_rank(G) < R.a
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankConditionWarning)
        fit = md_estimate(m, R, IDENTITY)
    assert not fit.rank_ok


def test_rank_holds_in_strong_design():
    m = population_moments()
    R = design_restrictions()
    a0 = R.params_from_matrix(np.linalg.inv(B_TRUE)[:1])
    assert np.linalg.svd(jacobian_G_alpha(m.sigma_plus, a0, R), compute_uv=False).min() > 0.01


def test_exactly_identified_population_fit():
    m = population_moments()
    fit = md_estimate(m, design_restrictions(), IDENTITY)
    assert fit.Q_min < 1e-12
    np.testing.assert_allclose(fit.B1[:, 0], B_TRUE[:, 0], atol=1e-7)
    assert fit.rank_ok and fit.converged


def test_md_estimate_long_path(long_strong_path):
    fit = fit_var(long_strong_path, 1)
    mom = moments_with_covariance(fit, long_strong_path, CovarianceConfig(mode="iid"), 0)
    md = md_estimate(mom, design_restrictions())
    assert np.all(np.abs(np.abs(md.alpha) - np.abs(ALPHA_TRUE)) <= 0.02 * np.abs(ALPHA_TRUE))
    assert np.max(np.abs(md.B1[:, 0] - B1_TRUE)) < 0.01
    # normalization and orthogonality at an exactly identified optimum
    assert np.max(np.abs(md.A1 @ mom.Sigma_u @ md.A1.T - 1.0)) < 1e-6
    assert np.max(np.abs(md.A1 @ mom.Sigma_uw)) < 1e-6
    assert md.V_alpha.shape == (2, 2) and md.V_alpha_reeval.shape == (2, 2)


def test_sign_invariance_and_normalization():
    m = population_moments()
    R = design_restrictions()
    a0 = R.params_from_matrix(np.linalg.inv(B_TRUE)[:1])
    g1 = distance_g(m.sigma_plus, a0 + 0.3, R)
    g2 = distance_g(m.sigma_plus, -(a0 + 0.3), R)
    np.testing.assert_allclose(g1 @ g1, g2 @ g2, rtol=1e-12)
    fit = md_estimate(m, R, IDENTITY)
    assert fit.B1[0, 0] > 0


def test_order_condition_guard():
    m = ProxyMoments(np.eye(4), np.ones((4, 1)) * 0.3, 100)
    R = RestrictionSet.free(2, 4)
    with pytest.raises(IdentificationError, match="at least ½k\\(k−1\\)"):
        md_estimate(m, R, IDENTITY)


def test_two_step_needs_covariance():
    with pytest.raises(ValueError):
        md_estimate(population_moments(), design_restrictions())


def test_Bform_roundtrip_fixed_values():
    m = population_moments()
    fit = md_estimate(m, design_restrictions(), IDENTITY)
    b = fit.B1[:, 0]
    R = build_restrictions([[float(b[0])], [float(b[1])], ["b3"]], "B1")
    bf = md_estimate_Bform(m, R, IDENTITY)
    assert bf.Q_min < 1e-12
    np.testing.assert_allclose(bf.B1[:, 0], b, atol=1e-8)


def test_Bform_population_design():
    m = population_moments()
    R = build_restrictions([["b1"], ["b2"], ["b3"]], "B1")
    # three free entries against two moment conditions
    with pytest.raises(IdentificationError):
        md_estimate_Bform(m, R, IDENTITY)
    R2 = build_restrictions([["b1"], ["b2"], [0.017]], "B1")
    bf2 = md_estimate_Bform(m, R2, IDENTITY)
    # b2 enters the distance only at second order here (alpha_12 = 0), so it converges more slowly
    np.testing.assert_allclose(bf2.B1[:, 0], B1_TRUE, atol=1e-5)


def _ab_problem(T, seed, proxies):
    d = simulate(DgpSpec(T=T), seed=seed)
    rng = np.random.default_rng(seed)
    w = d.w if proxies == 1 else np.hstack([d.w, d.w + 0.5 * rng.standard_normal(d.w.shape)])
    data = TimeSeriesDataset(Y=d.Y, w=w)
    mom = moments_with_covariance(fit_var(data, 1), data, CovarianceConfig(mode="iid"), 0)
    RA = design_restrictions()
    return mom, RA, map_restrictions_to_Bform(RA, mom.Sigma_u)


@pytest.mark.parametrize("proxies, options", [(1, MdOptions()), (2, IDENTITY)])
def test_Aform_and_Bform_agree_under_mapped_restrictions(proxies, options):
    # same distance function under the same weight
    mom, RA, RB = _ab_problem(2000, 3, proxies)
    fa = md_estimate(mom, RA, options)
    fb = md_estimate_Bform(mom, RB, options)
    np.testing.assert_allclose(fa.B1, fb.B1, atol=1e-10)
    np.testing.assert_allclose(fa.alpha, fb.alpha, atol=1e-10 * np.max(np.abs(fa.alpha)))


def test_two_step_forms_converge_when_over_identified():
    # each form builds its efficient weight from its own Jacobian in sigma+, so the gap is O(1/T)
    gaps = {}
    for T in (500, 8000):
        g = []
        for seed in range(20):
            mom, RA, RB = _ab_problem(T, 100 + seed, 2)
            assert md_estimate(mom, RA).Q_min > 0
            g.append(np.max(np.abs(md_estimate(mom, RA).B1 - md_estimate_Bform(mom, RB).B1)))
        gaps[T] = np.median(g)
    # faster than T^-1/2; measured medians fall about elevenfold here
    assert gaps[8000] < gaps[500] / 4


def test_iv_matches_md_on_long_path(long_strong_path):
    fit = fit_var(long_strong_path, 1)
    md = md_estimate(compute_moments(fit, long_strong_path), design_restrictions(), IDENTITY)
    u = fit.residuals
    w = long_strong_path.w[fit.resid_rows]
    psi = iv_estimate_psi(u[:, [0]], u[:, [2]], w)
    assert abs(psi[0, 0] - (-md.alpha[1] / md.alpha[0])) < 0.02


def test_iv_with_regressor_as_instrument_is_ols():
    rng = np.random.default_rng(4)
    u2 = rng.standard_normal((500, 1))
    u1 = 0.7 * u2 + rng.standard_normal((500, 1))
    psi = iv_estimate_psi(u1, u2, u2)
    np.testing.assert_allclose(psi, np.linalg.lstsq(u2, u1, rcond=None)[0].T, atol=1e-12)


def test_iv_irrelevant_instrument_raises():
    u2 = np.array([[1.0], [-1.0], [1.0], [-1.0]])
    w = np.array([[1.0], [1.0], [-1.0], [-1.0]])
    with pytest.raises(np.linalg.LinAlgError):
        iv_estimate_psi(u2, u2, w)


def test_delta_method_impact_half_width():
    d = simulate(DgpSpec(T=1000), seed=8)
    fit = fit_var(d, 1)
    mom = moments_with_covariance(fit, d, CovarianceConfig(mode="iid"), 0)
    md = md_estimate(mom, design_restrictions())
    path = delta_method_irf_ci(md, fit, 0.90, 4)
    se = np.sqrt(np.diag(md.B1_covariance()))
    np.testing.assert_allclose(path.upper[0] - path.values[0], 1.6448536269514722 * se, rtol=1e-10)
    np.testing.assert_array_equal(path.values[0], md.B1[:, 0])


def test_delta_method_bands_without_propagation_shrink():
    widths = []
    for T in (500, 8000):
        rng = np.random.default_rng(T)
        eps = rng.standard_normal((T, 3))
        u = eps @ B_TRUE.T
        w = 0.8 * eps[:, [2]] + 1.1 * rng.standard_normal((T, 1))
        data = TimeSeriesDataset(Y=u, w=w)
        fit = fit_var(data, 1)
        mom = moments_with_covariance(fit, data, CovarianceConfig(mode="iid"), 0)
        md = md_estimate(mom, design_restrictions())
        p = delta_method_irf_ci(md, fit, 0.90, 3)
        widths.append(np.max(np.abs(p.upper[1:]) + np.abs(p.lower[1:])))
    assert widths[1] < widths[0] / 2


def test_delta_method_requires_rank():
    m = population_moments(lam=0.0)
    m = m.with_covariance(gaussian_sigma_plus_cov(m.Sigma_u, m.Sigma_uw, np.eye(1)), "gaussian")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankConditionWarning)
        md = md_estimate(m, design_restrictions(), IDENTITY)
    d = simulate(DgpSpec(T=300), seed=1)
    with pytest.raises(IdentificationError):
        delta_method_irf_ci(md, fit_var(d, 1))
