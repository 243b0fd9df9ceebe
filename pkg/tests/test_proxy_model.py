import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import central_difference, population_moments, random_spd, relative_gap
from proxysvar.montecarlo import DgpSpec, simulate
from proxysvar.proxy_model import (MeasurementModel, ProxyMoments, SingularCovarianceError,
                                   build_restrictions, compute_moments, gaussian_sigma_plus_cov,
                                   iid_sigma_plus_cov, jacobian_J_sigma, mu_from_sigma_plus,
                                   prewhiten_proxy, split_sigma_plus, stack_sigma_plus)
from proxysvar.var_core import TimeSeriesDataset, fit_var


def test_orthogonal_proxy_has_zero_moments():
    m = ProxyMoments(np.eye(3), np.zeros((3, 1)), 100)
    np.testing.assert_array_equal(m.Omega_w, 0.0)
    np.testing.assert_array_equal(m.mu, 0.0)


def test_population_design_moments():
    m = population_moments()
    np.testing.assert_allclose(m.Sigma_uw[:, 0], [0.152, -0.256, 0.072], atol=1e-12)
    np.testing.assert_allclose(m.Omega_w, [[0.64]], atol=1e-12)


def test_sample_moments_long_path(long_strong_path):
    fit = fit_var(long_strong_path, 1)
    m = compute_moments(fit, long_strong_path)
    assert np.max(np.abs(m.Sigma_uw[:, 0] - [0.152, -0.256, 0.072])) < 0.01
    assert abs(m.Omega_w[0, 0] - 0.64) < 0.01


def test_projection_identity_for_residual_proxy():
    rng = np.random.default_rng(2)
    Y = np.cumsum(rng.standard_normal((500, 3)), axis=0) * 0.1 + rng.standard_normal((500, 3))
    fit = fit_var(TimeSeriesDataset(Y=Y), 1)
    w = np.full((500, 1), np.nan)
    w[1:, 0] = fit.residuals[:, 1]
    m = compute_moments(fit, TimeSeriesDataset(Y=Y, w=w))
    np.testing.assert_allclose(m.Omega_w[0, 0], fit.Sigma_u[1, 1], rtol=1e-8)


def test_stacking_roundtrip():
    rng = np.random.default_rng(0)
    Su = random_spd(rng, 3)
    Suw = rng.standard_normal((3, 2))
    sp = stack_sigma_plus(Su, Suw)
    a, b = split_sigma_plus(sp, 3, 2)
    np.testing.assert_array_equal(a, Su)
    np.testing.assert_array_equal(b, Suw)
    m = ProxyMoments(Su, Suw, 10)
    np.testing.assert_allclose(mu_from_sigma_plus(sp, 3, 2), m.mu, atol=1e-10)


def test_J_sigma_at_zero_cross_moment():
    m = ProxyMoments(random_spd(np.random.default_rng(1), 3), np.zeros((3, 1)), 10)
    J = jacobian_J_sigma(m)
    assert J.shape == (1 + 3, 6 + 3)
    np.testing.assert_array_equal(J[:1], 0.0)
    np.testing.assert_array_equal(J[1:, 6:], np.eye(3))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 2), st.integers(2, 4))
def test_J_sigma_matches_finite_differences(seed, s, n):
    rng = np.random.default_rng(seed)
    Su = random_spd(rng, n)
    Suw = rng.standard_normal((n, s))
    J = jacobian_J_sigma(ProxyMoments(Su, Suw, 10))
    fd = central_difference(lambda x: mu_from_sigma_plus(x, n, s), stack_sigma_plus(Su, Suw))
    assert relative_gap(J, fd) < 1e-5


def test_J_sigma_full_row_rank_strong_design():
    J = jacobian_J_sigma(population_moments())
    assert np.linalg.svd(J, compute_uv=False).min() > 1e-3


def test_singular_sigma_u_rejected():
    with pytest.raises(SingularCovarianceError):
        ProxyMoments(np.diag([1.0, 1.0, 1e-14]), np.zeros((3, 1)), 10)


def test_V_mu_is_congruence_of_V_sigma_plus():
    rng = np.random.default_rng(5)
    Su = random_spd(rng, 3)
    Suw = rng.standard_normal((3, 1))
    V = gaussian_sigma_plus_cov(Su, Suw, np.array([[2.0]]))
    m = ProxyMoments(Su, Suw, 10, V, "gaussian")
    np.testing.assert_allclose(m.V_mu, m.J_sigma @ V @ m.J_sigma.T, atol=1e-12)
    assert np.linalg.eigvalsh(V).min() > -1e-10


def test_gaussian_and_iid_covariances_agree_in_large_samples():
    rng = np.random.default_rng(8)
    T = 200_000
    eta = rng.standard_normal((T, 4)) @ np.linalg.cholesky(random_spd(rng, 4)).T
    u, w = eta[:, :3], eta[:, 3:]
    Sig = eta.T @ eta / T
    Vg = gaussian_sigma_plus_cov(Sig[:3, :3], Sig[:3, 3:], Sig[3:, 3:])
    Vi = iid_sigma_plus_cov(u, w)
    assert np.linalg.norm(Vg - Vi) / np.linalg.norm(Vg) < 0.05


def test_restrictions_all_free():
    R = build_restrictions([["a", "b"], ["c", "d"]])
    np.testing.assert_array_equal(R.S, np.eye(4))
    np.testing.assert_array_equal(R.shift, 0.0)


def test_restrictions_design_pattern():
    R = build_restrictions([["a11", 0, "a13"]])
    assert R.a == 2
    np.testing.assert_array_equal(R.S, [[1, 0], [0, 0], [0, 1]])
    np.testing.assert_array_equal(R.matrix(np.array([6.246, -13.185])), [[6.246, 0.0, -13.185]])


def test_restrictions_upper_triangular_lambda():
    R = build_restrictions([["l11", "l12"], [0, "l22"]], "Lambda")
    assert R.a == 3
    assert np.count_nonzero(R.S.sum(axis=1) == 0) == 1


@settings(max_examples=50)
@given(st.integers(0, 2**31))
def test_restrictions_roundtrip(seed):
    rng = np.random.default_rng(seed)
    R = build_restrictions([["a", 1.5, "-a"], ["b", "c", 0]])
    p = rng.standard_normal(R.a)
    M = R.matrix(p)
    assert M[0, 1] == 1.5 and M[0, 2] == -M[0, 0] and M[1, 2] == 0
    np.testing.assert_allclose(R.params_from_matrix(M), p, atol=1e-12)
    assert R.satisfied_by(M)


def test_restrictions_errors():
    with pytest.raises(ValueError):
        build_restrictions([[0.0, 1.0]])
    with pytest.raises(ValueError):
        build_restrictions([])
    with pytest.raises(ValueError):
        build_restrictions([["a"], ["b", "c"]])


def test_measurement_model_strength():
    mm = MeasurementModel(Lambda=np.array([[2.0]]), strength="local")
    L, _ = mm.relevance(400)
    assert L[0, 0] == pytest.approx(0.1)
    assert mm.check_strong()
    assert not MeasurementModel(Lambda=np.zeros((2, 2))).check_strong()


def test_prewhiten_white_noise_passes_through():
    x = np.random.default_rng(9).standard_normal(10_000)
    out = prewhiten_proxy(x, 4)
    assert np.isnan(out[:4]).all()
    assert np.corrcoef(out[4:], x[4:])[0, 1] > 0.95
    assert abs(np.nanmean(out)) < 1e-12


def test_prewhiten_exact_ar1_gives_zero():
    x = 0.5 ** np.arange(60)
    out = prewhiten_proxy(x, 1, intercept=False)
    np.testing.assert_allclose(out[1:], 0.0, atol=1e-14)


def test_prewhiten_constant_is_rejected():
    with pytest.raises(ValueError):
        prewhiten_proxy(np.ones(200), 4)


def test_strong_design_population_identities_converge():
    # sample moments approach B2 Lambda' and Lambda Lambda' at a root-T rate
    errs = []
    for T in (1000, 16000):
        e = []
        for s in range(5):
            d = simulate(DgpSpec(T=T), seed=100 + s)
            m = compute_moments(fit_var(d, 1), d)
            e.append(np.abs(m.Omega_w[0, 0] - 0.64))
        errs.append(np.mean(e))
    assert errs[1] < errs[0] / 2
