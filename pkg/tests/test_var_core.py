import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import solve_discrete_lyapunov

from proxysvar.montecarlo import B as B_TRUE, PI1
from proxysvar.var_core import (InsufficientSampleError, SingularRegressorError, TimeSeriesDataset,
                                build_companion, companion_matrix, fit_var, irf, irf_from_companion,
                                irf_pi_jacobian, lagged_regressors, read_csv)


def _simulate_var(Pi, T, rng, scale=1.0):
    n = Pi.shape[0]
    Y = np.zeros((T, n))
    Y[0] = rng.standard_normal(n)
    for t in range(1, T):
        Y[t] = Pi @ Y[t - 1] + scale * rng.standard_normal(n)
    return Y


def test_zero_residual_recovers_pi_exactly():
    Y = np.zeros((30, 3))
    Y[0] = [1.0, -0.5, 2.0]
    for t in range(1, 30):
        Y[t] = PI1 @ Y[t - 1]
    # the path dies out slowly; keep it well conditioned by using the first rows only
    fit = fit_var(TimeSeriesDataset(Y=Y[:20]), 1)
    np.testing.assert_allclose(fit.Pi, PI1, atol=1e-9)
    np.testing.assert_allclose(fit.Sigma_u, 0.0, atol=1e-20)


def test_consistency_long_path(long_strong_path):
    fit = fit_var(long_strong_path, 1)
    assert np.max(np.abs(fit.Pi - PI1)) < 0.02


def test_consistency_within_asymptotic_standard_errors(long_strong_path):
    fit = fit_var(long_strong_path, 1)
    Su = B_TRUE @ B_TRUE.T
    Gamma = solve_discrete_lyapunov(PI1, Su)
    se = np.sqrt(np.diag(np.kron(np.linalg.inv(Gamma), Su)) / fit.nobs).reshape(3, 3).T
    assert np.all(np.abs(fit.Pi - PI1) < 4 * se)


def test_white_noise_coefficients_near_zero():
    rng = np.random.default_rng(3)
    Y = rng.standard_normal((10_000, 3))
    fit = fit_var(TimeSeriesDataset(Y=Y), 1)
    assert np.all(np.abs(fit.Pi) < 4 / np.sqrt(10_000))


def test_normal_equations_and_sigma_definition():
    rng = np.random.default_rng(4)
    Y = _simulate_var(PI1, 400, rng)
    fit = fit_var(TimeSeriesDataset(Y=Y), 2, intercept=True)
    X = lagged_regressors(Y, 2, True)
    cross = X.T @ fit.residuals
    assert np.max(np.abs(cross)) < 1e-8 * np.max(np.abs(X.T @ Y[2:]))
    np.testing.assert_allclose(fit.residuals.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(fit.Sigma_u, fit.residuals.T @ fit.residuals / (400 - 2), rtol=1e-12)
    assert fit.Pi.shape == (3, 6)


def test_companion_one_lag_equals_pi():
    rng = np.random.default_rng(5)
    fit = fit_var(TimeSeriesDataset(Y=_simulate_var(PI1, 300, rng)), 1)
    np.testing.assert_array_equal(companion_matrix(fit), fit.Pi)


def test_companion_spectral_radius_of_design():
    C = build_companion(PI1)
    assert abs(np.max(np.abs(np.linalg.eigvals(C))) - 0.86) <= 0.005


def test_nilpotent_companion():
    C = build_companion(np.zeros((3, 6)))
    assert np.all(np.abs(np.linalg.eigvals(C)) == 0.0)
    assert C.shape == (6, 6)
    np.testing.assert_array_equal(C[3:, :3], np.eye(3))


def test_irf_impact_and_no_propagation():
    B1 = np.array([[0.3, 0.1], [0.2, -0.4], [0.0, 0.5]])
    vals = irf_from_companion(np.zeros((3, 3)), 3, B1[:, 1], 5)
    np.testing.assert_array_equal(vals[0], B1[:, 1])
    np.testing.assert_array_equal(vals[1:], 0.0)


def test_irf_one_step_design_values():
    # product of the design lag matrix and the first impact column
    vals = irf_from_companion(PI1, 3, B_TRUE[:, 0], 1)
    np.testing.assert_allclose(vals[1], [0.11326, 0.09754, 0.04150], atol=1e-12)
    np.testing.assert_allclose(vals[1], [0.1133, 0.0975, 0.0415], atol=1e-4)


def test_irf_from_fit_zero_based_shock():
    rng = np.random.default_rng(6)
    fit = fit_var(TimeSeriesDataset(Y=_simulate_var(PI1, 300, rng)), 1)
    B1 = np.array([[0.3, 0.1], [0.2, -0.4], [0.0, 0.5]])
    path = irf(fit, B1, 1, 4)
    np.testing.assert_array_equal(path.values[0], B1[:, 1])
    assert path.h_max == 4
    with pytest.raises(ValueError):
        irf(fit, np.ones((2, 1)), 0, 3)
    with pytest.raises(ValueError):
        irf(fit, B1, 2, 3)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**31))
def test_irf_recursion_matches_matrix_power(lags, seed):
    rng = np.random.default_rng(seed)
    n = 3
    Pi = 0.3 * rng.standard_normal((n, n * lags)) / lags
    C = build_companion(Pi)
    b = rng.standard_normal(n)
    vals = irf_from_companion(C, n, b, 8)
    for h in range(9):
        direct = np.linalg.matrix_power(C, h)[:n, :n] @ b
        np.testing.assert_allclose(vals[h], direct, atol=1e-10)


def test_irf_pi_jacobian_finite_difference():
    rng = np.random.default_rng(7)
    Pi = 0.3 * rng.standard_normal((3, 6))
    b = rng.standard_normal(3)
    J = irf_pi_jacobian(build_companion(Pi), 3, b, 5)
    eps = 1e-6
    for j in range(Pi.size):
        d = np.zeros(Pi.size)
        d[j] = eps
        P1 = Pi + d.reshape(6, 3).T
        P0 = Pi - d.reshape(6, 3).T
        fd = (irf_from_companion(build_companion(P1), 3, b, 5)
              - irf_from_companion(build_companion(P0), 3, b, 5)) / (2 * eps)
        np.testing.assert_allclose(J[:, :, j], fd, atol=1e-8)


def test_sample_size_and_singular_errors():
    with pytest.raises(InsufficientSampleError):
        fit_var(TimeSeriesDataset(Y=np.random.default_rng(0).standard_normal((8, 3))), 1)
    Y = np.random.default_rng(1).standard_normal((100, 3))
    Y[:, 2] = 1.0
    with pytest.raises(SingularRegressorError):
        fit_var(TimeSeriesDataset(Y=Y), 1, intercept=True)
    with pytest.raises(ValueError):
        fit_var(TimeSeriesDataset(Y=Y), 0)


def test_read_csv_roles_and_missing_proxy(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("a,b,w\n1,2,0.5\n2,3,\n3,5,0.1\n")
    d = read_csv(p, ["a", "b"], ["w"])
    assert d.Y.shape == (3, 2)
    assert np.isnan(d.w[1, 0])
    assert d.proxy_mask("w").tolist() == [True, False, True]
    with pytest.raises(KeyError):
        read_csv(p, ["a", "zz"])
