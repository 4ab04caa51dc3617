import numpy as np
import pytest

from mfenkf.baselines import (
    ShrinkageTarget,
    enkf_analysis,
    localized_enkf_analysis,
    localized_sample_covariance,
    mlenkf_corrected_analysis,
    rblw_intensity,
    shrinkage_enkf_analysis,
)
from mfenkf.ensemble import GaussianSampler, anomalies, empirical_cov, empirical_mean
from mfenkf.errors import ConfigError, NonSpdTarget, ShapeMismatch
from mfenkf.multifidelity import TotalVariateTriple
from mfenkf.observations import LocalizationKernel, ObservationModel
from mfenkf.projection import ProjectionPair, empty_pair

from conftest import random_spd


def kalman(mean, cov, h, r, y):
    k = cov @ h.T @ np.linalg.inv(h @ cov @ h.T + r)
    return mean + k @ (y - h @ mean), cov - k @ h @ cov


def line_obs(n, m, variance=1.0):
    idx = np.linspace(0, n - 1, m).round().astype(int)
    h = np.eye(n)[idx]
    c = np.column_stack([np.arange(n, dtype=float), np.zeros(n)])
    return ObservationModel(variance * np.eye(m), linear_h=h, state_coords=c, obs_coords=c[idx])


def test_huge_observation_error_leaves_the_prior(rng):
    x = rng.standard_normal((3, 6))
    obs = ObservationModel(1e30 * np.eye(2), linear_h=np.eye(3)[:2])
    xa = enkf_analysis(x, obs, np.zeros(2), GaussianSampler(1e15 * np.eye(2), 1))
    np.testing.assert_allclose(xa, x, atol=1e-9)


def test_large_ensemble_matches_the_kalman_filter():
    rng = np.random.default_rng(0)
    cov = random_spd(rng, 3)
    mean = rng.standard_normal(3)
    h = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 1.0]])
    r = np.diag([0.5, 0.8])
    y = np.array([0.3, -0.4])
    prior = rng.multivariate_normal(mean, cov, size=10_000).T
    obs = ObservationModel(r, linear_h=h)
    xa = enkf_analysis(prior, obs, y, GaussianSampler.from_covariance(r, 9))
    m_exact, c_exact = kalman(empirical_mean(prior), empirical_cov(anomalies(prior)), h, r, y)
    np.testing.assert_allclose(empirical_mean(xa), m_exact, atol=0.03 * np.sqrt(np.diag(c_exact)).max())
    np.testing.assert_allclose(empirical_cov(anomalies(xa)), c_exact, rtol=0.03, atol=0.03 * np.abs(c_exact).max())


def test_analysis_reduces_total_variance(rng):
    prior = rng.standard_normal((5, 8)) * 3
    obs = line_obs(5, 3)
    xa = enkf_analysis(prior, obs, np.zeros(3), GaussianSampler(np.eye(3), 4))
    assert np.trace(empirical_cov(anomalies(xa))) < np.trace(empirical_cov(anomalies(prior)))


def test_analysis_is_deterministic(rng):
    prior = rng.standard_normal((5, 8))
    obs = line_obs(5, 3)
    a = enkf_analysis(prior, obs, np.ones(3), GaussianSampler(np.eye(3), 4), 1.05)
    b = enkf_analysis(prior, obs, np.ones(3), GaussianSampler(np.eye(3), 4), 1.05)
    assert np.array_equal(a, b)


def test_infinite_radius_localization_is_plain_enkf(rng):
    prior = rng.standard_normal((6, 5))
    obs = line_obs(6, 3)
    y = rng.standard_normal(3)
    plain = enkf_analysis(prior, obs, y, GaussianSampler(np.eye(3), 2))
    loc = localized_enkf_analysis(prior, obs, y, GaussianSampler(np.eye(3), 2), kernel=LocalizationKernel(np.inf))
    np.testing.assert_allclose(loc, plain, rtol=1e-12, atol=1e-12)
    with pytest.raises(ConfigError):
        localized_enkf_analysis(prior, obs, y, GaussianSampler(np.eye(3), 2))


def test_vanishing_radius_updates_only_observed_components(rng):
    prior = rng.standard_normal((6, 5))
    obs = line_obs(6, 2)
    y = rng.standard_normal(2)
    xa = localized_enkf_analysis(prior, obs, y, GaussianSampler(np.eye(2), 3), kernel=LocalizationKernel(1e-6))
    observed = obs.dense_h().argmax(axis=1)
    untouched = np.setdiff1d(np.arange(6), observed)
    np.testing.assert_allclose(xa[untouched], prior[untouched], atol=1e-12)


def test_localized_sample_covariance_is_a_schur_product(rng):
    x = rng.standard_normal((4, 7))
    c = np.column_stack([np.arange(4.0), np.zeros(4)])
    k = LocalizationKernel(1.5)
    np.testing.assert_allclose(localized_sample_covariance(x, c, k), k.matrix(c) * np.cov(x), rtol=1e-12)


def test_shrinkage_limits(rng):
    prior = rng.standard_normal((5, 6))
    obs = line_obs(5, 3)
    y = rng.standard_normal(3)
    target = ShrinkageTarget(random_spd(rng, 5), obs)
    plain = enkf_analysis(prior, obs, y, GaussianSampler(np.eye(3), 1), 1.0)
    g0 = shrinkage_enkf_analysis(prior, obs, y, GaussianSampler(np.eye(3), 1), 1.0, target, gamma=0.0)
    np.testing.assert_allclose(g0, plain, rtol=1e-10, atol=1e-10)
    g1 = shrinkage_enkf_analysis(prior, obs, y, GaussianSampler(np.eye(3), 1), 1.0, target, gamma=1.0)
    a = anomalies(prior)
    mu = np.sum(a**2) / np.trace(target.cov)
    h = obs.dense_h()
    k = mu * target.cov @ h.T @ np.linalg.inv(mu * h @ target.cov @ h.T + obs.cov_obs)
    np.testing.assert_allclose(empirical_mean(g1), empirical_mean(prior) - k @ (h @ empirical_mean(prior) - y),
                               rtol=1e-10, atol=1e-10)
    with pytest.raises(ConfigError):
        shrinkage_enkf_analysis(prior, obs, y, GaussianSampler(np.eye(3), 1), 1.0, target, gamma=1.5)
    with pytest.raises(ConfigError):
        shrinkage_enkf_analysis(prior, obs, y, GaussianSampler(np.eye(3), 1), 1.0, None)


def test_shrinkage_target_validation(rng):
    obs = line_obs(4, 2)
    with pytest.raises(NonSpdTarget):
        ShrinkageTarget(-np.eye(4), obs)
    with pytest.raises(ShapeMismatch):
        ShrinkageTarget(np.eye(3), obs)
    with pytest.raises(ShapeMismatch):
        ShrinkageTarget(np.ones((4, 3)), obs)


def test_rblw_shrinkage_beats_the_sample_covariance_on_average():
    rng = np.random.default_rng(5)
    n = 40
    true = 0.5 * np.eye(n) + 0.5 * np.exp(-np.abs(np.subtract.outer(np.arange(n), np.arange(n))) / 3.0)
    target = np.eye(n)
    wins = 0
    for _ in range(50):
        x = rng.multivariate_normal(np.zeros(n), true, size=4).T
        a = anomalies(x)
        s = a @ a.T
        g = rblw_intensity(a)
        mu = np.trace(s) / n
        shrunk = (1 - g) * s + g * mu * target
        wins += np.linalg.norm(shrunk - true) <= np.linalg.norm(s - true)
    assert wins == 50


def test_rblw_intensity_range(rng):
    assert 0.0 <= rblw_intensity(anomalies(rng.standard_normal((10, 5)))) <= 1.0
    assert rblw_intensity(np.zeros((3, 4))) == 1.0


def test_mlenkf_with_identical_controls_is_localized_enkf(rng):
    n = 6
    prior = rng.standard_normal((n, 5))
    pair = ProjectionPair(np.eye(n)[:, :3])
    u = pair.phi_star @ prior
    triple = TotalVariateTriple(prior, u, u.copy(), pair)
    obs = line_obs(n, 3)
    y = rng.standard_normal(3)
    k = LocalizationKernel(2.0)
    ml = mlenkf_corrected_analysis(triple, obs, y, [GaussianSampler(np.eye(3), 1), GaussianSampler(np.eye(3), 2)],
                                   (1.0, 1.0), k)
    loc = localized_enkf_analysis(prior, obs, y, GaussianSampler(np.eye(3), 1), 1.0, k)
    np.testing.assert_allclose(ml.principal, loc, rtol=1e-12, atol=1e-12)


def test_mlenkf_with_empty_reduced_space_is_localized_enkf(rng):
    prior = rng.standard_normal((6, 5))
    pair = empty_pair(6)
    triple = TotalVariateTriple(prior, np.zeros((0, 5)), np.zeros((0, 9)), pair)
    obs = line_obs(6, 3)
    y = rng.standard_normal(3)
    k = LocalizationKernel(2.0)
    ml = mlenkf_corrected_analysis(triple, obs, y, [GaussianSampler(np.eye(3), 1), GaussianSampler(np.eye(3), 2)],
                                   (1.0, 1.0), k)
    loc = localized_enkf_analysis(prior, obs, y, GaussianSampler(np.eye(3), 1), 1.0, k)
    np.testing.assert_allclose(ml.principal, loc, rtol=1e-12, atol=1e-12)


def test_mlenkf_large_ensembles_match_the_kalman_filter():
    rng = np.random.default_rng(11)
    n = 4
    cov = random_spd(rng, n)
    mean = rng.standard_normal(n)
    pair = ProjectionPair(np.eye(n)[:, :2])
    h = np.eye(n)[[0, 2]]
    r = 0.5 * np.eye(2)
    y = np.array([0.2, -0.1])
    x = rng.multivariate_normal(mean, cov, size=20_000).T
    u = pair.phi_star @ rng.multivariate_normal(mean, cov, size=40_000).T
    triple = TotalVariateTriple(x, pair.phi_star @ x, u, pair)
    obs = ObservationModel(r, linear_h=h)
    out = mlenkf_corrected_analysis(triple, obs, y, [GaussianSampler.from_covariance(r, 1),
                                                     GaussianSampler.from_covariance(r, 2)])
    m_exact, c_exact = kalman(mean, cov, h, r, y)
    tol = 4 * np.sqrt(np.diag(c_exact) / 20_000) + 0.02
    assert np.all(np.abs(empirical_mean(out.principal) - m_exact) <= tol)
