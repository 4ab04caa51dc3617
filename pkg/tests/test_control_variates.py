import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mfenkf.control_variates import (
    CostModel,
    FidelityChain,
    GainFlavor,
    ancillary_gain,
    cheaper_than_enkf,
    effective_ensemble_size,
    empirical_full_gain,
    empirical_gain,
    estimator_cost,
    half_gain,
    optimal_gain,
    signed_measure_cov,
    telescoping_total_variate,
    total_variate_cov,
)
from mfenkf.errors import DegenerateVarianceBudget, ShapeMismatch, SingularControlCovariance
from mfenkf.linalg import logdet_spd

from conftest import random_spd


def joint_instance(rng, n=3, r=2):
    """Joint SPD covariance of (chi, uhat) plus an independent ancillary covariance."""
    c = random_spd(rng, n + r)
    return c[:n, :n], c[:n, n:], c[n:, n:], random_spd(rng, r)


def test_scalar_optimal_gain():
    np.testing.assert_allclose(optimal_gain(0.5, 1.0).S, [[0.5]])
    assert optimal_gain(0.5, 1.0).flavor is GainFlavor.EXACT_MEAN


def test_uncorrelated_control_gets_zero_gain(rng):
    assert not np.any(optimal_gain(np.zeros((3, 2)), random_spd(rng, 2)).S)


def test_singular_control_covariance_rejected():
    with pytest.raises(SingularControlCovariance):
        optimal_gain(np.ones((2, 2)), np.ones((2, 2)))


def test_shape_mismatch_rejected():
    with pytest.raises(ShapeMismatch):
        optimal_gain(np.ones((2, 3)), np.eye(2))


def test_ancillary_gain_reductions(rng):
    cxx, cxu, cuu, _ = joint_instance(rng)
    np.testing.assert_allclose(ancillary_gain(cxu, cuu, cuu).S, half_gain(cxu, cuu).S, rtol=1e-12)
    np.testing.assert_allclose(ancillary_gain(cxu, cuu, np.zeros_like(cuu)).S, optimal_gain(cxu, cuu).S,
                               rtol=1e-12)


def test_ancillary_gain_minimizes_determinant_on_a_grid():
    rng = np.random.default_rng(3)
    cxx, cxu, cuh, cu = joint_instance(rng, n=1, r=2)
    s_opt = ancillary_gain(cxu, cuh, cu).S
    best = logdet_spd(total_variate_cov(cxx, cxu, cuh, cu, s_opt))
    grid = np.linspace(-0.5, 0.5, 41)
    for d0, d1 in itertools.product(grid, grid):
        trial = s_opt + np.array([[d0, d1]])
        assert logdet_spd(total_variate_cov(cxx, cxu, cuh, cu, trial)) >= best - 1e-12


def test_half_gain_scalar_and_relation(rng):
    np.testing.assert_allclose(half_gain(0.5, 1.0).S, [[0.25]])
    _, cxu, cuu, _ = joint_instance(rng)
    np.testing.assert_allclose(half_gain(cxu, cuu).S, 0.5 * optimal_gain(cxu, cuu).S, rtol=1e-12)


def test_total_variate_covariance_cases(rng):
    cxx, cxu, cuh, cu = joint_instance(rng)
    np.testing.assert_allclose(total_variate_cov(cxx, cxu, cuh, cu, np.zeros((3, 2))), cxx)
    c = random_spd(rng, 3)
    s = ancillary_gain(c, c, c)
    np.testing.assert_allclose(total_variate_cov(c, c, c, c, s), c / 2, rtol=1e-10, atol=1e-12)
    with pytest.raises(ShapeMismatch):
        total_variate_cov(cxx, cxu, cuh, cu, np.zeros((2, 3)))


def test_total_variate_covariance_matches_monte_carlo():
    rng = np.random.default_rng(8)
    cxx, cxu, cuh, cu = joint_instance(rng, n=2, r=1)
    s = np.array([[0.3], [-0.2]])
    joint = np.block([[cxx, cxu], [cxu.T, cuh]])
    xs = rng.multivariate_normal(np.zeros(3), joint, size=200_000).T
    us = rng.multivariate_normal(np.zeros(1), cu, size=200_000).T
    z = xs[:2] - s @ (xs[2:] - us)
    np.testing.assert_allclose(np.cov(z), total_variate_cov(cxx, cxu, cuh, cu, s), rtol=0.03, atol=0.03)


def test_signed_measure_cases(rng):
    np.testing.assert_allclose(signed_measure_cov(1.0, 3.0, 1.0), [[-1.0]])
    a, b, c = (random_spd(rng, 3) for _ in range(3))
    np.testing.assert_allclose(signed_measure_cov(a, b, b), a, rtol=1e-13)
    np.testing.assert_allclose(signed_measure_cov(a, b, c), a - b + c)
    with pytest.raises(ShapeMismatch):
        signed_measure_cov(a, b, np.eye(2))


def test_empirical_gain_limits(rng):
    cxx, cxu, cuh, cu = joint_instance(rng)
    np.testing.assert_allclose(empirical_gain(cxu, cuh, cu).S, ancillary_gain(cxu, cuh, cu).S)
    assert not np.any(empirical_gain(np.zeros((3, 2)), cuh, cu).S)


def test_empirical_gain_converges_to_ancillary_gain():
    rng = np.random.default_rng(4)
    cxx, cxu, cuh, cu = joint_instance(rng, n=2, r=2)
    joint = np.block([[cxx, cxu], [cxu.T, cuh]])
    xs = rng.multivariate_normal(np.zeros(4), joint, size=100_000).T
    us = rng.multivariate_normal(np.zeros(2), cu, size=100_000).T
    c = np.cov(np.vstack([xs, us]))
    s_emp = empirical_full_gain(c[:2, 2:4], c[2:4, 2:4], c[4:, 4:]).S
    s_true = ancillary_gain(cxu, cuh, cu).S
    assert np.abs(s_emp - s_true).max() <= 0.03 * np.abs(s_true).max()


def test_telescoping_cases():
    x = np.array([1.0, 2.0])
    chain = FidelityChain([np.eye(2) * 0.5])
    np.testing.assert_allclose(telescoping_total_variate(x, [np.array([1.0, -1.0])], chain), [0.5, 2.5])
    np.testing.assert_array_equal(telescoping_total_variate(x, [np.zeros(2)], chain), x)
    three = FidelityChain.from_projections([np.eye(1)] * 3)
    diffs = [np.array([d]) for d in (1.0, 2.0, 4.0)]
    expect = 5.0 - (0.5 * 1.0 + 0.25 * 2.0 + 0.125 * 4.0)
    assert telescoping_total_variate(np.array([5.0]), diffs, three) == pytest.approx([expect])
    with pytest.raises(ShapeMismatch):
        telescoping_total_variate(x, diffs, chain)


def test_chain_dimensions_must_agree():
    with pytest.raises(ShapeMismatch):
        FidelityChain([np.ones((4, 3)), np.ones((2, 1))])


def test_cost_of_the_reference_configuration():
    assert estimator_cost(CostModel(C_x=63, C_u=1, N_x=4, N_u=40)) == 296
    assert estimator_cost(CostModel(C_x=63, C_u=0, N_x=4, N_u=40)) == 4 * 63


@given(st.floats(0, 100), st.floats(0, 100), st.integers(2, 50), st.integers(2, 500))
def test_cost_arithmetic(cx, cu, nx, nu):
    assert estimator_cost(CostModel(cx, cu, nx, nu)) == pytest.approx(nx * cx + (nx + nu) * cu)


def test_cost_model_validation():
    with pytest.raises(ValueError):
        CostModel(-1, 1, 4, 40)
    with pytest.raises(ValueError):
        CostModel(1, 1, 1, 40)


def test_effective_size_cases():
    assert effective_ensemble_size(2.0, 2.0, 0.0, 4, 40) == pytest.approx(4.0)
    assert effective_ensemble_size(2.0, 0.5, 0.7, 6, 6) == pytest.approx(6 * 2.0 / 0.5)
    with pytest.raises(DegenerateVarianceBudget):
        effective_ensemble_size(1.0, 0.1, 1.0, 4, 40)


def test_cheaper_than_enkf():
    m = CostModel(63, 1, 4, 40)
    assert cheaper_than_enkf(m, 5)
    assert not cheaper_than_enkf(CostModel(63, 10, 4, 40), 5)


@given(st.integers(0, 10_000))
def test_ancillary_gain_total_covariance_is_psd_and_dominated(seed):
    rng = np.random.default_rng(seed)
    cxx, cxu, cuh, cu = joint_instance(rng)
    cz = total_variate_cov(cxx, cxu, cuh, cu, ancillary_gain(cxu, cuh, cu))
    tr = np.trace(cxx)
    assert np.linalg.eigvalsh(cz).min() >= -1e-10 * tr
    assert np.linalg.eigvalsh(cxx - cz).min() >= -1e-10 * tr
