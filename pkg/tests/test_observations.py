import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given
from hypothesis import strategies as st

from mfenkf.errors import NoGeometry, ShapeMismatch, SingularInnovation
from mfenkf.observations import LocalizationKernel, ObservationModel, kalman_gain
from mfenkf.projection import ProjectionPair


def test_linear_and_callable_operators_agree(rng):
    h = rng.standard_normal((3, 5))
    x = rng.standard_normal((5, 4))
    a = ObservationModel(np.eye(3), linear_h=h)
    b = ObservationModel(np.eye(3), h=lambda e: h @ e)
    c = ObservationModel(np.eye(3), linear_h=sp.csr_matrix(h))
    np.testing.assert_allclose(a(x), b(x))
    np.testing.assert_allclose(c.apply(x), a(x))
    assert a.is_linear and not b.is_linear and a.m == 3


def test_operator_validation():
    with pytest.raises(ValueError):
        ObservationModel(np.eye(2))
    with pytest.raises(ValueError):
        ObservationModel(np.eye(2), h=lambda e: e, linear_h=np.eye(2))
    with pytest.raises(ShapeMismatch):
        ObservationModel(np.eye(2), linear_h=np.eye(3))
    with pytest.raises(ValueError):
        ObservationModel(np.eye(2), h=lambda e: e).dense_h()


def test_reduced_operator_composes_with_the_lift(rng):
    h = rng.standard_normal((3, 6))
    pair = ProjectionPair(rng.standard_normal((6, 2)))
    u = rng.standard_normal((2, 5))
    for obs in (ObservationModel(np.eye(3), linear_h=h), ObservationModel(np.eye(3), h=lambda e: h @ e)):
        np.testing.assert_allclose(obs.reduced(pair)(u), h @ pair.phi @ u)


def test_identity_model():
    obs = ObservationModel.identity(4, variance=2.0)
    np.testing.assert_array_equal(obs.dense_h(), np.eye(4))
    np.testing.assert_array_equal(obs.cov_obs, 2.0 * np.eye(4))


def coords(n):
    return np.column_stack([np.arange(n, dtype=float), np.zeros(n)])


@given(st.floats(0.1, 50.0), st.integers(2, 12))
def test_kernel_is_symmetric_unit_diagonal_and_decreasing(radius, n):
    k = LocalizationKernel(radius).matrix(coords(n))
    np.testing.assert_allclose(k, k.T)
    np.testing.assert_allclose(np.diag(k), 1.0)
    assert np.all(np.diff(k[0]) <= 0)


def test_kernel_limits_and_form():
    c = coords(5)
    assert np.all(LocalizationKernel(np.inf).matrix(c) == 1.0)
    np.testing.assert_allclose(LocalizationKernel(1e-3).matrix(c), np.eye(5), atol=1e-300)
    assert LocalizationKernel(2.0).matrix(c)[0, 2] == pytest.approx(np.exp(-4.0 / 8.0))
    with pytest.raises(ValueError):
        LocalizationKernel(0.0)
    with pytest.raises(ValueError):
        LocalizationKernel(1.0, kind="gaspari-cohn")


def test_kernel_blocks_need_geometry():
    obs = ObservationModel(np.eye(2), linear_h=np.eye(2))
    with pytest.raises(NoGeometry):
        LocalizationKernel(1.0).blocks(obs)
    located = ObservationModel(np.eye(2), linear_h=np.eye(3)[:2], state_coords=coords(3), obs_coords=coords(2))
    xo, oo = LocalizationKernel(1.0).blocks(located)
    assert xo.shape == (3, 2) and oo.shape == (2, 2)


def test_kalman_gain_scalar_closed_form():
    p, r = 2.0, 0.5
    k = kalman_gain(np.array([[p]]), np.array([[p]]), np.array([[r]]))
    assert k[0, 0] == pytest.approx(p / (p + r))


def test_singular_innovation_raises_unless_indefinite_allowed():
    cross, innov, r = np.ones((2, 2)), -2.0 * np.eye(2), np.eye(2)
    with pytest.raises(SingularInnovation):
        kalman_gain(cross, innov, r)
    k = kalman_gain(cross, innov, r, indefinite_ok=True)
    # shifting the ensemble part to PSD leaves R as the factored matrix
    np.testing.assert_allclose(k, cross, atol=1e-8)
