import numpy as np
import pytest

from app.utils.errors import InvalidArgumentError, InvalidDimensionError, InvalidValueError
from app.utils.tensor import (
    RandomSource,
    gaussian_vector,
    mc_covariance_oracle,
    mc_frobenius_oracle,
    svd,
)


class TestRandomSource:
    def test_same_key_same_stream(self):
        a = RandomSource(7, 3).gaussian(100)
        b = RandomSource(7, 3).gaussian(100)
        np.testing.assert_array_equal(a, b)

    def test_streams_differ(self):
        a = RandomSource(7, 0).gaussian(16)
        b = RandomSource(7, 1).gaussian(16)
        assert not np.array_equal(a, b)

    def test_gaussian_independent_of_call_sizes(self):
        whole = RandomSource(11).gaussian(8)
        rng = RandomSource(11)
        parts = np.concatenate((rng.gaussian(5), rng.gaussian(3)))
        np.testing.assert_array_equal(whole, parts)

    def test_gaussian_shape_does_not_change_draws(self):
        flat = RandomSource(5).gaussian(6)
        grid = RandomSource(5).gaussian((2, 3))
        np.testing.assert_array_equal(flat.reshape(2, 3), grid)

    def test_children_are_deterministic_and_distinct(self):
        parent = RandomSource(9)
        np.testing.assert_array_equal(parent.child(2).uniform(4), RandomSource(9).child(2).uniform(4))
        assert not np.array_equal(parent.child(1).uniform(4), parent.child(2).uniform(4))

    def test_uniform_strictly_inside_unit_interval(self):
        u = RandomSource(3).uniform(100000)
        assert u.min() > 0.0 and u.max() < 1.0

    def test_integers_range(self):
        draws = RandomSource(3).integers(2, 5, 10000)
        assert set(np.unique(draws)) == {2, 3, 4}

    def test_integers_empty_range(self):
        with pytest.raises(InvalidArgumentError):
            RandomSource(0).integers(3, 3)

    def test_permutation(self):
        perm = RandomSource(1).permutation(50)
        np.testing.assert_array_equal(np.sort(perm), np.arange(50))


class TestGaussianVector:
    def test_moments(self):
        x = gaussian_vector(RandomSource(1), 1_000_000)
        assert abs(x.mean()) < 0.01
        assert abs(x.var() - 1.0) < 0.01

    def test_sigma_scales(self):
        x = gaussian_vector(RandomSource(2), 200_000, sigma=3.0)
        assert abs(x.std() - 3.0) < 0.03

    def test_rejects_empty(self):
        with pytest.raises(InvalidDimensionError):
            gaussian_vector(RandomSource(0), 0)

    def test_rejects_negative_sigma(self):
        with pytest.raises(InvalidArgumentError):
            gaussian_vector(RandomSource(0), 3, sigma=-1.0)


class TestSvd:
    def test_diagonal(self):
        u, s, v = svd(np.diag([2.0, 1.0, 0.5]))
        np.testing.assert_allclose(s, [2.0, 1.0, 0.5])
        np.testing.assert_allclose(u, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(v, np.eye(3), atol=1e-12)

    def test_reconstruction_and_orthogonality(self, rng):
        m = rng.gaussian((6, 6))
        u, s, v = svd(m)
        np.testing.assert_allclose((u * s) @ v.T, m, atol=1e-12)
        np.testing.assert_allclose(u.T @ u, np.eye(6), atol=1e-12)
        np.testing.assert_allclose(v.T @ v, np.eye(6), atol=1e-12)
        assert np.all(np.diff(s) <= 0)

    @pytest.mark.parametrize("shape", [(1, 1), (3, 7), (16, 16), (40, 25), (64, 64)])
    def test_roundtrip_up_to_64(self, shape):
        m = RandomSource(sum(shape)).gaussian(shape)
        u, s, v = svd(m)
        r = min(shape)
        assert np.linalg.norm((u * s) @ v.T - m) / np.linalg.norm(m) < 1e-9
        np.testing.assert_allclose(u.T @ u, np.eye(r), atol=1e-10)
        np.testing.assert_allclose(v.T @ v, np.eye(r), atol=1e-10)
        assert np.all(np.diff(s) <= 0) and np.all(s >= 0)

    def test_sign_convention(self, rng):
        u, _, _ = svd(rng.gaussian((5, 5)))
        pivots = u[np.argmax(np.abs(u), axis=0), np.arange(5)]
        assert np.all(pivots > 0)

    def test_rejects_non_finite(self):
        with pytest.raises(InvalidValueError):
            svd(np.array([[1.0, np.nan], [0.0, 1.0]]))

    def test_rejects_vector(self):
        with pytest.raises(InvalidDimensionError):
            svd(np.ones(3))


class TestOracles:
    def test_identity_frobenius(self):
        est = mc_frobenius_oracle(np.eye(5), RandomSource(1), 100_000)
        assert abs(est.mean - 5.0) < 4 * est.std_error

    def test_diagonal_frobenius(self):
        est = mc_frobenius_oracle(np.diag([3.0, 4.0]), RandomSource(2), 100_000)
        assert abs(est.mean - 25.0) < 4 * est.std_error

    def test_zero_matrix(self):
        est = mc_frobenius_oracle(np.zeros((3, 3)), RandomSource(3), 10)
        assert est.mean == 0.0
        assert est.std_error == 0.0

    def test_covariance(self):
        est = mc_covariance_oracle(np.eye(2), np.diag([2.0, 3.0]), RandomSource(4), 100_000)
        assert abs(est.mean - 5.0) < 4 * est.std_error

    def test_covariance_trace_identity(self, rng):
        m = rng.gaussian((3, 4))
        a = rng.gaussian((4, 4))
        cov = a @ a.T
        est = mc_covariance_oracle(m, cov, RandomSource(5), 100_000)
        assert abs(est.mean - np.trace(m @ cov @ m.T)) < 4 * est.std_error

    def test_covariance_not_psd(self):
        with pytest.raises(InvalidValueError):
            mc_covariance_oracle(np.eye(2), np.diag([1.0, -1.0]), RandomSource(0), 10)

    def test_covariance_not_symmetric(self):
        with pytest.raises(InvalidValueError):
            mc_covariance_oracle(np.eye(2), np.array([[1.0, 0.5], [0.0, 1.0]]), RandomSource(0), 10)

    def test_covariance_shape(self):
        with pytest.raises(InvalidDimensionError):
            mc_covariance_oracle(np.eye(2), np.eye(3), RandomSource(0), 10)

    def test_random_matrices(self):
        rng = RandomSource(77)
        for trial in range(20):
            m = rng.gaussian((4, 5))
            est = mc_frobenius_oracle(m, rng.child(trial), 100_000)
            assert abs(est.mean - np.sum(m ** 2)) < 4 * est.std_error, trial
            a = rng.gaussian((5, 5))
            cov = a @ a.T
            est = mc_covariance_oracle(m, cov, rng.child(100 + trial), 100_000)
            assert abs(est.mean - np.trace(m @ cov @ m.T)) < 4 * est.std_error, trial
