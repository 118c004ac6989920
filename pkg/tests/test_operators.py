import numpy as np
import pytest

from app.models.config import OperatorConfig
from app.models.operator import (
    Measurement,
    OperatorKind,
    build_blur,
    build_operator,
    coded_phaseless_operator,
    dense_gaussian_operator,
    gaussian_kernel,
    identity_operator,
    inpaint_from_mask,
    inpaint_operator,
    measure,
    phaseless_operator,
)
from app.utils.errors import InvalidArgumentError, InvalidDimensionError
from app.utils.tensor import RandomSource
from tests.conftest import central_difference, relative_error


def linear_operators():
    return [
        identity_operator(6),
        dense_gaussian_operator(4, 9, seed=3),
        inpaint_from_mask([True, False, True, True, False, True, False, False, True]),
        build_blur(5, 3, 1.0),
    ]


class TestLinearOperators:
    def test_identity(self, rng):
        x = rng.gaussian(5)
        np.testing.assert_array_equal(identity_operator(5).apply(x), x)

    def test_dense_gaussian_entries(self):
        op = dense_gaussian_operator(200, 100, seed=0)
        assert op.matrix.shape == (200, 100)
        assert abs(op.matrix.mean()) < 0.01
        assert abs(op.matrix.var() * 200 - 1.0) < 0.05

    def test_dense_gaussian_is_seeded(self):
        a = dense_gaussian_operator(3, 4, seed=7).matrix
        np.testing.assert_array_equal(a, dense_gaussian_operator(3, 4, seed=7).matrix)
        assert not np.array_equal(a, dense_gaussian_operator(3, 4, seed=8).matrix)

    @pytest.mark.parametrize("index", range(4))
    def test_adjoint_identity(self, index, rng):
        op = linear_operators()[index]
        x = rng.gaussian(op.n)
        v = rng.gaussian(op.m)
        np.testing.assert_allclose(op.apply(x) @ v, x @ op.adjoint(v), rtol=1e-10, atol=1e-12)

    @pytest.mark.parametrize("index", range(4))
    def test_residual_gradient(self, index, rng):
        op = linear_operators()[index]
        x = rng.gaussian(op.n)
        y = rng.gaussian(op.m)
        numeric = central_difference(lambda: float(np.sum((y - op.apply(x)) ** 2)), x)
        assert relative_error(op.residual_gradient(x, y), numeric) < 1e-6

    def test_inpaint_selects_kept_entries(self):
        op = inpaint_from_mask([True, False, True, False])
        assert op.m == 2
        np.testing.assert_array_equal(op.apply([1.0, 2.0, 3.0, 4.0]), [1.0, 3.0])
        np.testing.assert_array_equal(op.adjoint([5.0, 6.0]), [5.0, 0.0, 6.0, 0.0])

    def test_inpaint_keep_all(self):
        assert inpaint_operator(10, 1.0, seed=0).m == 10

    def test_inpaint_bad_probability(self):
        with pytest.raises(InvalidArgumentError):
            inpaint_operator(10, 0.0, seed=0)

    def test_blur_kernel(self):
        kernel = gaussian_kernel(5, 3.0)
        assert kernel.shape == (5, 5)
        assert kernel.sum() == pytest.approx(1.0)
        np.testing.assert_allclose(kernel, kernel.T)
        assert kernel[2, 2] == kernel.max()

    def test_blur_keeps_constants(self):
        op = build_blur(6, 5, 3.0)
        np.testing.assert_allclose(op.apply(np.full(36, 2.5)), 2.5)

    def test_blur_wraps_around(self):
        op = build_blur(5, 3, 1.0)
        image = np.zeros((5, 5))
        image[0, 0] = 1.0
        out = op.apply(image.ravel()).reshape(5, 5)
        assert out[4, 4] > 0
        assert out.sum() == pytest.approx(1.0)

    def test_blur_rejects_even_kernel(self):
        with pytest.raises(InvalidArgumentError):
            build_blur(6, 4, 1.0)

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidDimensionError):
            identity_operator(3).apply(np.ones(4))


class TestPhaseless:
    def test_magnitude_of_dense_map(self, rng):
        x = rng.gaussian(6)
        dense = dense_gaussian_operator(8, 6, seed=2)
        np.testing.assert_allclose(phaseless_operator(8, 6, seed=2).apply(x), np.abs(dense.apply(x)))

    def test_no_adjoint(self):
        with pytest.raises(InvalidArgumentError):
            phaseless_operator(4, 3, seed=0).adjoint(np.ones(4))

    @pytest.mark.parametrize("op", [phaseless_operator(8, 6, seed=2), coded_phaseless_operator(5, 20, 3, seed=4)])
    def test_subgradient_matches_finite_differences(self, op, rng):
        x = rng.gaussian(op.n)
        y = np.abs(rng.gaussian(op.m))
        numeric = central_difference(lambda: float(np.sum((y - op.apply(x)) ** 2)), x)
        assert relative_error(op.residual_gradient(x, y), numeric) < 1e-6

    def test_sign_of_zero_is_zero(self):
        op = phaseless_operator(5, 4, seed=1)
        grad = op.residual_gradient(np.zeros(4), np.ones(5))
        np.testing.assert_array_equal(grad, 0.0)

    def test_coded_phaseless_shape(self):
        op = coded_phaseless_operator(6, 20, 5, seed=0)
        assert op.n == 36 and op.m == 20
        assert set(np.unique(op.signs)) <= {-1.0, 1.0}
        assert np.all(op.apply(np.ones(36)) >= 0)


class TestMeasure:
    def test_noise_free(self, rng):
        op = dense_gaussian_operator(5, 4, seed=0)
        x = rng.gaussian(4)
        meas = measure(op, x, 0.0, rng)
        np.testing.assert_array_equal(meas.y, op.apply(x))
        assert meas.sigma == 0.0

    def test_noise_level(self):
        op = identity_operator(10000)
        meas = measure(op, np.zeros(10000), 0.5, RandomSource(3))
        assert abs(meas.y.std() - 0.5) < 0.01

    def test_rejects_negative_sigma(self, rng):
        with pytest.raises(InvalidArgumentError):
            measure(identity_operator(2), np.zeros(2), -0.1, rng)

    def test_rejects_non_finite_measurement(self):
        with pytest.raises(ValueError, match="non-finite"):
            Measurement(y=np.array([1.0, np.nan]), sigma=0.0, operator=identity_operator(2))

    def test_rejects_matrix_measurement(self):
        with pytest.raises(ValueError, match="one-dimensional"):
            Measurement(y=np.zeros((2, 1)), sigma=0.0, operator=identity_operator(2))


class TestBuildOperator:
    def test_identity_default(self):
        op = build_operator(OperatorConfig(), 7)
        assert op.kind == OperatorKind.identity and op.m == 7

    def test_ratio(self):
        op = build_operator(OperatorConfig(kind="dense_gaussian", ratio=0.5, seed=2), 16)
        assert (op.m, op.n) == (8, 16)

    def test_explicit_m(self):
        op = build_operator(OperatorConfig(kind="phaseless_gaussian", m=12), 16)
        assert op.m == 12

    def test_blur_grid(self):
        op = build_operator(OperatorConfig(kind="circular_blur", ksize=3, std=1.0), 16)
        assert op.side == 4

    def test_blur_needs_square(self):
        with pytest.raises(InvalidDimensionError):
            build_operator(OperatorConfig(kind="circular_blur", ksize=3), 15)

    def test_descriptor(self):
        op = build_operator(OperatorConfig(kind="inpaint_mask", keep_prob=0.5, seed=9), 20)
        desc = op.descriptor()
        assert desc["kind"] == "inpaint_mask"
        assert desc["seed"] == 9
        assert desc["params"] == {"keep_prob": 0.5}
