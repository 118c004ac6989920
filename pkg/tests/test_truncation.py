import numpy as np
import pytest
from scipy import stats

from app.models.truncation import TruncationLaw, prefix_mask, sample_k, sample_ks, truncate
from app.utils.errors import InvalidIndexError
from app.utils.tensor import RandomSource


class TestTruncate:
    def test_example(self):
        np.testing.assert_array_equal(truncate([3.0, 1.0, 4.0, 1.0, 5.0], 2), [3.0, 1.0, 0.0, 0.0, 0.0])

    def test_full_k_is_identity(self, rng):
        z = rng.gaussian(6)
        np.testing.assert_array_equal(truncate(z, 6), z)

    def test_idempotent_and_linear(self, rng):
        a, b = rng.gaussian(5), rng.gaussian(5)
        np.testing.assert_array_equal(truncate(truncate(a, 3), 3), truncate(a, 3))
        np.testing.assert_allclose(truncate(2.0 * a + b, 3), 2.0 * truncate(a, 3) + truncate(b, 3))

    def test_batches_on_last_axis(self, rng):
        z = rng.gaussian((4, 5))
        out = truncate(z, 2)
        np.testing.assert_array_equal(out[:, :2], z[:, :2])
        np.testing.assert_array_equal(out[:, 2:], 0.0)

    def test_does_not_mutate(self):
        z = np.ones(3)
        truncate(z, 1)
        np.testing.assert_array_equal(z, 1.0)

    @pytest.mark.parametrize("k", [0, 6])
    def test_out_of_range(self, k):
        with pytest.raises(InvalidIndexError):
            truncate(np.ones(5), k)

    def test_prefix_mask(self):
        np.testing.assert_array_equal(prefix_mask([1, 3], 3), [[1.0, 0.0, 0.0], [1.0, 1.0, 1.0]])


class TestTruncationLaw:
    def test_two_point_example(self):
        np.testing.assert_allclose(TruncationLaw(d=2, p=0.5).pmf(), [2 / 3, 1 / 3])

    def test_pmf_sums_to_one(self):
        for d, p in ((1, 0.3), (8, 0.3), (64, 0.05), (4096, 1e-3)):
            assert TruncationLaw(d=d, p=p).pmf().sum() == pytest.approx(1.0, abs=1e-12)

    def test_p_one_is_point_mass(self, rng):
        law = TruncationLaw(d=5, p=1.0)
        np.testing.assert_array_equal(law.pmf(), [1.0, 0.0, 0.0, 0.0, 0.0])
        assert np.all(sample_ks(law, rng, 1000) == 1)

    def test_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            TruncationLaw(d=0, p=0.5)
        with pytest.raises(ValueError):
            TruncationLaw(d=3, p=0.0)

    def test_sample_frequencies(self):
        ks = sample_ks(TruncationLaw(d=2, p=0.5), RandomSource(1), 100_000)
        assert abs(np.mean(ks == 1) - 2 / 3) < 0.01

    def test_samples_in_range(self, rng):
        ks = sample_ks(TruncationLaw(d=7, p=0.2), rng, 10_000)
        assert ks.min() >= 1 and ks.max() <= 7
        assert 1 <= sample_k(TruncationLaw(d=7, p=0.2), rng) <= 7

    @pytest.mark.parametrize("d,p", [(8, 0.3), (64, 0.05)])
    def test_goodness_of_fit(self, d, p):
        law = TruncationLaw(d=d, p=p)
        count = 100_000
        ks = sample_ks(law, RandomSource(d), count)
        observed = np.bincount(ks, minlength=d + 1)[1:]
        result = stats.chisquare(observed, law.pmf() * count)
        assert result.pvalue > 1e-3

    def test_mean_for_small_p(self):
        law = TruncationLaw(d=4096, p=1e-3)
        ks = sample_ks(law, RandomSource(5), 100_000)
        assert abs(ks.mean() - law.mean()) < 0.02 * law.mean()
