import numpy as np
import pytest

from app.controllers.theory_controller import (
    TheoryController,
    all_closed_form_mse,
    closed_form_mse,
    linear_map_estimate,
    linear_map_latent,
    mc_mse_oracle,
    optimal_k,
    optimal_k_report,
)
from app.models.family import DenoiseProblem, GeneratorFamily, generator_at, make_family, map_problem, mle_problem
from app.utils.errors import InvalidArgumentError, InvalidIndexError, SingularGeneratorError
from app.utils.tensor import RandomSource


def problem(spectrum, sigma, gamma=0.0):
    return DenoiseProblem(family=GeneratorFamily.from_spectrum(spectrum), sigma=sigma, gamma=gamma)


class TestClosedForm:
    def test_mle_example(self):
        p = problem([2.0, 1.0, 0.5], 0.8)
        np.testing.assert_allclose(all_closed_form_mse(p), [1.89, 1.53, 1.92])
        assert optimal_k_report(p) == (2, "threshold")

    def test_map_example(self):
        p = problem([2.0, 1.0, 0.5], 0.8, gamma=0.2)
        np.testing.assert_allclose(closed_form_mse(p, 3), 1.3087, atol=1e-4)
        assert closed_form_mse(p, 3) < closed_form_mse(p, 2)
        assert optimal_k(p) == 3

    def test_vectorized_matches_scalar(self):
        p = problem([3.0, 2.0, 1.5, 0.7, 0.1], 0.9, gamma=0.3)
        expected = [closed_form_mse(p, k) for k in range(1, 6)]
        np.testing.assert_allclose(all_closed_form_mse(p), expected)

    def test_tie_at_threshold_picks_smaller_k(self):
        p = problem([2.0, 1.0, 0.8], 0.8)
        risks = all_closed_form_mse(p)
        assert risks[1] == pytest.approx(risks[2])
        assert optimal_k(p) == 2

    def test_empty_threshold_set_falls_back(self):
        p = problem([0.5, 0.3], 1.0)
        assert optimal_k_report(p) == (1, "exhaustive")

    def test_gamma_above_hypothesis_is_exhaustive(self):
        p = problem([2.0, 1.0, 0.5], 0.8, gamma=1.0)
        report = optimal_k_report(p)
        assert report.rule == "exhaustive"
        assert report.k == int(np.argmin(all_closed_form_mse(p))) + 1

    def test_tiny_noise_keeps_every_mode(self):
        p = problem([2.0, 1.0, 0.5, 0.1], 1e-6)
        assert optimal_k(p) == 4

    def test_threshold_rule_matches_argmin(self):
        rng = RandomSource(21)
        for trial in range(100):
            s = np.sort(np.abs(rng.gaussian(12)) + 1e-3)[::-1]
            sigma = float(np.abs(rng.gaussian()) + 0.05)
            for gamma in (0.0, sigma ** 2 / 4, sigma ** 2 / 2):
                p = problem(s, sigma, gamma)
                assert optimal_k(p) == int(np.argmin(all_closed_form_mse(p))) + 1, trial

    def test_larger_noise_never_keeps_more_modes(self):
        s = [3.0, 2.2, 1.5, 1.1, 0.8, 0.5, 0.3, 0.1]
        gamma = 0.05
        sigmas = np.linspace(np.sqrt(2.0 * gamma) + 1e-3, 5.0, 400)
        ks = [optimal_k(problem(s, float(sigma), gamma)) for sigma in sigmas]
        assert np.all(np.diff(ks) <= 0)
        assert ks[0] == len(s) and ks[-1] == 1

    def test_k_out_of_range(self):
        p = problem([2.0, 1.0], 0.5)
        with pytest.raises(InvalidIndexError):
            closed_form_mse(p, 0)
        with pytest.raises(InvalidIndexError):
            closed_form_mse(p, 3)


class TestFamily:
    def test_rejects_zero_singular_value(self):
        with pytest.raises(ValueError):
            GeneratorFamily.from_spectrum([1.0, 0.0])

    def test_rejects_increasing_spectrum(self):
        with pytest.raises(ValueError):
            GeneratorFamily.from_spectrum([1.0, 2.0])

    def test_singular_matrix(self):
        with pytest.raises(SingularGeneratorError):
            GeneratorFamily.from_matrix(np.array([[1.0, 2.0], [2.0, 4.0]]))

    def test_make_family_roundtrip_16(self):
        g = RandomSource(5).gaussian((16, 16))
        fam = make_family(g)
        assert np.linalg.norm(generator_at(fam, 16) - g) / np.linalg.norm(g) < 1e-9
        assert np.all(np.diff(fam.s) <= 0) and np.all(fam.s > 0)

    def test_orthogonal_generator_has_unit_spectrum(self, rng):
        q, _ = np.linalg.qr(rng.gaussian((6, 6)))
        np.testing.assert_allclose(make_family(q).s, np.ones(6), atol=1e-12)

    def test_generator_at_sums_modes(self, rng):
        fam = GeneratorFamily.from_matrix(rng.gaussian((4, 4)))
        np.testing.assert_allclose(fam.generator_at(4), fam.generator, atol=1e-12)
        rank = np.linalg.matrix_rank(fam.generator_at(2))
        assert rank == 2

    def test_problem_shortcuts(self):
        fam = GeneratorFamily.from_spectrum([1.0])
        assert mle_problem(fam, 0.5).gamma == 0.0
        assert map_problem(fam, 0.5).gamma == pytest.approx(0.25)


class TestLinearMap:
    def test_example(self):
        p = DenoiseProblem(family=GeneratorFamily.from_matrix(np.diag([2.0, 1.0])), sigma=0.5, gamma=1.0)
        np.testing.assert_allclose(linear_map_estimate(p, 2, [3.0, 3.0]), [2.4, 1.5])
        np.testing.assert_allclose(linear_map_estimate(p, 1, [3.0, 3.0]), [2.4, 0.0])

    def test_latent_zero_past_k(self, rng):
        p = problem([3.0, 2.0, 1.0, 0.5], 0.5, 0.1)
        z = linear_map_latent(p, 2, rng.gaussian(4))
        assert z.shape == (4,)
        np.testing.assert_array_equal(z[2:], 0.0)

    def test_estimate_is_stationary(self, rng):
        fam = GeneratorFamily.from_matrix(rng.gaussian((5, 5)))
        p = DenoiseProblem(family=fam, sigma=0.5, gamma=0.3)
        y = rng.gaussian(5)
        k = 3
        z = linear_map_latent(p, k, y)[:k]

        def objective(w):
            x = fam.u[:, :k] @ (fam.s[:k] * w)
            return 0.5 * np.sum((y - x) ** 2) + 0.5 * p.gamma * np.sum(w ** 2)

        base = objective(z)
        for i in range(k):
            for delta in (1e-3, -1e-3):
                w = z.copy()
                w[i] += delta
                assert objective(w) >= base


class TestMonteCarlo:
    def test_matches_closed_form(self):
        p = problem([2.0, 1.0, 0.5], 0.8)
        est = mc_mse_oracle(p, 2, RandomSource(1), 200_000)
        assert abs(est.mean - 1.53) < 4 * est.std_error

    def test_noise_free_limit(self):
        p = problem([2.0, 1.0, 0.5], 1e-9)
        est = mc_mse_oracle(p, 3, RandomSource(2), 1000)
        assert est.mean < 1e-12

    def test_needs_two_trials(self):
        with pytest.raises(InvalidArgumentError):
            mc_mse_oracle(problem([1.0], 0.5), 1, RandomSource(0), 1)

    @pytest.mark.slow
    def test_random_rotated_families(self):
        rng = RandomSource(33)
        for instance in range(20):
            fam = GeneratorFamily.from_matrix(rng.gaussian((16, 16)))
            sigma = float(0.2 + rng.uniform())
            for case, gamma in enumerate((0.0, sigma ** 2 / 4, sigma ** 2 / 2)):
                p = DenoiseProblem(family=fam, sigma=sigma, gamma=gamma)
                # one stream per case, so every k sees the same (z0, eta) draws
                stream = rng.child(3 * instance + case)
                for k in range(1, fam.n + 1):
                    est = mc_mse_oracle(p, k, stream.child(0), 200_000)
                    assert abs(est.mean - closed_form_mse(p, k)) < 4 * est.std_error, (instance, gamma, k)


class TestTheoryController:
    def test_table(self):
        p = problem([2.0, 1.0, 0.5], 0.8)
        rows = TheoryController(p).table(RandomSource(0), 20_000)
        assert [row.k for row in rows] == [1, 2, 3]
        assert [row.optimal for row in rows] == [False, True, False]
        for row in rows:
            assert row.rule == "threshold"
            assert abs(row.mc_mean - row.closed_form) < 5 * row.mc_std_error

    def test_table_is_deterministic(self):
        p = problem([2.0, 1.0], 0.5)
        a = TheoryController(p).table(RandomSource(4), 100)
        b = TheoryController(p).table(RandomSource(4), 100)
        assert a == b
