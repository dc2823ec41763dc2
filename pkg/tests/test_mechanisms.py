import math

import numpy as np
import pytest

from dpomit.core import Database, PrivacyParams, RandomStream, ValueBounds
from dpomit.mechanisms import (
    EXP_MECH,
    EXPONENTIAL,
    GAUSSIAN,
    LAPLACE,
    ClusteringResult,
    analytic_gaussian_sigma,
    compute_mode,
    dp_kmedian,
    dp_lloyd,
    exponential_mechanism,
    gaussian_profile_delta,
    laplace_draw,
    laplace_draws,
    noisy_average,
    report_noisy_max,
    split_budget,
    sum_sensitivity,
)

B = ValueBounds(0.0, 10.0)


def stream(*path):
    return RandomStream(4242).child(*path)


class TestLaplaceDraw:
    def test_empirical_mean(self):
        draws = laplace_draws(1.0, 100_000, stream("mean"))
        assert -0.02 < draws.mean() < 0.02

    def test_cdf_oracle_at_ln2(self):
        # P(|X| > b ln 2) = exp(-ln 2) = 1/2
        b = 1.7
        draws = laplace_draws(b, 100_000, stream("cdf"))
        frac = np.mean(np.abs(draws) > b * math.log(2.0))
        assert abs(frac - 0.5) < 0.01

    def test_scale_homogeneity(self):
        # inverse-CDF sampling: the same stream at scale 2b gives exactly 2x
        s = stream("homog")
        a = [laplace_draw(1.0, g) for g in [s.generator()] for _ in range(50)]
        s2 = stream("homog")
        b = [laplace_draw(2.0, g) for g in [s2.generator()] for _ in range(50)]
        assert np.allclose(np.array(b), 2.0 * np.array(a))

    def test_invalid_scale(self):
        with pytest.raises(ValueError):
            laplace_draw(0.0, stream("x"))


class TestAnalyticGaussian:
    def test_zero_sensitivity(self):
        assert analytic_gaussian_sigma(1.0, 1e-6, 0.0) == 0.0

    def test_classical_is_upper_bound(self):
        eps, delta = 1.0, 1e-6
        sigma = analytic_gaussian_sigma(eps, delta, 1.0)
        classical = math.sqrt(2 * math.log(1.25 / delta)) / eps
        assert sigma <= classical
        assert classical == pytest.approx(5.2991, abs=1e-3)

    def test_homogeneity_in_sensitivity(self):
        s1 = analytic_gaussian_sigma(0.7, 1e-5, 1.0)
        s3 = analytic_gaussian_sigma(0.7, 1e-5, 3.0)
        assert s3 == pytest.approx(3 * s1, rel=1e-9)

    def test_profile_near_tight(self):
        for eps, delta in [(0.5, 1e-6), (1.0, 1e-9), (2.5, 1e-7), (4.0, 1e-5)]:
            sigma = analytic_gaussian_sigma(eps, delta, 1.0)
            achieved = gaussian_profile_delta(eps, sigma, 1.0)
            assert achieved <= delta + 1e-12
            assert achieved >= delta - 1e-6

    def test_works_beyond_eps_one(self):
        assert analytic_gaussian_sigma(3.0, 1e-6, 1.0) > 0.0

    def test_delta_zero_rejected(self):
        with pytest.raises(ValueError):
            analytic_gaussian_sigma(1.0, 0.0, 1.0)


class TestSplitBudget:
    def test_exact_reassembly(self):
        parts = split_budget(PrivacyParams(1.0, 1e-4), [0.5, 0.5])
        assert parts[0].epsilon + parts[1].epsilon == 1.0
        assert parts[0].delta + parts[1].delta == pytest.approx(1e-4, abs=1e-19)

    def test_bad_shares(self):
        with pytest.raises(AssertionError):
            split_budget(PrivacyParams(1.0, 0.0), [0.5, 0.6])


class TestNoisyAverage:
    def test_noiseless_limit(self):
        d = Database(np.full(100, 7.0), B)
        out = noisy_average(d, PrivacyParams(1e6, 0.0), LAPLACE, stream("nl"))
        assert abs(out - 7.0) < 1e-3

    def test_sum_sensitivity_table_value(self):
        assert sum_sensitivity(ValueBounds(0.0, 125.0)) == 125.0
        assert sum_sensitivity(ValueBounds(-20.0, 5.0)) == 20.0

    def test_gaussian_variant(self):
        d = Database(np.full(200, 3.0), B)
        out = noisy_average(d, PrivacyParams(1e6, 1e-6), GAUSSIAN, stream("g"))
        assert abs(out - 3.0) < 1e-3

    def test_count_clamp_keeps_finite(self):
        d = Database.empty(B)
        out = noisy_average(d, PrivacyParams(0.5, 0.0), LAPLACE, stream("clamp"))
        assert math.isfinite(out)

    def test_rejects_exponential(self):
        with pytest.raises(ValueError):
            noisy_average(Database(np.ones(3), B), PrivacyParams(1.0, 0.0), EXPONENTIAL, stream("x"))


class TestReportNoisyMax:
    def test_noiseless_limit(self):
        gen = stream("rnm-nl").generator()
        hits = sum(
            report_noisy_max([10.0, 0.0, 0.0], [1.0, 1.0, 1.0], PrivacyParams(1e6, 0.0), LAPLACE, gen) == 0
            for _ in range(10_000)
        )
        assert hits / 10_000 > 0.999

    def test_symmetry_uniform(self):
        gen = stream("rnm-sym").generator()
        reps = 10_000
        counts = np.zeros(3)
        for _ in range(reps):
            counts[report_noisy_max([5.0, 5.0, 5.0], [1.0] * 3, PrivacyParams(1.0, 0.0), LAPLACE, gen)] += 1
        # 3-sigma multinomial band around 1/3
        band = 3 * math.sqrt(reps * (1 / 3) * (2 / 3))
        assert np.all(np.abs(counts - reps / 3) < band)

    def test_against_monte_carlo_oracle(self):
        # counts [3, 0], unit sensitivity, eps = 1, Laplace
        oracle_gen = stream("rnm-oracle").generator()
        z = laplace_draws(1.0, 2_000_000, oracle_gen).reshape(-1, 2)
        oracle = np.mean(3.0 + z[:, 0] > z[:, 1])
        gen = stream("rnm-mech").generator()
        reps = 20_000
        hits = sum(
            report_noisy_max([3.0, 0.0], [1.0, 1.0], PrivacyParams(1.0, 0.0), LAPLACE, gen) == 0
            for _ in range(reps)
        )
        assert abs(hits / reps - oracle) < 0.01

    def test_exponential_and_gaussian_kinds(self):
        gen = stream("rnm-kinds").generator()
        for noise, params in ((EXPONENTIAL, PrivacyParams(2.0, 0.0)), (GAUSSIAN, PrivacyParams(2.0, 1e-6))):
            idx = report_noisy_max([100.0, 0.0], [1.0, 1.0], params, noise, gen)
            assert idx in (0, 1)

    def test_nonpositive_sensitivity(self):
        with pytest.raises(ValueError):
            report_noisy_max([1.0], [0.0], PrivacyParams(1.0, 0.0), LAPLACE, stream("x"))


class TestExponentialMechanism:
    def test_zero_budget_uniform(self):
        gen = stream("em-uniform").generator()
        reps = 12_000
        counts = np.zeros(3)
        for _ in range(reps):
            counts[exponential_mechanism([0, 1, 2], [0.0, -5.0, -9.0], 1.0, 0.0, gen)] += 1
        band = 3 * math.sqrt(reps * (1 / 3) * (2 / 3))
        assert np.all(np.abs(counts - reps / 3) < band)

    def test_closed_form_softmax(self):
        # scores {0, -1}, sensitivity 1, eps = 2 -> P(first) = 1 / (1 + e^-1)
        gen = stream("em-softmax").generator()
        reps = 100_000
        hits = sum(exponential_mechanism(["a", "b"], [0.0, -1.0], 1.0, 2.0, gen) == "a" for _ in range(reps))
        assert abs(hits / reps - 1.0 / (1.0 + math.exp(-1.0))) < 0.005

    def test_equal_scores_uniform(self):
        gen = stream("em-equal").generator()
        reps = 12_000
        hits = sum(exponential_mechanism([0, 1], [-3.0, -3.0], 1.0, 5.0, gen) == 0 for _ in range(reps))
        assert abs(hits / reps - 0.5) < 0.02

    def test_empty_items(self):
        with pytest.raises(ValueError):
            exponential_mechanism([], [], 1.0, 1.0, stream("x"))


class TestComputeMode:
    def test_singleton_noiseless(self):
        d = Database(np.array([4.0]), B)
        assert compute_mode(d, LAPLACE, PrivacyParams(1e6, 0.0), stream("m1")) == 4

    def test_universe_covers_all_integers(self):
        # value 0 never occurs but can still be selected under heavy noise
        d = Database(np.array([5.0] * 3), B)
        gen = stream("m2").generator()
        seen = {compute_mode(d, LAPLACE, PrivacyParams(0.01, 0.0), gen) for _ in range(3000)}
        assert min(seen) < 5 or max(seen) > 5

    def test_dominant_mode_never_fails(self):
        # one value holds > 50% of the records: failure probability 0
        vals = np.array([40.0] * 110 + list(np.arange(1, 100) % 30 + 1.0))
        d = Database(vals, ValueBounds(0.0, 100.0))
        gen = stream("m3").generator()
        fails = sum(
            compute_mode(d, LAPLACE, PrivacyParams(0.25, 0.0), gen) != 40 for _ in range(2000)
        )
        assert fails == 0

    def test_exp_mech_variant(self):
        d = Database(np.array([2.0] * 50 + [7.0] * 10), B)
        gen = stream("m4").generator()
        hits = sum(compute_mode(d, EXP_MECH, PrivacyParams(5.0, 0.0), gen) == 2 for _ in range(300))
        assert hits > 250

    def test_non_integral_bounds(self):
        d = Database(np.array([1.0]), ValueBounds(0.0, 9.5))
        with pytest.raises(ValueError):
            compute_mode(d, LAPLACE, PrivacyParams(1.0, 0.0), stream("x"))


class TestDPLloyd:
    def test_noiseless_centroid(self):
        rng = np.random.default_rng(1)
        pts = rng.uniform(-0.5, 0.5, size=(200, 2))
        d = Database(pts, (ValueBounds(-1, 1), ValueBounds(-1, 1)))
        res = dp_lloyd(d, 1, PrivacyParams(1e6, 0.0), iterations=1, rng=stream("lloyd"))
        assert np.linalg.norm(res.centers[0] - pts.mean(axis=0)) < 1e-3

    def test_identical_records_zero_nicv(self):
        from dpomit.harness import metric_nicv

        d = Database(np.full((50, 2), 0.25), (ValueBounds(-1, 1), ValueBounds(-1, 1)))
        res = dp_lloyd(d, 2, PrivacyParams(0.5, 0.0), rng=stream("lloyd0"))
        assert metric_nicv(d, res.centers) == 0.0

    def test_k_exceeds_size(self):
        d = Database(np.zeros((2, 1)), (ValueBounds(-1, 1),))
        with pytest.raises(ValueError):
            dp_lloyd(d, 3, PrivacyParams(1.0, 0.0), rng=stream("x"))

    def test_assignment_is_nearest(self):
        rng = np.random.default_rng(2)
        pts = rng.uniform(-1, 1, size=(80, 2))
        d = Database(pts, (ValueBounds(-1, 1), ValueBounds(-1, 1)))
        res = dp_lloyd(d, 3, PrivacyParams(2.0, 0.0), rng=stream("near"))
        d2 = ((pts[:, None, :] - res.centers[None, :, :]) ** 2).sum(axis=2)
        assert np.array_equal(res.assignment, np.argmin(d2, axis=1))


class TestDPKMedian:
    def test_all_candidates_are_medians(self):
        cand = np.array([[0.0, 0.0], [0.2, 0.1], [0.5, 0.5], [0.3, 0.9], [0.9, 0.2]]) / math.sqrt(2)
        pts = cand[[0, 1, 2, 2, 3]]
        d = Database(pts, (ValueBounds(0, 1), ValueBounds(0, 1)))
        res = dp_kmedian(d, cand, k=len(cand), params=PrivacyParams(1.0, 0.0), rng=stream("km"))
        assert sorted(map(tuple, res.centers)) == sorted(map(tuple, cand))
        from dpomit.harness import metric_kmedian_cost

        assert metric_kmedian_cost(d, res.centers) == pytest.approx(0.0)

    def test_single_cluster_high_eps(self):
        cand = np.array([[0.1, 0.1], [0.6, 0.6]])
        pts = np.tile(cand[0], (30, 1))
        d = Database(pts, (ValueBounds(0, 1), ValueBounds(0, 1)))
        hits = 0
        gen = stream("km2").generator()
        for _ in range(40):
            res = dp_kmedian(d, cand, 1, PrivacyParams(200.0, 0.0), iterations=4, rng=gen)
            hits += np.allclose(res.centers[0], cand[0])
        assert hits >= 38  # closed-form softmax puts ~all mass on the true medoid
