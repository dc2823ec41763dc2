import math
from fractions import Fraction

import numpy as np
import pytest

from dpomit.accounting import MMParams, delta_s, epsilon_s, l1, l3
from dpomit.core import Database, PrivacyParams, RandomStream, ValueBounds
from dpomit.oracle import (
    brute_force_forward_small_n,
    closed_form_bound,
    deterministic_sensitivity,
    exhaustive_epsilon_s,
    hockey_stick,
    polytope_vertices,
    polytope_vertices_exact,
    suppression_theorem_bounds,
    support_condition_holds,
    tight_dp_of_finite_mechanism,
    verify_bound_forward,
    verify_bound_inverse,
)
from dpomit.suppression import (
    DeterministicSuppression,
    DiscreteMetric,
    MMTransform,
    OutlierScoreSuppression,
    PoissonSampling,
    ScaledEuclidean,
    kernel_of,
    suppress_by_avg_threshold,
    suppress_by_set,
)

B = ValueBounds(0.0, 10.0)


def db(*vals):
    return Database(np.array(vals, dtype=float), B)


def outlier_algo(m, M):
    return OutlierScoreSuppression(MMTransform(m, M, DiscreteMetric()))


class TestSupportCondition:
    def test_poisson_full_support(self):
        d = db(1, 2)
        algo = PoissonSampling(0.5)
        assert support_condition_holds(algo.kernel(d), algo.kernel(d.add(3.0)), (3.0,))

    def test_outlier_kernels(self):
        d = db(1, 2, 2)
        algo = outlier_algo(0.2, 0.7)
        assert support_condition_holds(algo.kernel(d), algo.kernel(d.add(5.0)), (5.0,))

    def test_deterministic_counterexample(self):
        # S(D) = {a} while S(D + y) = {b} with a not in {b, b - y}
        d = db(1, 2)
        y = (3.0,)
        algo_small = DeterministicSuppression(lambda x: x.subset([True, False]))  # {1}
        k_small = algo_small.kernel(d)
        big = d.add(3.0)
        k_big = DeterministicSuppression(lambda x: x.subset([False, True, False])).kernel(big)
        assert not support_condition_holds(k_small, k_big, y)

    def test_base_mismatch(self):
        algo = PoissonSampling(0.5)
        with pytest.raises(ValueError, match="base"):
            support_condition_holds(algo.kernel(db(1)), algo.kernel(db(1, 5)), (4.0,))


class TestKernelBounds:
    def test_poisson_single_record_hand_expansion(self):
        # D = {x}, D' = {x, y}: forward 1/(1-q+q e^-eps), backward 1-q+q e^eps
        for q, eps in [(0.3, 1.0), (0.5, 0.7), (0.9, 2.0)]:
            algo = PoissonSampling(q)
            d = db(1.0)
            bounds = suppression_theorem_bounds(
                algo.kernel(d), algo.kernel(d.add(2.0)), (2.0,), PrivacyParams(eps, 1e-4)
            )
            fwd = -math.log((1 - q) + q * math.exp(-eps))
            bwd = math.log((1 - q) + q * math.exp(eps))
            assert bounds.eps_fwd == pytest.approx(fwd, abs=1e-12)
            assert bounds.eps_bwd == pytest.approx(bwd, abs=1e-12)
            assert bounds.eps_max == pytest.approx(math.log1p(q * math.expm1(eps)), abs=1e-12)
            assert bounds.delta_bwd == pytest.approx(1e-4 * q, abs=1e-18)

    def test_empty_vs_singleton_outlier(self):
        m, M, eps = 0.25, 0.8, 1.3
        algo = outlier_algo(m, M)
        empty = Database.empty(B)
        bounds = suppression_theorem_bounds(
            algo.kernel(empty), algo.kernel(empty.add(4.0)), (4.0,), PrivacyParams(eps, 0.0)
        )
        assert bounds.eps_fwd == pytest.approx(-math.log(m + math.exp(-eps) * (1 - m)), abs=1e-12)
        assert bounds.eps_bwd == pytest.approx(math.log(m + math.exp(eps) * (1 - m)), abs=1e-12)

    def test_outlier_copies_trend_to_branch_limits(self):
        # D = N copies of x with a maximally distant y: the two directions
        # climb toward the branch values l3 and l1(1)
        m, M, eps = 0.3, 0.7, 1.0
        mm = MMParams(m, M)
        algo = outlier_algo(m, M)
        base = PrivacyParams(eps, 0.0)
        fwd, bwd = [], []
        for n in range(1, 11):
            d = db(*([1.0] * n))
            bounds = suppression_theorem_bounds(
                algo.kernel(d), algo.kernel(d.add(9.0)), (9.0,), base
            )
            fwd.append(bounds.eps_fwd)
            bwd.append(bounds.eps_bwd)
            assert bounds.eps_fwd <= l3(eps, mm) + 1e-12
            assert bounds.eps_bwd <= float(l1(1.0, eps, mm)) + 1e-12
        assert all(b >= a - 1e-12 for a, b in zip(fwd, fwd[1:]))
        assert all(b >= a - 1e-12 for a, b in zip(bwd, bwd[1:]))
        # the gaps to the branch limits shrink substantially over N = 1..10
        assert l3(eps, mm) - fwd[-1] < 0.3 * (l3(eps, mm) - fwd[0])
        assert float(l1(1.0, eps, mm)) - bwd[-1] < 0.3 * (float(l1(1.0, eps, mm)) - bwd[0])

    def test_delta_ordering_on_random_outlier_kernels(self):
        rng = np.random.default_rng(12)
        for _ in range(100):
            n = int(rng.integers(1, 6))
            vals = rng.integers(0, 5, n).astype(float)
            m = float(rng.uniform(0.05, 0.6))
            M = float(rng.uniform(m, 0.9))
            eps = float(rng.uniform(0.1, 2.5))
            algo = outlier_algo(m, M)
            d = Database(vals, B)
            y = float(rng.integers(0, 5))
            bounds = suppression_theorem_bounds(
                algo.kernel(d), algo.kernel(d.add(y)), (y,), PrivacyParams(eps, 1e-3)
            )
            assert bounds.delta_fwd <= bounds.delta_bwd + 1e-15
            assert bounds.delta_bwd <= delta_s(1e-3, MMParams(m, M)) + 1e-15


class TestExhaustive:
    def test_poisson_independent_of_family(self):
        q, eps = 0.4, 1.0
        algo = PoissonSampling(q)
        family = [Database.empty(B), db(1), db(2), db(1, 2), db(1, 1)]
        bounds = exhaustive_epsilon_s(algo, family, [(1.0,), (2.0,)], PrivacyParams(eps, 0.0))
        assert bounds.eps_max == pytest.approx(math.log1p(q * math.expm1(eps)), abs=1e-12)

    def test_outlier_below_closed_form(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            m = float(rng.uniform(0.1, 0.5))
            M = float(rng.uniform(m, 0.9))
            eps = float(rng.uniform(0.2, 2.0))
            algo = outlier_algo(m, M)
            family = [db(*rng.integers(0, 4, size=k).astype(float)) for k in range(0, 5)]
            universe = [(float(v),) for v in range(4)]
            family += [f.add(u) for f in family[:3] for u in universe[:2]]
            bounds = exhaustive_epsilon_s(algo, family, universe, PrivacyParams(eps, 0.0))
            assert bounds.eps_max <= epsilon_s(eps, MMParams(m, M)).eps_s + 1e-9

    def test_pair_cap(self):
        algo = PoissonSampling(0.5)
        family = [Database.empty(B), db(1)]
        with pytest.raises(ValueError, match="pair_cap"):
            exhaustive_epsilon_s(algo, family, [(1.0,)], PrivacyParams(1.0, 0.0), pair_cap=0)


class TestTightDP:
    def test_identical_distributions(self):
        tables = {"a": {0: 0.5, 1: 0.5}, "b": {0: 0.5, 1: 0.5}}
        assert tight_dp_of_finite_mechanism(tables, [("a", "b")], 0.0) == 0.0

    def test_randomized_response(self):
        tables = {"a": {0: 0.75, 1: 0.25}, "b": {0: 0.25, 1: 0.75}}
        eps = tight_dp_of_finite_mechanism(tables, [("a", "b")], 0.0)
        assert eps == pytest.approx(math.log(3.0), abs=1e-10)

    def test_monotone_in_delta(self):
        tables = {"a": {0: 0.7, 1: 0.3}, "b": {0: 0.4, 1: 0.6}}
        eps_values = [
            tight_dp_of_finite_mechanism(tables, [("a", "b")], d) for d in (0.0, 0.05, 0.1, 0.2)
        ]
        assert all(b <= a + 1e-12 for a, b in zip(eps_values, eps_values[1:]))

    def test_disjoint_supports_need_infinite_eps(self):
        tables = {"a": {0: 1.0}, "b": {1: 1.0}}
        assert tight_dp_of_finite_mechanism(tables, [("a", "b")], 0.5) == math.inf
        assert tight_dp_of_finite_mechanism(tables, [("a", "b")], 1.0) == 0.0

    def test_unnormalized_rejected(self):
        with pytest.raises(ValueError, match="normalized"):
            tight_dp_of_finite_mechanism({"a": {0: 0.5}, "b": {0: 1.0}}, [("a", "b")], 0.0)

    def test_hockey_stick_values(self):
        p = {0: 0.75, 1: 0.25}
        q = {0: 0.25, 1: 0.75}
        assert hockey_stick(p, q, 0.0) == pytest.approx(0.5)
        assert hockey_stick(p, q, math.log(3.0)) == pytest.approx(0.0, abs=1e-15)


class TestDeterministicSensitivity:
    @staticmethod
    def _subset_class(universe):
        members = []
        for mask in range(1 << len(universe)):
            vals = [universe[i] for i in range(len(universe)) if mask >> i & 1]
            members.append(Database(np.array(vals, dtype=float), B))
        pairs = [
            (a, b)
            for a in members
            for b in members
            if len(b) == len(a) + 1
            and sum(1 for r in b.records() if r not in a.records()) >= 0
            and _symdiff(a, b) == 1
        ]
        return members, pairs

    def test_database_independent_set_suppression(self):
        members, pairs = self._subset_class([0.0, 1.0, 2.0, 3.0])
        algo = lambda d: suppress_by_set(d, lambda r: r[0] <= 1.5)
        res = deterministic_sensitivity(algo, members, pairs)
        assert not res.infinite and res.value == 1

    def test_identity_suppression(self):
        members, pairs = self._subset_class([0.0, 1.0, 2.0])
        res = deterministic_sensitivity(lambda d: d, members, pairs)
        assert res.value == 1

    def test_avg_threshold_family_grows(self):
        # the two-value family: the image distance equals the number of
        # suppressed copies and grows linearly with n (diverging sensitivity)
        K, N = 0.5, 2
        dist = DiscreteMetric()
        algo = lambda d: suppress_by_avg_threshold(d, K, dist)
        deltas = []
        for n in (1, 2, 3):
            d_n = db(*([0.0] * (n * N // 2) + [1.0] * (n * N // 2)))
            nb = d_n.remove_one(1.0)
            members = _submultiset_class(d_n)
            res = deterministic_sensitivity(algo, members, [(d_n, nb)])
            assert not res.infinite
            deltas.append(res.value)
        assert deltas == sorted(deltas) and len(set(deltas)) == 3

    def test_image_outside_class(self):
        members, pairs = self._subset_class([0.0, 1.0])
        algo = lambda d: d.add(5.0)
        with pytest.raises(ValueError, match="outside"):
            deterministic_sensitivity(algo, members, pairs)

    def test_unreachable_reports_infinite_flag(self):
        # a two-component class: images land in different components
        members = [db(), db(1.0), db(5.0, 5.0)]
        algo = lambda d: db(5.0, 5.0) if len(d) == 1 else Database.empty(B)
        res = deterministic_sensitivity(algo, members, [(db(), db(1.0))])
        assert res.infinite and res.value is None and res.witness is not None


def _symdiff(a, b):
    from dpomit.core import symmetric_difference_size

    return symmetric_difference_size(a, b)


def _submultiset_class(d):
    from dpomit.suppression import enumerate_submultisets

    return [Database(np.array([r[0] for r in key], dtype=float), d.bounds)
            for key in enumerate_submultisets(d)]


class TestPolytope:
    def test_full_subset_gives_floor_vertex(self):
        mm = MMParams(0.2, 0.8)
        verts = polytope_vertices([0.3, 0.5, 0.7, 0.4], mm)
        assert any(np.allclose(v, 0.2) for v in verts)

    def test_empty_subset_gives_caps(self):
        mm = MMParams(0.2, 0.8)
        a = np.array([0.3, 0.5, 0.7, 0.4])
        n = a.size
        caps = np.minimum(mm.m + (n - 1) * mm.M, (n - 2) * (a - mm.m) + a.sum()) / n
        verts = polytope_vertices(a, mm)
        assert any(np.allclose(v, caps) for v in verts)

    def test_small_n_cases(self):
        mm = MMParams(0.3, 0.6)
        assert np.allclose(polytope_vertices([0.5], mm), [[0.3]])
        v2 = polytope_vertices([0.4, 0.5], mm)
        assert np.allclose(v2[0], [0.3, 0.3])
        cap = min(0.3 + 0.6, 0.9) / 2
        assert np.allclose(v2[1], [cap, cap])

    @pytest.mark.parametrize("n", [3, 4, 5])
    def test_vertex_feasibility_exact(self, n):
        # rational arithmetic: every vertex satisfies the box and every
        # half-space constraint exactly
        m, M = Fraction(1, 5), Fraction(4, 5)
        rng = np.random.default_rng(n)
        a = [m + (M - m) * Fraction(int(x), 100) for x in rng.integers(0, 101, n)]
        caps = [
            min(m + (n - 1) * M, (n - 2) * (ai - m) + sum(a)) / n for ai in a
        ]
        for z in polytope_vertices_exact(a, m, M):
            total = sum(z)
            for i in range(n):
                assert m <= z[i] <= caps[i]
                assert total <= (2 * n - 2) * z[i] - (n - 2) * m


class TestVerification:
    def test_forward_pass_at_reference_point(self):
        r = verify_bound_forward(1.0, MMParams(0.3, 0.6))
        assert r.status == "pass" and r.within_tolerance
        assert r.numeric_max <= r.closed_form + 2e-7
        assert r.evaluations > 0

    def test_forward_degenerate_diagonal(self):
        r = verify_bound_forward(0.7, MMParams(0.4, 0.4))
        expect = math.log(math.exp(0.7) - (math.exp(0.7) - 1) * 0.4)
        assert r.closed_form == pytest.approx(expect, abs=1e-9)
        assert abs(r.gap) < 1e-9

    def test_inverse_pass_and_superfluous(self):
        r = verify_bound_inverse(1.0, MMParams(0.3, 0.6))
        assert r.status == "pass" and r.within_tolerance and r.superfluous_ok

    def test_inverse_degenerate_diagonal(self):
        mm = MMParams(0.5, 0.5)
        r = verify_bound_inverse(1.2, mm)
        assert r.closed_form == pytest.approx(l3(1.2, mm), abs=1e-12)
        assert abs(r.gap) < 1e-9

    def test_small_n_brute_force_below_closed_form(self):
        for eps, m, M in [(1.0, 0.3, 0.6), (0.5, 0.2, 0.8), (0.0, 0.4, 0.7)]:
            mm = MMParams(m, M)
            assert brute_force_forward_small_n(eps, mm, n_max=5, grid=4) <= (
                closed_form_bound(eps, mm) + 1e-12
            )

    def test_verification_seed_reproducible(self):
        mm = MMParams(0.2, 0.5)
        a = verify_bound_forward(0.5, mm, rng=RandomStream(5))
        b = verify_bound_forward(0.5, mm, rng=RandomStream(5))
        assert a == b


class TestOracleVsClosedForm:
    def test_composed_kernel_bounds_dominate_tight_mechanism(self):
        # hockey-stick tight eps of a composed finite system never exceeds the
        # kernel bounds (bound soundness)
        rng = np.random.default_rng(9)
        for _ in range(10):
            q = float(rng.uniform(0.2, 0.8))
            eps = float(rng.uniform(0.3, 1.5))
            delta = 0.0
            algo = PoissonSampling(q)
            d = db(1.0)
            big = d.add(2.0)
            kd, kdp = algo.kernel(d), algo.kernel(big)
            bounds = suppression_theorem_bounds(kd, kdp, (2.0,), PrivacyParams(eps, delta))
            # the two-output worst-case mechanism distinguishes on y's presence
            alpha = math.exp(eps) / (1 + math.exp(eps))
            p_small = {0: 1 - alpha, 1: alpha}
            p_big = {
                0: (1 - alpha) * (1 - q) + alpha * q,
                1: alpha * (1 - q) + (1 - alpha) * q,
            }
            tight = tight_dp_of_finite_mechanism({"d": p_small, "dp": p_big}, [("d", "dp")], 0.0)
            assert tight <= bounds.eps_max + 1e-9
