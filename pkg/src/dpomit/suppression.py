"""Sampling and suppression preprocessing: distances, score transforms, the
suppression algorithms themselves, and exact subset-distribution kernels for
the oracle."""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .core import Database, Record, RandomStream, as_generator

MAX_KERNEL_RECORDS = 20


# --- normalized distances ------------------------------------------------------


class Distance:
    """A normalized metric on records: values in [0, 1], zero exactly on equality."""

    def __call__(self, x: Record, y: Record) -> float:
        raise NotImplementedError

    def pairwise(self, values: np.ndarray) -> np.ndarray:
        """(n, n) matrix of distances between the rows of `values`."""
        n = len(values)
        out = np.zeros((n, n))
        recs = [tuple(r) for r in values]
        for i in range(n):
            for j in range(i + 1, n):
                out[i, j] = out[j, i] = self(recs[i], recs[j])
        return out

    def mean_distances(self, values: np.ndarray) -> np.ndarray:
        """Per-row mean distance to all rows (the row itself included)."""
        if len(values) == 0:
            return np.zeros(0)
        return self.pairwise(values).mean(axis=1)


class AbsoluteDifference(Distance):
    """|x - y| scaled by the column width (1-dimensional records)."""

    def __init__(self, width: float):
        if width <= 0:
            raise ValueError("width must be positive")
        self.width = float(width)

    def __call__(self, x, y):
        return abs(float(np.atleast_1d(x)[0]) - float(np.atleast_1d(y)[0])) / self.width

    def mean_distances(self, values: np.ndarray) -> np.ndarray:
        v = np.asarray(values, dtype=float).reshape(-1)
        n = v.size
        if n == 0:
            return np.zeros(0)
        order = np.argsort(v, kind="stable")
        s = v[order]
        prefix = np.concatenate([[0.0], np.cumsum(s)])
        idx = np.arange(n)
        # sum over y of |s_i - y| via prefix sums on the sorted column
        sums = s * idx - prefix[idx] + (prefix[n] - prefix[idx + 1]) - s * (n - 1 - idx)
        out = np.empty(n)
        out[order] = sums / (n * self.width)
        return out


class DiscreteMetric(Distance):
    """0 on equal records, 1 otherwise."""

    def __call__(self, x, y):
        return 0.0 if tuple(np.atleast_1d(x)) == tuple(np.atleast_1d(y)) else 1.0

    def mean_distances(self, values: np.ndarray) -> np.ndarray:
        n = len(values)
        if n == 0:
            return np.zeros(0)
        counts = Counter(tuple(r) for r in values)
        return np.array([1.0 - counts[tuple(r)] / n for r in values])


class ScaledEuclidean(Distance):
    """L2 distance scaled by the diameter of the bounding box."""

    def __init__(self, diameter: float):
        if diameter <= 0:
            raise ValueError("diameter must be positive")
        self.diameter = float(diameter)

    @classmethod
    def for_bounds(cls, bounds) -> "ScaledEuclidean":
        return cls(math.sqrt(sum(b.width**2 for b in bounds)))

    def __call__(self, x, y):
        dx = np.atleast_1d(np.asarray(x, dtype=float)) - np.atleast_1d(np.asarray(y, dtype=float))
        return float(np.linalg.norm(dx)) / self.diameter

    def mean_distances(self, values: np.ndarray) -> np.ndarray:
        arr = np.asarray(values, dtype=float)
        n = len(arr)
        if n == 0:
            return np.zeros(0)
        out = np.zeros(n)
        chunk = max(1, int(2e7) // max(n, 1))
        for start in range(0, n, chunk):
            block = arr[start : start + chunk]
            d = np.sqrt(((block[:, None, :] - arr[None, :, :]) ** 2).sum(axis=2))
            out[start : start + chunk] = d.sum(axis=1)
        return out / (n * self.diameter)


class CallableDistance(Distance):
    """Wrap an arbitrary symmetric callable as a Distance."""

    def __init__(self, fn: Callable[[Record, Record], float]):
        self.fn = fn

    def __call__(self, x, y):
        return float(self.fn(tuple(np.atleast_1d(x)), tuple(np.atleast_1d(y))))


@dataclass(frozen=True)
class MMTransform:
    """Affine rescaling of a normalized distance into [m, M].

    t(x, y) = m + (M - m) d(x, y); equals m exactly on equal records, keeps
    symmetry, and satisfies the shifted triangle inequality
    t(x, y) <= t(x, z) + t(z, y) - m.
    """

    m: float
    M: float
    base: Distance

    def __post_init__(self) -> None:
        if not (0.0 < self.m < 1.0 and 0.0 < self.M < 1.0):
            raise ValueError(f"m, M must lie in (0, 1), got ({self.m}, {self.M})")
        if self.m > self.M:
            raise ValueError(f"need m <= M, got ({self.m}, {self.M})")

    def __call__(self, x, y) -> float:
        return self.m + (self.M - self.m) * self.base(x, y)


# --- suppression algorithms ----------------------------------------------------


def poisson_sample(d: Database, keep_prob: float, rng) -> Database:
    """Keep each record occurrence independently with probability `keep_prob`."""
    if not 0.0 <= keep_prob <= 1.0:
        raise ValueError(f"keep probability must be in [0, 1], got {keep_prob}")
    gen = as_generator(rng)
    return d.subset(gen.random(len(d)) < keep_prob)


def outlier_scores(d: Database, t: MMTransform) -> np.ndarray:
    """Deletion probability of every record occurrence, aligned with d.values.

    out(x) = mean over all y in D (x itself included, contributing m) of
    t(x, y); always lands in [m, M].
    """
    if len(d) == 0:
        raise ValueError("outlier scores are undefined on an empty database")
    return t.m + (t.M - t.m) * t.base.mean_distances(d.values)


def outlier_score_suppress(d: Database, t: MMTransform, rng) -> Database:
    """Delete each record occurrence independently with its outlier score."""
    if len(d) == 0:
        return d
    gen = as_generator(rng)
    scores = outlier_scores(d, t)
    return d.subset(gen.random(len(d)) >= scores)


def suppress_by_set(d: Database, keep: Callable[[Record], bool]) -> Database:
    """Deterministic, database-independent suppression: D intersect A."""
    if len(d) == 0:
        return d
    return d.subset(np.array([bool(keep(rec)) for rec in d.records()]))


def suppress_by_avg_threshold(d: Database, K: float, dist: Distance) -> Database:
    """Keep records whose average distance to the whole database is <= K."""
    if not 0.0 < K < 1.0:
        raise ValueError(f"K must be in (0, 1), got {K}")
    if len(d) == 0:
        return d
    return d.subset(dist.mean_distances(d.values) <= K)


def suppress_top_fraction(d: Database, P: float, dist: Distance) -> Database:
    """Delete the floor(P * |D|) records with the highest average distance.

    Ties with the cutoff element are all deleted, so the output can lose more
    than floor(P * |D|) records (and can be empty).
    """
    if not 0.0 < P <= 0.5:
        raise ValueError(f"P must be in (0, 0.5], got {P}")
    n = len(d)
    top = int(P * n)
    if top == 0:
        return d
    avg = dist.mean_distances(d.values)
    cutoff = np.sort(avg)[::-1][top - 1]
    return d.subset(avg < cutoff)


class PoissonSampling:
    """Uniform independent retention; the m = M diagonal of score suppression."""

    def __init__(self, keep_prob: float):
        if not 0.0 <= keep_prob <= 1.0:
            raise ValueError(f"keep probability must be in [0, 1], got {keep_prob}")
        self.keep_prob = float(keep_prob)

    def deletion_probs(self, d: Database) -> np.ndarray:
        return np.full(len(d), 1.0 - self.keep_prob)

    def apply(self, d: Database, rng) -> Database:
        return poisson_sample(d, self.keep_prob, rng)

    def kernel(self, d: Database) -> "SuppressionKernel":
        return _bernoulli_product_kernel(d, self.deletion_probs(d))


class OutlierScoreSuppression:
    """Independent per-record deletion with probability equal to the outlier score."""

    def __init__(self, transform: MMTransform):
        self.transform = transform

    def deletion_probs(self, d: Database) -> np.ndarray:
        return outlier_scores(d, self.transform)

    def apply(self, d: Database, rng) -> Database:
        return outlier_score_suppress(d, self.transform, rng)

    def kernel(self, d: Database) -> "SuppressionKernel":
        if len(d) == 0:
            return SuppressionKernel(d, {(): 1.0})
        return _bernoulli_product_kernel(d, self.deletion_probs(d))


class DeterministicSuppression:
    """Adapter putting a deterministic map D -> subset of D behind the common API."""

    def __init__(self, fn: Callable[[Database], Database]):
        self.fn = fn

    def apply(self, d: Database, rng=None) -> Database:
        return self.fn(d)

    def kernel(self, d: Database) -> "SuppressionKernel":
        out = self.fn(d)
        _check_kernel_size(d)
        return SuppressionKernel(d, {out.multiset_key(): 1.0})


def _check_kernel_size(d: Database) -> None:
    if len(d) > MAX_KERNEL_RECORDS:
        raise ValueError(
            f"explicit kernels are limited to {MAX_KERNEL_RECORDS} records, got {len(d)}"
        )


class SuppressionKernel:
    """Exact distribution of S(D) over the sub-multisets of a small database.

    Probabilities are keyed by canonical multiset keys, are nonnegative, and
    sum to 1 to within 1e-12.
    """

    __slots__ = ("base", "probs")

    def __init__(self, base: Database, probs: Mapping[tuple, float]):
        _check_kernel_size(base)
        total = 0.0
        base_count = Counter(base.records())
        for key, p in probs.items():
            if p < 0.0:
                raise ValueError(f"negative probability {p} for subset {key}")
            sub = Counter(key)
            if any(sub[r] > base_count[r] for r in sub):
                raise ValueError(f"subset {key} is not a sub-multiset of the base")
            total += p
        if abs(total - 1.0) > 1e-12:
            raise ValueError(f"kernel probabilities sum to {total}, expected 1")
        self.base = base
        self.probs = dict(probs)

    def prob(self, key: tuple) -> float:
        return self.probs.get(key, 0.0)

    def support(self) -> set[tuple]:
        return {k for k, p in self.probs.items() if p > 0.0}


def _bernoulli_product_kernel(d: Database, deletion_probs: np.ndarray) -> SuppressionKernel:
    """Kernel of independent per-occurrence deletion.

    Occurrences are treated as distinguishable and the resulting subset
    probabilities aggregated per sub-multiset, which matches the product
    formula while keeping supports small under duplicates.
    """
    _check_kernel_size(d)
    n = len(d)
    records = d.records()
    q = np.asarray(deletion_probs, dtype=float)
    keep = 1.0 - q
    probs: dict[tuple, float] = {}
    for mask in range(1 << n):
        p = 1.0
        kept = []
        for i in range(n):
            if mask >> i & 1:
                p *= keep[i]
                kept.append(records[i])
            else:
                p *= q[i]
        key = tuple(sorted(kept))
        probs[key] = probs.get(key, 0.0) + p
    return SuppressionKernel(d, probs)


def kernel_of(algorithm, d: Database) -> SuppressionKernel:
    """Materialize the exact subset distribution of `algorithm` on `d`."""
    _check_kernel_size(d)
    return algorithm.kernel(d)


def enumerate_submultisets(d: Database) -> list[tuple]:
    """Canonical keys of every sub-multiset of `d`."""
    counts = Counter(d.records())
    items = sorted(counts.items())
    choices = [range(c + 1) for _, c in items]
    keys = []
    for combo in itertools.product(*choices):
        key = []
        for (rec, _), k in zip(items, combo):
            key.extend([rec] * k)
        keys.append(tuple(key))
    return keys
