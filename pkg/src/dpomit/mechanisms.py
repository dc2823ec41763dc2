"""The DP mechanisms under test: noise primitives, NoisyAverage, report-noisy-max
and exponential-mechanism selection, mode computation, and the two clustering
mechanisms (noisy-centroid Lloyd iterations and exponential-mechanism local
search for k-median)."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
from scipy import special

from .core import Database, PrivacyParams, as_generator

LAPLACE = "laplace"
GAUSSIAN = "gaussian"
EXPONENTIAL = "exponential"
EXP_MECH = "exp_mech"

NoiseKind = Literal["laplace", "gaussian", "exponential"]
ModeVariant = Literal["laplace", "gaussian", "exponential", "exp_mech"]


def split_budget(params: PrivacyParams, shares: Sequence[float]) -> list[PrivacyParams]:
    """Sequential-composition split; asserts the shares reassemble the input."""
    shares = list(shares)
    if any(s < 0 for s in shares):
        raise ValueError("budget shares must be nonnegative")
    total = sum(shares)
    if abs(total - 1.0) > 1e-9:
        raise AssertionError(f"budget shares sum to {total}, not 1")
    parts = [PrivacyParams(params.epsilon * s, params.delta * s) for s in shares]
    assert abs(sum(p.epsilon for p in parts) - params.epsilon) <= 1e-9 * max(params.epsilon, 1.0)
    assert abs(sum(p.delta for p in parts) - params.delta) <= 1e-12
    return parts


# --- noise primitives -----------------------------------------------------------


def _laplace_from_uniform(u: np.ndarray, scale: float) -> np.ndarray:
    # inverse-CDF transform so that draws at scale b equal b times draws at
    # scale 1 from the same stream
    half = u - 0.5
    arg = np.maximum(1.0 - 2.0 * np.abs(half), 1e-300)
    return -scale * np.sign(half) * np.log(arg)


def laplace_draw(scale: float, rng) -> float:
    """One Laplace(0, scale) variate via inverse-CDF sampling."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    gen = as_generator(rng)
    return float(_laplace_from_uniform(np.array([gen.random()]), scale)[0])


def laplace_draws(scale: float, size: int, rng) -> np.ndarray:
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    gen = as_generator(rng)
    return _laplace_from_uniform(gen.random(size), scale)


def exponential_draws(scale: float, size: int, rng) -> np.ndarray:
    """Exponential variates with the given mean (inverse-CDF sampling)."""
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    gen = as_generator(rng)
    return -scale * np.log1p(-gen.random(size))


def _norm_cdf(x: float) -> float:
    # erfc-based; no cancellation in the deep lower tail
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def gaussian_profile_delta(epsilon: float, sigma: float, sensitivity: float) -> float:
    """delta(epsilon) of Gaussian noise sigma on an L2-sensitivity-Delta query.

    The exact profile Phi(D/(2 sigma) - eps sigma/D) - e^eps Phi(-D/(2 sigma) -
    eps sigma/D); the Gaussian mechanism is (eps, delta)-DP iff delta is at
    least this value.  The second term is assembled in log space so very large
    epsilon cannot overflow.
    """
    if sigma <= 0 or sensitivity <= 0:
        raise ValueError("sigma and sensitivity must be positive")
    a = sensitivity / (2.0 * sigma)
    b = epsilon * sigma / sensitivity
    log_tail = epsilon + float(special.log_ndtr(-a - b))
    return _norm_cdf(a - b) - (math.exp(log_tail) if log_tail > -745.0 else 0.0)


def analytic_gaussian_sigma(epsilon: float, delta: float, sensitivity: float) -> float:
    """Smallest sigma making the Gaussian mechanism (eps, delta)-DP.

    Root-finds the exact Gaussian privacy profile, so it stays valid for
    eps >= 1 where the classical calibration formula does not apply.  Returns
    0 for a zero-sensitivity query.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta}")
    if sensitivity < 0:
        raise ValueError(f"sensitivity must be >= 0, got {sensitivity}")
    if sensitivity == 0:
        return 0.0
    hi = sensitivity
    while gaussian_profile_delta(epsilon, hi, sensitivity) > delta:
        hi *= 2.0
    lo = hi / 2.0
    while gaussian_profile_delta(epsilon, lo, sensitivity) <= delta:
        lo /= 2.0
        if lo < 1e-200:
            break
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if gaussian_profile_delta(epsilon, mid, sensitivity) <= delta:
            hi = mid
        else:
            lo = mid
    return hi


# --- statistic mechanisms -------------------------------------------------------


def sum_sensitivity(bounds) -> float:
    """Unbounded-neighbor sensitivity of a bounded sum: one in-range record
    moves it by at most max(|lower|, |upper|)."""
    return max(abs(bounds.lower), abs(bounds.upper))


def noisy_average(
    d: Database, params: PrivacyParams, noise: NoiseKind, rng
) -> float:
    """Noisy sum divided by noisy count on a 1-dimensional database.

    Two independent halves of the budget protect the sum (sensitivity
    max(|lower|, |upper|): an unbounded neighbor adds or removes one in-range
    value) and the count (sensitivity 1).  A nonpositive noisy count is
    clamped to 1 before the division so the output stays finite; clamping is
    post-processing and costs no budget.
    """
    gen = as_generator(rng)
    col = d.column() if len(d) else np.zeros(0)
    sum_sens = sum_sensitivity(d.bounds[0])
    true_sum = float(col.sum())
    true_cnt = float(len(d))
    if noise == LAPLACE:
        half_eps = split_budget(params, [0.5, 0.5])[0].epsilon
        noisy_sum = true_sum + laplace_draw(sum_sens / half_eps, gen)
        noisy_cnt = true_cnt + laplace_draw(1.0 / half_eps, gen)
    elif noise == GAUSSIAN:
        half = split_budget(params, [0.5, 0.5])[0]
        sig_sum = analytic_gaussian_sigma(half.epsilon, half.delta, sum_sens)
        sig_cnt = analytic_gaussian_sigma(half.epsilon, half.delta, 1.0)
        noisy_sum = true_sum + gen.normal(0.0, sig_sum)
        noisy_cnt = true_cnt + gen.normal(0.0, sig_cnt)
    else:
        raise ValueError(f"noisy_average supports laplace or gaussian noise, got {noise!r}")
    if noisy_cnt <= 0.0:
        noisy_cnt = 1.0
    return noisy_sum / noisy_cnt


def report_noisy_max(
    counts: Sequence[float],
    sensitivities: Sequence[float],
    params: PrivacyParams,
    noise: NoiseKind,
    rng,
) -> int:
    """Index of the largest count after per-coordinate noising.

    The queries are assumed to act over disjoint record support (histogram
    bins), so each coordinate receives noise calibrated to the full budget:
    Laplace(sens_i / eps), Exponential with mean 2 sens_i / eps, or analytic
    Gaussian noise at (eps, delta).  Ties break to the lowest index.
    """
    counts = np.asarray(counts, dtype=float)
    sens = np.broadcast_to(np.asarray(sensitivities, dtype=float), counts.shape)
    if counts.size == 0:
        raise ValueError("counts must be nonempty")
    if np.any(sens <= 0.0):
        raise ValueError("all sensitivities must be positive")
    gen = as_generator(rng)
    eps = params.epsilon
    if noise == LAPLACE:
        z = _laplace_from_uniform(gen.random(counts.size), 1.0) * (sens / eps)
    elif noise == EXPONENTIAL:
        z = -np.log1p(-gen.random(counts.size)) * (2.0 * sens / eps)
    elif noise == GAUSSIAN:
        sigmas = np.array(
            [analytic_gaussian_sigma(eps, params.delta, float(s)) for s in np.unique(sens)]
        )
        lookup = {float(s): sig for s, sig in zip(np.unique(sens), sigmas)}
        z = gen.standard_normal(counts.size) * np.array([lookup[float(s)] for s in sens])
    else:
        raise ValueError(f"unknown noise kind {noise!r}")
    return int(np.argmax(counts + z))


def exponential_mechanism(
    items: Sequence, scores: Sequence[float], score_sensitivity: float, epsilon: float, rng
):
    """Sample an item with probability proportional to exp(eps * score / (2 * sens)).

    Weights are formed in log space with max-subtraction, so callers can (and
    should) pass scores shifted to be nonpositive without changing the
    distribution.  eps = 0 degenerates to the uniform distribution.
    """
    items = list(items)
    if not items:
        raise ValueError("item list must be nonempty")
    if score_sensitivity <= 0:
        raise ValueError("score sensitivity must be positive")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (len(items),):
        raise ValueError("need one score per item")
    gen = as_generator(rng)
    logits = epsilon * scores / (2.0 * score_sensitivity)
    logits = logits - logits.max()
    weights = np.exp(logits)
    probs = weights / weights.sum()
    idx = int(np.searchsorted(np.cumsum(probs), gen.random(), side="right"))
    return items[min(idx, len(items) - 1)]


def mode_universe(d: Database) -> np.ndarray:
    """Every integer value inside the bounds of a 1-dimensional database."""
    b = d.bounds[0]
    lo, hi = math.ceil(b.lower), math.floor(b.upper)
    if lo != b.lower or hi != b.upper:
        raise ValueError(f"mode needs integral bounds, got [{b.lower}, {b.upper}]")
    if hi < lo:
        raise ValueError("empty integer universe")
    return np.arange(lo, hi + 1)


def integer_counts(d: Database) -> np.ndarray:
    """Histogram of a 1-dimensional integer database over its full universe."""
    universe = mode_universe(d)
    col = d.column().astype(int) if len(d) else np.zeros(0, dtype=int)
    if len(d) and np.any(col != d.column()):
        raise ValueError("records must be integer-valued")
    return np.bincount(col - universe[0], minlength=universe.size).astype(float)


def compute_mode(d: Database, variant: ModeVariant, params: PrivacyParams, rng) -> int:
    """Perturbed mode over the full integer universe of the bounds.

    Counts are built for every integer value inside the bounds, not only the
    observed ones, then a selection mechanism picks the arg max: report noisy
    max for the noise variants (count sensitivity 1 per bin), or the
    exponential mechanism with score = count minus the maximum count (the
    shift keeps scores nonpositive and cancels in the sampled distribution).
    """
    universe = mode_universe(d)
    counts = integer_counts(d)
    if variant == EXP_MECH:
        value = exponential_mechanism(universe, counts - counts.max(), 1.0, params.epsilon, rng)
        return int(value)
    idx = report_noisy_max(counts, np.ones_like(counts), params, variant, rng)
    return int(universe[idx])


# --- clustering -----------------------------------------------------------------


@dataclass(frozen=True)
class ClusteringResult:
    """k centers plus the nearest-center assignment of every record (ties to the
    lowest center index)."""

    centers: np.ndarray  # (k, d)
    assignment: np.ndarray  # (n,), indices into centers


def _nearest(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def dp_lloyd(
    d: Database,
    k: int,
    params: PrivacyParams,
    iterations: int = 5,
    rng=None,
    initial_centers: Optional[np.ndarray] = None,
) -> ClusteringResult:
    """Lloyd iterations with noisy per-cluster centroids on [-1, 1]^dim data.

    Each iteration spends an equal eps share, split half on the per-cluster
    coordinate sums (L1 sensitivity dim) and half on the counts (sensitivity
    1); clusters have disjoint record support, so the same budget covers every
    cluster in parallel.  Initial centers are uniform on [-1, 1]^dim unless
    given; a cluster left empty keeps its previous center, and noisy counts
    are clamped to 1 before dividing.
    """
    if k < 1 or iterations < 1:
        raise ValueError("k and iterations must be >= 1")
    if len(d) and k > len(d):
        raise ValueError(f"k={k} exceeds database size {len(d)}")
    gen = as_generator(rng)
    pts = d.values
    dim = d.dim
    if len(d) and (pts.min() < -1.0 - 1e-9 or pts.max() > 1.0 + 1e-9):
        raise ValueError("records must be normalized to [-1, 1] per coordinate")
    if initial_centers is not None:
        centers = np.array(initial_centers, dtype=float)
        if centers.shape != (k, dim):
            raise ValueError(f"initial centers must have shape ({k}, {dim})")
    else:
        centers = gen.uniform(-1.0, 1.0, size=(k, dim))
    eps_iter = params.epsilon / iterations
    sum_scale = dim / (eps_iter / 2.0)
    cnt_scale = 1.0 / (eps_iter / 2.0)
    assignment = np.zeros(len(d), dtype=int)
    for _ in range(iterations):
        if len(d):
            assignment = _nearest(pts, centers)
        new_centers = centers.copy()
        for j in range(k):
            member = assignment == j if len(d) else np.zeros(0, dtype=bool)
            if len(d) == 0 or not member.any():
                continue  # empty cluster keeps its previous center
            noisy_sum = pts[member].sum(axis=0) + laplace_draws(sum_scale, dim, gen)
            noisy_cnt = member.sum() + laplace_draw(cnt_scale, gen)
            if noisy_cnt <= 0.0:
                noisy_cnt = 1.0
            new_centers[j] = np.clip(noisy_sum / noisy_cnt, -1.0, 1.0)
        centers = new_centers
    if len(d):
        assignment = _nearest(pts, centers)
    return ClusteringResult(centers=centers, assignment=assignment)


def dp_kmedian(
    d: Database,
    candidate_centers: np.ndarray,
    k: int,
    params: PrivacyParams,
    iterations: int = 10,
    rng=None,
    score_sensitivity: float = 1.0,
) -> ClusteringResult:
    """Local-search k-median over a finite candidate set.

    Starts from a uniform k-subset of the candidates; each iteration proposes
    one (median, candidate) swap through the exponential mechanism with score
    equal to minus the total assignment cost after the swap.  The k identity
    swaps are included so the chain can hold a good configuration (with few
    candidates a forced swap would just oscillate).  Data are assumed
    normalized so one record moves the cost by at most `score_sensitivity`.
    The budget is split equally across iterations.
    """
    cand = np.asarray(candidate_centers, dtype=float)
    if cand.ndim != 2:
        raise ValueError("candidate centers must be an (n, d) array")
    if k < 1 or k > len(cand):
        raise ValueError(f"k={k} must be in [1, {len(cand)}]")
    gen = as_generator(rng)
    pts = d.values
    eps_iter = params.epsilon / iterations
    current = list(gen.choice(len(cand), size=k, replace=False))
    dist = np.sqrt(((pts[:, None, :] - cand[None, :, :]) ** 2).sum(axis=2)) if len(d) else None
    for _ in range(iterations):
        outside = [c for c in range(len(cand)) if c not in set(current)]
        if not outside:
            break
        swaps = [(i, c) for i in range(k) for c in outside]
        swaps += [(i, current[i]) for i in range(k)]  # staying put is a choice
        if dist is None:
            scores = np.zeros(len(swaps))
        else:
            med = dist[:, current]  # (n, k)
            scores = np.empty(len(swaps))
            pos = 0
            current_cost = med.min(axis=1).sum()
            for i in range(k):
                others = np.delete(med, i, axis=1)
                base = others.min(axis=1) if others.size else np.full(len(pts), np.inf)
                cost_after = np.minimum(base[:, None], dist[:, outside]).sum(axis=0)
                scores[pos : pos + len(outside)] = -cost_after
                pos += len(outside)
            scores[pos:] = -current_cost
        scores = scores - scores.max()
        i, c = exponential_mechanism(swaps, scores, score_sensitivity, eps_iter, gen)
        current[i] = c
    centers = cand[current]
    assignment = _nearest(pts, centers) if len(d) else np.zeros(0, dtype=int)
    return ClusteringResult(centers=centers, assignment=assignment)
