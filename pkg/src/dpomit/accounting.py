"""Closed-form privacy-parameter transformations.

Covers Poisson-sampling amplification and its exact inverse, the group-style
bound for deterministic suppression, and the score-based suppression bound
eps_s/delta_s together with the cubic closed forms of its inner maximizers and
the inverse calibration used by the experiment harness.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import PrivacyParams

__all__ = [
    "InfeasibleError",
    "MMParams",
    "BoundReport",
    "amplify_poisson",
    "calibrate_sampling",
    "group_bound_deterministic",
    "l1",
    "l2",
    "l3",
    "maximizer_p",
    "epsilon_s",
    "delta_s",
    "calibrate_suppression",
    "poisson_floor",
]

#: ceiling of the numerically verified range for the suppression bound
VERIFIED_EPS_MAX = 100.0
VERIFIED_MM_RANGE = (0.01, 0.99)

BRANCH_L1 = "L1"
BRANCH_L2 = "L2"
BRANCH_L3 = "L3"


class InfeasibleError(ValueError):
    """Raised when a calibration target cannot be met by any finite budget."""


@dataclass(frozen=True)
class MMParams:
    """Deletion-probability range (m, M) of a score-based suppression algorithm.

    m is the deletion probability of a record identical to the whole database,
    M the probability of a maximally distant one; m = M is uniform sampling
    with keep probability 1 - m.
    """

    m: float
    M: float

    def __post_init__(self) -> None:
        if not (0.0 < self.m < 1.0 and 0.0 < self.M < 1.0):
            raise ValueError(f"m, M must lie in (0, 1), got ({self.m}, {self.M})")
        if self.m > self.M:
            raise ValueError(f"need m <= M, got ({self.m}, {self.M})")


@dataclass(frozen=True)
class BoundReport:
    """Result of the suppression bound: value plus the argument that achieved it.

    `argmax_p` is None when the binding branch is L3 (the empty-vs-singleton
    limit), which has no inner maximization variable.  `outside_verified_range`
    flags inputs beyond the numerically checked region; the value is still
    computed (the bound is conjectured to extend by continuity) but should be
    treated as unverified.
    """

    eps_s: float
    argmax_p: Optional[float]
    active_branch: str
    delta_s: Optional[float] = None
    outside_verified_range: bool = False


def amplify_poisson(pp: PrivacyParams, keep_prob: float) -> PrivacyParams:
    """Tight parameters of an (eps, delta)-DP mechanism behind Poisson sampling.

    Keeping each record independently with probability p turns (eps, delta)
    into (ln(1 + p(e^eps - 1)), delta * p), which never exceeds the input in
    either coordinate.
    """
    if not 0.0 <= keep_prob <= 1.0:
        raise ValueError(f"keep probability must be in [0, 1], got {keep_prob}")
    eps = math.log1p(keep_prob * math.expm1(pp.epsilon))
    return PrivacyParams(eps, pp.delta * keep_prob)


def calibrate_sampling(target: PrivacyParams, keep_prob: float) -> PrivacyParams:
    """Budget (eps'', delta'') such that Poisson sampling at p lands exactly on `target`.

    eps'' = ln((e^eps - (1 - p)) / p) and delta'' = delta / p; the exact
    algebraic inverse of :func:`amplify_poisson`.  Raises InfeasibleError when
    delta / p exceeds 1.
    """
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"keep probability must be in (0, 1], got {keep_prob}")
    if keep_prob == 1.0:
        return target
    delta = target.delta / keep_prob
    if delta > 1.0:
        raise InfeasibleError(
            f"delta''={delta} > 1 for target delta={target.delta} at p={keep_prob}"
        )
    eps = math.log1p(math.expm1(target.epsilon) / keep_prob)
    return PrivacyParams(eps, delta)


def group_bound_deterministic(pp: PrivacyParams, sensitivity) -> PrivacyParams:
    """Parameters after a deterministic suppression of the given sensitivity.

    A sensitivity-Delta deterministic preprocessing turns (eps, delta) into
    (eps * Delta, delta * sum_{k<Delta} e^{eps k}) with delta capped at 1.
    Delta = 0 collapses to (0, 0); infinite sensitivity gives (inf, 1) unless
    the input is already (0, 0).  Pure DP stays pure.
    """
    if sensitivity == 0:
        return PrivacyParams(0.0, 0.0)
    if math.isinf(sensitivity):
        if pp.epsilon == 0.0 and pp.delta == 0.0:
            return PrivacyParams(0.0, 0.0)
        return PrivacyParams(math.inf, 1.0)
    k = int(sensitivity)
    if k < 0 or k != sensitivity:
        raise ValueError(f"sensitivity must be a nonnegative integer or inf, got {sensitivity}")
    if pp.epsilon == 0.0:
        geom = float(k)
    else:
        geom = math.expm1(pp.epsilon * k) / math.expm1(pp.epsilon)
    return PrivacyParams(pp.epsilon * k, min(1.0, pp.delta * geom))


# --- the three branch functions of the suppression bound ----------------------
#
# eps_s(eps, m, M) = max_{p in [0,1]} max{l1(p), l2(p), l3}; the branches stem
# from the worst neighbor-pair geometries (all-close records, all-far records,
# and the empty-vs-singleton pair respectively).


def _log_noise_factor(w, eps: float):
    # ln(e^eps - (e^eps - 1) w) in the overflow-free form eps + ln(1 - w (1 - e^-eps))
    return eps + np.log1p(w * np.expm1(-eps))


def l1(p, eps: float, mm: MMParams):
    """First branch; accepts a scalar or array p in [0, 1]."""
    p = np.asarray(p, dtype=float)
    m, M = mm.m, mm.M
    w = p * M + (1.0 - p) * m
    return _log_noise_factor(w, eps) + p * (M / m) + (1.0 - p) * (1.0 - m) / (1.0 - w) - 1.0


def l2(p, eps: float, mm: MMParams):
    """Second branch; accepts a scalar or array p in [0, 1]."""
    p = np.asarray(p, dtype=float)
    m, M = mm.m, mm.M
    inner = ((M + m) - p * M) / (2.0 - p)
    w = p * M + (1.0 - p) * inner
    return _log_noise_factor(w, eps) + p * (M / m) + (1.0 - p) * (1.0 - inner) / (1.0 - M) - 1.0


def l3(eps: float, mm: MMParams) -> float:
    """Third branch (no inner variable): the empty-vs-singleton worst case."""
    m, M = mm.m, mm.M
    em = math.exp(-eps)
    return -math.log(em + (1.0 - em) * M) + 1.0 - (1.0 - M) / (1.0 - m)


def _cubic_coefficients(eps: float, mm: MMParams, branch: str):
    m, M = mm.m, mm.M
    # beyond e^690 the monic coefficient ratios are converged to double
    # precision; the cap only avoids raw-coefficient overflow
    e = math.exp(min(eps, 690.0))
    if branch == BRANCH_L1:
        a = (e - 1.0) * (M / m) * (M - m) ** 2
        b = -((M - m) / m) * ((m * m - 4.0 * M * m + 2.0 * M) * (e - 1.0) + e * M)
        c = ((1.0 - m) / m) * ((e - 1.0) * (2.0 * m * m - 4.0 * M * m - m) + (3.0 * e - 1.0) * M)
        d = -(1.0 - m) * ((e - 1.0) * (m - 2.0) + e / m)
    elif branch == BRANCH_L2:
        a = (e - (e - 1.0) * m) / m
        b = -(6.0 * e - (e - 1.0) * (M + 5.0 * m)) / m
        c = (
            m * ((e - 1.0) * (m + 9.0 * M - 9.0) - e)
            + 4.0 * M * ((e - 1.0) * M - 4.0 * e + 1.0)
            + 12.0 * e
        ) / ((1.0 - M) * m)
        d = -(2.0 * e - (e - 1.0) * (M + m)) * ((4.0 - 4.0 * M - m) / ((1.0 - M) * m)) + 2.0 * (
            e - 1.0
        )
    else:
        raise ValueError(f"unknown branch {branch!r}")
    return a, b, c, d


def _max_root(a: float, b: float, c: float, d: float) -> float:
    """Root of a p^3 + b p^2 + c p + d that carries the branch maximum.

    The cubic is normalized to monic form first (the raw coefficients carry
    e^eps factors whose cubes overflow).  Single-real-root case via the stable
    Cardano form; three-real-root case via the k = 0 trigonometric root (the
    only critical point left of the branch asymptote).  arccos arguments are
    clamped to [-1, 1] so that 1e-15-scale excursions at the discriminant
    boundary cannot raise.
    """
    b, c, d = b / a, c / a, d / a
    d0 = b * b - 3.0 * c
    d1 = 2.0 * b**3 - 9.0 * b * c + 27.0 * d
    disc = d1 * d1 - 4.0 * d0**3
    if disc > 0.0:
        s = math.sqrt(disc)
        u = (d1 + s) / 2.0 if d1 >= 0.0 else (d1 - s) / 2.0
        # avoid cancellation in the second cube-root argument: u * v = d0^3
        cbrt_u = math.copysign(abs(u) ** (1.0 / 3.0), u)
        cbrt_v = d0 / cbrt_u if cbrt_u != 0.0 else 0.0
        return -(b + cbrt_u + cbrt_v) / 3.0
    if d0 <= 0.0:  # disc <= 0 forces d0 >= 0; equality means a triple root
        return -b / 3.0
    r = math.sqrt(d0**3)
    arg = min(1.0, max(-1.0, d1 / (2.0 * r)))
    return -(b + 2.0 * math.sqrt(d0) * math.cos(math.acos(arg) / 3.0)) / 3.0


_DEGENERATE_EPS = 1e-9
_DEGENERATE_SPREAD = 1e-12


def maximizer_p(eps: float, mm: MMParams, branch: str) -> float:
    """Closed-form argmax over [0, 1] of the requested branch (L1 or L2).

    The unclamped stationary point is the relevant real root of a cubic
    (quadratic closed forms when eps = 0); the result is clamped to [0, 1].
    The constant m = M case returns 0 by convention.
    """
    if branch not in (BRANCH_L1, BRANCH_L2):
        raise ValueError(f"branch must be L1 or L2, got {branch!r}")
    m, M = mm.m, mm.M
    if M - m <= _DEGENERATE_SPREAD:
        return 0.0
    if eps <= _DEGENERATE_EPS:
        # eps = 0 turns the stationarity condition into a quadratic
        if branch == BRANCH_L1:
            v = (1.0 - m) / (M - m) - math.sqrt(M * m * (1.0 - m) * (1.0 - M)) / (M * (M - m))
        else:
            v = 2.0 - math.sqrt(m * (1.0 - M)) / (1.0 - M)
        return min(1.0, max(0.0, v))
    v = _max_root(*_cubic_coefficients(eps, mm, branch))
    return min(1.0, max(0.0, v))


def delta_s(delta: float, mm: MMParams) -> float:
    """delta after score-based suppression: delta * (1 - m)."""
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must be in [0, 1], got {delta}")
    return delta * (1.0 - mm.m)


def epsilon_s(eps: float, mm: MMParams, delta: Optional[float] = None) -> BoundReport:
    """Upper bound on epsilon after score-based suppression with range (m, M).

    Evaluates l1 and l2 at their closed-form maximizers and at both endpoints
    (cheap insurance against root-branch misselection: the clamped maximum
    frequently sits at p = 0 or p = 1), takes the overall max with l3, and
    reports which branch and which p achieved it.
    """
    if eps < 0.0:
        raise ValueError(f"epsilon must be >= 0, got {eps}")
    p1 = maximizer_p(eps, mm, BRANCH_L1)
    p2 = maximizer_p(eps, mm, BRANCH_L2)
    candidates = [
        (float(l1(p1, eps, mm)), p1, BRANCH_L1),
        (float(l1(0.0, eps, mm)), 0.0, BRANCH_L1),
        (float(l1(1.0, eps, mm)), 1.0, BRANCH_L1),
        (float(l2(p2, eps, mm)), p2, BRANCH_L2),
        (float(l2(0.0, eps, mm)), 0.0, BRANCH_L2),
        (float(l2(1.0, eps, mm)), 1.0, BRANCH_L2),
        (l3(eps, mm), None, BRANCH_L3),
    ]
    best = max(candidates, key=lambda t: t[0])
    outside = (
        eps > VERIFIED_EPS_MAX
        or mm.m < VERIFIED_MM_RANGE[0]
        or mm.M > VERIFIED_MM_RANGE[1]
    )
    return BoundReport(
        eps_s=best[0],
        argmax_p=best[1],
        active_branch=best[2],
        delta_s=None if delta is None else delta_s(delta, mm),
        outside_verified_range=outside,
    )


def poisson_floor(eps: float, mm: MMParams) -> float:
    """Best epsilon any suppression with range (m, M) could reach.

    No suppression that keeps every record with probability at most 1 - m can
    amplify more than uniform Poisson sampling at keep rate 1 - m, so
    eps_s >= ln(1 + (1 - m)(e^eps - 1)) always.
    """
    return math.log1p((1.0 - mm.m) * math.expm1(eps))


_MONOTONE_PROBE = (0.0, 0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 5.0, 10.0, 25.0, 50.0, 100.0)


@functools.lru_cache(maxsize=4096)
def _assert_monotone_in_eps(m: float, M: float) -> None:
    # Bisection in calibrate_suppression relies on eps_s being nondecreasing in
    # eps.  This holds on the whole verified grid but is asserted rather than
    # assumed: a violation is a hard error, never silently patched.
    mm = MMParams(m, M)
    vals = [epsilon_s(e, mm).eps_s for e in _MONOTONE_PROBE]
    for lo, hi, vlo, vhi in zip(_MONOTONE_PROBE, _MONOTONE_PROBE[1:], vals, vals[1:]):
        if vhi < vlo - 1e-9:
            raise RuntimeError(
                f"eps_s not monotone in eps at (m={m}, M={M}): "
                f"eps_s({lo})={vlo} > eps_s({hi})={vhi}; calibration aborted"
            )


_CALIBRATION_EPS_CAP = 200.0
_CALIBRATION_TOL = 1e-10


def calibrate_suppression(target: PrivacyParams, mm: MMParams) -> PrivacyParams:
    """Budget (eps'', delta'') whose suppression bound lands exactly on `target`.

    delta'' = delta / (1 - m); eps'' is found by bisection of eps_s over
    [0, 200] to absolute tolerance 1e-10.  Raises InfeasibleError when the
    target sits below the eps = 0 bound eps_s(0, m, M) (the unreachable region)
    or when delta'' would exceed 1.
    """
    delta = target.delta / (1.0 - mm.m)
    if delta > 1.0:
        raise InfeasibleError(
            f"delta''={delta} > 1 for target delta={target.delta} at m={mm.m}"
        )
    _assert_monotone_in_eps(mm.m, mm.M)
    floor = epsilon_s(0.0, mm).eps_s
    # the boundary itself is unreachable: its only inverse is the degenerate
    # zero-budget mechanism, so equality (within float noise) is infeasible too
    if target.epsilon <= floor + 1e-9:
        raise InfeasibleError(
            f"target eps={target.epsilon} not above eps_s(0, m={mm.m}, M={mm.M})={floor}"
        )
    lo, hi = 0.0, _CALIBRATION_EPS_CAP
    if epsilon_s(hi, mm).eps_s < target.epsilon:
        raise InfeasibleError(
            f"target eps={target.epsilon} not reachable with budget <= {hi}"
        )
    while hi - lo > _CALIBRATION_TOL:
        mid = 0.5 * (lo + hi)
        if epsilon_s(mid, mm).eps_s < target.epsilon:
            lo = mid
        else:
            hi = mid
    return PrivacyParams(0.5 * (lo + hi), delta)
