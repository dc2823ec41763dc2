"""Experiment harness: data ingestion, utility metrics, confidence intervals,
and the sampling / suppression grid runners behind the CLI."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy import stats

from . import datasets
from .accounting import (
    InfeasibleError,
    MMParams,
    calibrate_sampling,
    calibrate_suppression,
)
from .core import Database, PrivacyParams, RandomStream, ValueBounds, as_generator
from .mechanisms import (
    EXP_MECH,
    EXPONENTIAL,
    GAUSSIAN,
    LAPLACE,
    analytic_gaussian_sigma,
    dp_kmedian,
    dp_lloyd,
    mode_universe,
    sum_sensitivity,
)
from .suppression import ScaledEuclidean

PLAIN = "plain"
PREPROCESSED = "preprocessed"
PREPROCESSED_RECALIBRATED = "preprocessed_recalibrated"

DEFAULT_EPSILONS = (0.25, 0.5, 1.0, 2.0)
DEFAULT_P_GRID = tuple(round(0.01 * i, 2) for i in range(1, 100))
DEFAULT_MM_GRID = tuple(
    (round(0.1 * i, 1), round(0.1 * j, 1)) for i in range(1, 10) for j in range(i, 10)
)
DEFAULT_REPS = {"mean": 500, "mode": 2000, "dp_lloyd": 500, "k_median": 20}
METRIC_OF = {"mean": "MPE", "mode": "ModeError", "dp_lloyd": "NICV", "k_median": "KMedianCost"}


# --- ingestion -------------------------------------------------------------------


def load_column(path: str | Path, column: str, bounds: ValueBounds) -> Database:
    """Load one numeric CSV column (header row required) as a 1-dim Database.

    Parse failures and out-of-bounds values report the offending row index.
    """
    values = []
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise ValueError(f"column {column!r} not found in {path}")
        for i, row in enumerate(reader):
            raw = row[column]
            try:
                v = float(raw)
            except ValueError as exc:
                raise ValueError(f"row {i}: cannot parse {raw!r} as a number") from exc
            if not bounds.contains(v):
                raise ValueError(
                    f"row {i}: value {v} outside bounds [{bounds.lower}, {bounds.upper}]"
                )
            values.append(v)
    return Database(np.array(values), bounds)


def gen_synthetic_clusters(rng) -> tuple[Database, np.ndarray]:
    """Random two-column clustering benchmark plus its candidate-center grid.

    100 integer points over {1..100}^2: 25 Gaussian (sigma 10) draws, rounded
    to the nearest integer and clamped into range, around each of four
    accumulation points drawn from {10..90}^2.  Both the points and the
    candidate grid are rescaled so the grid diameter is 1 (unit sensitivity
    for a cost query).
    """
    gen = as_generator(rng)
    centers = gen.integers(10, 91, size=(4, 2)).astype(float)
    raw = np.concatenate(
        [np.rint(c + gen.normal(0.0, 10.0, size=(25, 2))) for c in centers]
    )
    raw = np.clip(raw, 1, 100)
    scale = 99.0 * math.sqrt(2.0)
    pts = (raw - 1.0) / scale
    gx, gy = np.meshgrid(np.arange(1, 101), np.arange(1, 101))
    candidates = (np.column_stack([gx.ravel(), gy.ravel()]) - 1.0) / scale
    hi = 99.0 / scale
    db = Database(pts, (ValueBounds(0.0, hi), ValueBounds(0.0, hi)))
    return db, candidates


def normalize_to_unit_box(matrix: np.ndarray) -> np.ndarray:
    """Min-max normalize each column of a matrix into [-1, 1]."""
    lo = matrix.min(axis=0)
    hi = matrix.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return 2.0 * (matrix - lo) / span - 1.0


# --- metrics and confidence intervals ---------------------------------------------


def metric_mpe(true_mean: float, noisy_mean: float) -> float:
    """Mean percent error, 100 |noisy - true| / |true|."""
    if true_mean == 0:
        raise ValueError("MPE is undefined for a zero true mean")
    return 100.0 * abs(noisy_mean - true_mean) / abs(true_mean)


def metric_mode_error(outputs: Sequence, true_mode) -> float:
    """Fraction of outputs that miss the true mode."""
    outputs = list(outputs)
    if not outputs:
        raise ValueError("need at least one output")
    wrong = sum(1 for o in outputs if o != true_mode)
    return wrong / len(outputs)


def metric_kmedian_cost(d: Database, medians: np.ndarray) -> float:
    """Mean distance of each record to its closest median."""
    medians = np.atleast_2d(np.asarray(medians, dtype=float))
    if medians.size == 0:
        raise ValueError("need at least one median")
    dist = np.sqrt(((d.values[:, None, :] - medians[None, :, :]) ** 2).sum(axis=2))
    return float(dist.min(axis=1).mean())


def metric_nicv(d: Database, centers: np.ndarray) -> float:
    """Normalized intracluster variance of the nearest-center clustering.

    Records are grouped by their nearest center (ties to the lowest index) and
    the metric averages each record's squared distance to the centroid of its
    own group, so a database of identical records always scores 0.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if centers.size == 0:
        raise ValueError("need at least one center")
    pts = d.values
    d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    assign = np.argmin(d2, axis=1)
    total = 0.0
    for j in range(len(centers)):
        members = pts[assign == j]
        if len(members):
            total += ((members - members.mean(axis=0)) ** 2).sum()
    return total / len(pts)


def wilson_ci(successes: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0 <= successes <= n:
        raise ValueError("successes must lie in [0, n]")
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    z = stats.norm.ppf(0.5 + level / 2.0)
    phat = successes / n
    denom = 1.0 + z * z / n
    center = (phat + z * z / (2 * n)) / denom
    half = z * math.sqrt(phat * (1 - phat) / n + z * z / (4 * n * n)) / denom
    return center - half, center + half


def normal_ci(samples: np.ndarray, level: float = 0.95) -> tuple[float, float]:
    """t-based confidence interval for the mean (small rep counts expected)."""
    samples = np.asarray(samples, dtype=float)
    n = samples.size
    mean = float(samples.mean())
    if n < 2:
        return mean, mean
    half = float(stats.t.ppf(0.5 + level / 2.0, n - 1) * samples.std(ddof=1) / math.sqrt(n))
    return mean - half, mean + half


# --- experiment configuration and rows ---------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """One grid run: dataset/mechanism coordinates plus preprocessing grids.

    Defaults mirror the benchmark setup: epsilons {0.25, 0.5, 1, 2}, delta
    |D|^-2 for Gaussian noise (zero otherwise), sampling rates 0.01..0.99,
    (m, M) on the {0.1..0.9} lattice, and per-mechanism repetition counts of
    500 (mean, dp_lloyd), 2000 (mode) and 20 (k_median) scaled by `scale`.
    """

    dataset: str = "adult"
    column: Optional[str] = "age"
    mechanism: str = "mean"
    noise: Optional[str] = LAPLACE
    epsilons: tuple = DEFAULT_EPSILONS
    p_grid: tuple = DEFAULT_P_GRID
    mm_grid: tuple = DEFAULT_MM_GRID
    reps: Optional[int] = None
    master_seed: int = 20_250_801
    recalibrate: bool = True
    scale: float = 0.2

    def effective_reps(self) -> int:
        if self.reps is not None:
            return max(1, int(self.reps))
        return max(1, round(DEFAULT_REPS[self.mechanism] * self.scale))


@dataclass(frozen=True)
class ExperimentRow:
    """One grid cell's utility statistics."""

    dataset: str
    column: Optional[str]
    mechanism: str
    noise: Optional[str]
    epsilon: float
    delta: float
    p: Optional[float]
    m: Optional[float]
    M: Optional[float]
    variant: str
    metric: str
    mean: Optional[float]
    ci_low: Optional[float]
    ci_high: Optional[float]
    reps: int
    infeasible: bool = False

    def to_json_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "column": self.column,
            "mechanism": self.mechanism,
            "noise": self.noise,
            "epsilon": self.epsilon,
            "delta": self.delta,
            "p": self.p,
            "m": self.m,
            "M": self.M,
            "variant": self.variant,
            "metric": self.metric,
            "mean": self.mean,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "reps": self.reps,
            "infeasible": self.infeasible,
        }


JSONL_FIELDS = tuple(ExperimentRow(
    "", None, "", None, 0.0, 0.0, None, None, None, "", "", None, None, None, 0
).to_json_dict())


# --- per-mechanism engines ----------------------------------------------------------
#
# The 1-dimensional engines work on the (value, count) compression of the
# column: every preprocessing used here deletes records with a probability
# that depends only on the record's value, so per-value binomial thinning is
# an exact simulation of per-record Bernoulli deletion.


@dataclass
class _ColumnBundle:
    db: Database
    values: np.ndarray  # distinct values
    counts: np.ndarray  # multiplicities
    true_mean: float
    universe: Optional[np.ndarray]  # integer universe for the mode
    full_counts: Optional[np.ndarray]  # histogram over the universe
    true_mode: Optional[float]


def _compress_column(db: Database, for_mode: bool) -> _ColumnBundle:
    col = db.column()
    values, counts = np.unique(col, return_counts=True)
    universe = full = mode = None
    if for_mode:
        universe = mode_universe(db).astype(float)
        full = np.zeros(universe.size)
        offsets = (values - universe[0]).astype(int)
        full[offsets] = counts
        # ties resolve to the lowest value (argmax picks the first maximum)
        mode = float(universe[int(np.argmax(full))])
    return _ColumnBundle(
        db=db,
        values=values,
        counts=counts,
        true_mean=float(col.mean()),
        universe=universe,
        full_counts=full,
        true_mode=mode,
    )


def _laplace_matrix(gen: np.random.Generator, scale: float, shape) -> np.ndarray:
    half = gen.random(shape) - 0.5
    return -scale * np.sign(half) * np.log(np.maximum(1.0 - 2.0 * np.abs(half), 1e-300))


def _thinned_counts(
    gen: np.random.Generator, counts: np.ndarray, keep: Optional[np.ndarray], reps: int
) -> np.ndarray:
    if keep is None:
        return np.broadcast_to(counts, (reps, counts.size))
    return gen.binomial(counts.astype(int)[None, :], keep[None, :], size=(reps, counts.size))


def _run_mean_cell(bundle, params, noise, keep, reps, gen) -> np.ndarray:
    sum_sens = sum_sensitivity(bundle.db.bounds[0])
    ks = _thinned_counts(gen, bundle.counts, keep, reps)
    sums = ks @ bundle.values
    cnts = ks.sum(axis=1).astype(float)
    if noise == LAPLACE:
        sums = sums + _laplace_matrix(gen, 2.0 * sum_sens / params.epsilon, reps)
        cnts = cnts + _laplace_matrix(gen, 2.0 / params.epsilon, reps)
    elif noise == GAUSSIAN:
        sig_sum = analytic_gaussian_sigma(params.epsilon / 2, params.delta / 2, sum_sens)
        sig_cnt = analytic_gaussian_sigma(params.epsilon / 2, params.delta / 2, 1.0)
        sums = sums + gen.normal(0.0, sig_sum, reps)
        cnts = cnts + gen.normal(0.0, sig_cnt, reps)
    else:
        raise ValueError(f"mean mechanism supports laplace or gaussian, got {noise!r}")
    cnts = np.where(cnts <= 0.0, 1.0, cnts)
    means = sums / cnts
    return 100.0 * np.abs(means - bundle.true_mean) / abs(bundle.true_mean)


def _run_mode_cell(bundle, params, noise, keep_by_bin, reps, gen) -> np.ndarray:
    """Per-rep mode failures (1.0 = missed the true mode)."""
    full = bundle.full_counts
    if keep_by_bin is None:
        ks = np.broadcast_to(full, (reps, full.size)).astype(float)
    else:
        ks = gen.binomial(
            full.astype(int)[None, :], keep_by_bin[None, :], size=(reps, full.size)
        ).astype(float)
    eps = params.epsilon
    if noise == LAPLACE:
        noisy = ks + _laplace_matrix(gen, 1.0 / eps, ks.shape)
    elif noise == EXPONENTIAL:
        noisy = ks - (2.0 / eps) * np.log1p(-gen.random(ks.shape))
    elif noise == GAUSSIAN:
        sigma = analytic_gaussian_sigma(eps, params.delta, 1.0)
        noisy = ks + gen.normal(0.0, sigma, ks.shape)
    elif noise == EXP_MECH:
        # Gumbel-max sampling is the vectorized equivalent of softmax sampling
        logits = (eps / 2.0) * (ks - ks.max(axis=1, keepdims=True))
        noisy = logits - np.log(-np.log(np.maximum(gen.random(ks.shape), 1e-300)))
    else:
        raise ValueError(f"unknown mode variant {noise!r}")
    picked = bundle.universe[np.argmax(noisy, axis=1)]
    return (picked != bundle.true_mode).astype(float)


@dataclass
class _MatrixBundle:
    db: Database  # normalized to [-1, 1] per coordinate
    k: int
    iterations: int


@dataclass
class _SyntheticBundle:
    db: Database
    candidates: np.ndarray
    k: int
    iterations: int


def _run_lloyd_cell(bundle, params, keep, reps, gen) -> np.ndarray:
    pts = bundle.db.values
    out = np.empty(reps)
    for r in range(reps):
        mask = np.ones(len(pts), dtype=bool) if keep is None else gen.random(len(pts)) < keep
        sub = bundle.db.subset(mask)
        result = dp_lloyd(sub, bundle.k, params, iterations=bundle.iterations, rng=gen)
        out[r] = metric_nicv(bundle.db, result.centers)
    return out


def _run_kmedian_cell(bundle, params, keep, reps, gen) -> np.ndarray:
    out = np.empty(reps)
    for r in range(reps):
        mask = (
            np.ones(len(bundle.db), dtype=bool)
            if keep is None
            else gen.random(len(bundle.db)) < keep
        )
        sub = bundle.db.subset(mask)
        result = dp_kmedian(
            sub, bundle.candidates, bundle.k, params, iterations=bundle.iterations, rng=gen
        )
        out[r] = metric_kmedian_cost(bundle.db, result.centers)
    return out


# --- grid runners -------------------------------------------------------------------


def _load_bundle(cfg: ExperimentConfig, root: RandomStream):
    if cfg.mechanism in ("mean", "mode"):
        db = datasets.load_dataset(cfg.dataset, cfg.column)
        return _compress_column(db, for_mode=cfg.mechanism == "mode")
    if cfg.mechanism == "dp_lloyd":
        matrix, _ = datasets.clustering_matrix(cfg.dataset)
        pts = normalize_to_unit_box(matrix)
        db = Database(pts, tuple(ValueBounds(-1.0, 1.0) for _ in range(pts.shape[1])))
        return _MatrixBundle(db=db, k=5, iterations=5)
    if cfg.mechanism == "k_median":
        db, candidates = gen_synthetic_clusters(root.child("synthetic-db"))
        return _SyntheticBundle(db=db, candidates=candidates, k=4, iterations=10)
    raise ValueError(f"unknown mechanism {cfg.mechanism!r}")


def _delta_for(cfg: ExperimentConfig, bundle) -> float:
    if cfg.noise == GAUSSIAN:
        n = len(bundle.db)
        return n**-2.0
    return 0.0


def _cell_stream(cfg: ExperimentConfig, eps: float, label: str) -> RandomStream:
    return RandomStream(cfg.master_seed).child(
        cfg.dataset,
        cfg.column or "-",
        cfg.mechanism,
        cfg.noise or "-",
        f"eps={eps!r}",
        label,
    )


def _run_cell(cfg, bundle, params: PrivacyParams, keep, reps: int, gen) -> np.ndarray:
    if cfg.mechanism == "mean":
        return _run_mean_cell(bundle, params, cfg.noise, keep, reps, gen)
    if cfg.mechanism == "mode":
        return _run_mode_cell(bundle, params, cfg.noise, keep, reps, gen)
    if cfg.mechanism == "dp_lloyd":
        return _run_lloyd_cell(bundle, params, keep, reps, gen)
    return _run_kmedian_cell(bundle, params, keep, reps, gen)


def _summarize(cfg, samples: np.ndarray) -> tuple[float, float, float]:
    if cfg.mechanism == "mode":
        successes = int(samples.sum())
        low, high = wilson_ci(successes, samples.size)
        return successes / samples.size, low, high
    low, high = normal_ci(samples)
    return float(samples.mean()), low, high


def _row(cfg, eps, delta, variant, mean_ci, reps, p=None, m=None, M=None, infeasible=False):
    mean, low, high = mean_ci if mean_ci is not None else (None, None, None)
    return ExperimentRow(
        dataset=cfg.dataset,
        column=cfg.column if cfg.mechanism in ("mean", "mode") else None,
        mechanism=cfg.mechanism,
        noise=cfg.noise if cfg.mechanism in ("mean", "mode") else None,
        epsilon=eps,
        delta=delta,
        p=p,
        m=m,
        M=M,
        variant=variant,
        metric=METRIC_OF[cfg.mechanism],
        mean=mean,
        ci_low=low,
        ci_high=high,
        reps=reps,
        infeasible=infeasible,
    )


def _keep_by_value(cfg, bundle, m: float, M: float):
    """Per-value (or per-record) keep probabilities of the score-based suppression."""
    if cfg.mechanism == "mean":
        width = bundle.db.bounds[0].width
        n = bundle.counts.sum()
        mean_d = (
            np.abs(bundle.values[:, None] - bundle.values[None, :]) @ bundle.counts
        ) / (n * width)
        return 1.0 - (m + (M - m) * mean_d)
    if cfg.mechanism == "mode":
        n = bundle.full_counts.sum()
        frac = np.where(n > 0, bundle.full_counts / n, 0.0)
        return 1.0 - (m + (M - m) * (1.0 - frac))
    dist = ScaledEuclidean.for_bounds(bundle.db.bounds)
    mean_d = dist.mean_distances(bundle.db.values)
    return 1.0 - (m + (M - m) * mean_d)


def run_sampling_experiment(cfg: ExperimentConfig) -> list[ExperimentRow]:
    """Utility of the plain mechanism vs the mechanism behind Poisson sampling.

    One plain row per epsilon plus one preprocessed row per (epsilon, p) cell;
    with recalibration on, the preprocessed mechanism runs at the inflated
    budget whose amplified parameters land back on (epsilon, delta).
    Infeasible calibration cells are emitted with the infeasible marker.
    """
    root = RandomStream(cfg.master_seed)
    bundle = _load_bundle(cfg, root)
    reps = cfg.effective_reps()
    rows = []
    for eps in cfg.epsilons:
        delta = _delta_for(cfg, bundle)
        base = PrivacyParams(eps, delta)
        gen = _cell_stream(cfg, eps, "plain").generator()
        rows.append(_row(cfg, eps, delta, PLAIN, _summarize(cfg, _run_cell(cfg, bundle, base, None, reps, gen)), reps))
        for p in cfg.p_grid:
            variant = PREPROCESSED_RECALIBRATED if cfg.recalibrate else PREPROCESSED
            try:
                params = calibrate_sampling(base, p) if cfg.recalibrate else base
            except InfeasibleError:
                rows.append(_row(cfg, eps, delta, variant, None, reps, p=p, infeasible=True))
                continue
            gen = _cell_stream(cfg, eps, f"p={p!r}").generator()
            if cfg.mechanism == "mean":
                keep = np.full(bundle.values.size, p)
            elif cfg.mechanism == "mode":
                keep = np.full(bundle.universe.size, p)
            else:
                keep = np.full(len(bundle.db), p)
            samples = _run_cell(cfg, bundle, params, keep, reps, gen)
            rows.append(_row(cfg, eps, delta, variant, _summarize(cfg, samples), reps, p=p))
    return rows


def run_suppression_experiment(cfg: ExperimentConfig) -> list[ExperimentRow]:
    """Utility of the plain mechanism vs the mechanism behind score-based suppression.

    The suppression deletes each record independently with probability
    m + (M - m) * (average distance to the database), using the absolute
    difference for the mean, the discrete metric for the mode and scaled L2
    for clustering.  With recalibration on, each (epsilon, m, M) cell runs the
    mechanism at the inverse-calibrated budget; cells whose target sits below
    the eps = 0 bound are emitted as infeasible.
    """
    root = RandomStream(cfg.master_seed)
    bundle = _load_bundle(cfg, root)
    reps = cfg.effective_reps()
    rows = []
    for eps in cfg.epsilons:
        delta = _delta_for(cfg, bundle)
        base = PrivacyParams(eps, delta)
        gen = _cell_stream(cfg, eps, "plain").generator()
        rows.append(_row(cfg, eps, delta, PLAIN, _summarize(cfg, _run_cell(cfg, bundle, base, None, reps, gen)), reps))
        for m, M in cfg.mm_grid:
            variant = PREPROCESSED_RECALIBRATED if cfg.recalibrate else PREPROCESSED
            try:
                params = (
                    calibrate_suppression(base, MMParams(m, M)) if cfg.recalibrate else base
                )
            except InfeasibleError:
                rows.append(
                    _row(cfg, eps, delta, variant, None, reps, m=m, M=M, infeasible=True)
                )
                continue
            keep = _keep_by_value(cfg, bundle, m, M)
            gen = _cell_stream(cfg, eps, f"m={m!r},M={M!r}").generator()
            samples = _run_cell(cfg, bundle, params, keep, reps, gen)
            rows.append(_row(cfg, eps, delta, variant, _summarize(cfg, samples), reps, m=m, M=M))
    return rows


# --- output -------------------------------------------------------------------------


def write_rows(rows: Iterable[ExperimentRow], path: str | Path, fmt: str = "jsonl") -> Path:
    path = Path(path)
    rows = list(rows)
    if fmt == "jsonl":
        with path.open("w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row.to_json_dict()) + "\n")
    elif fmt == "csv":
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(JSONL_FIELDS))
            writer.writeheader()
            for row in rows:
                writer.writerow(row.to_json_dict())
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return path


def suppression_difference_table(rows: Sequence[ExperimentRow]) -> list[dict]:
    """(epsilon, m, M, difference) records: plain mean minus preprocessed mean.

    Positive values mean the preprocessed composition preserved utility
    better.  Infeasible cells carry a null difference.
    """
    plain = {
        (r.epsilon, r.mechanism, r.noise): r.mean for r in rows if r.variant == PLAIN
    }
    table = []
    for r in rows:
        if r.variant == PLAIN or r.m is None:
            continue
        base = plain.get((r.epsilon, r.mechanism, r.noise))
        diff = None if (r.infeasible or base is None) else base - r.mean
        table.append(
            {"epsilon": r.epsilon, "m": r.m, "M": r.M, "difference": diff,
             "infeasible": r.infeasible}
        )
    return table


def write_contour_csv(rows: Sequence[ExperimentRow], path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epsilon", "m", "M", "difference", "infeasible"])
        writer.writeheader()
        for rec in suppression_difference_table(rows):
            writer.writerow(rec)
    return path
