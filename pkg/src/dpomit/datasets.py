"""Bundled benchmark datasets.

Deterministic synthetic stand-ins for the three public benchmark tables
(adult, census, irish): same sizes, column names, value ranges and the
qualitative shape that drives the experiments (a contested mode race in
adult/age, a dominant mode in adult/hours-per-week, unique values in
census/FEDTAX).  Generation is seeded per column, so every build of the
package ships byte-identical fixtures.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import Database, ValueBounds


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    bounds: ValueBounds  # sensitivity bounds used by the mechanisms
    value_range: tuple[int, int]  # actual data range


DATASETS: dict[str, tuple[ColumnSpec, ...]] = {
    "adult": (
        ColumnSpec("age", ValueBounds(0, 125), (17, 90)),
        ColumnSpec("fnlwgt", ValueBounds(0, 2_250_000), (12_285, 1_490_400)),
        ColumnSpec("education-num", ValueBounds(1, 16), (1, 16)),
        ColumnSpec("capital-gain", ValueBounds(0, 150_000), (0, 99_999)),
        ColumnSpec("capital-loss", ValueBounds(0, 6_534), (0, 4_356)),
        ColumnSpec("hours-per-week", ValueBounds(0, 100), (1, 99)),
    ),
    "census": (
        ColumnSpec("FEDTAX", ValueBounds(0, 31_889), (1, 21_260)),
        ColumnSpec("FICA", ValueBounds(0, 11_890), (6, 7_932)),
    ),
    "irish": (
        ColumnSpec("Age", ValueBounds(0, 125), (15, 84)),
        ColumnSpec("Education", ValueBounds(1, 10), (1, 10)),
    ),
}

DATASET_SIZES = {"adult": 32_561, "census": 1_080, "irish": 66_666}

#: the six adult columns used by the clustering experiments
ADULT_CLUSTERING_COLUMNS = tuple(c.name for c in DATASETS["adult"])


def _rebalance(counts: np.ndarray, total: int, cap: int) -> np.ndarray:
    """Adjust tail bins so the histogram sums to `total` without breaching `cap`."""
    counts = counts.copy()
    diff = total - int(counts.sum())
    i = len(counts) - 1
    while diff != 0:
        if diff > 0:
            step = min(diff, cap - counts[i])
        else:
            step = max(diff, -int(counts[i]))
        counts[i] += step
        diff -= step
        i = i - 1 if i > 0 else len(counts) - 1
    return counts


def _gamma_histogram(support: np.ndarray, shift: float, k: float, theta: float, total: int) -> np.ndarray:
    x = np.maximum((support - shift) / theta, 1e-9)
    w = x ** (k - 1.0) * np.exp(-x)
    return np.floor(w / w.sum() * total).astype(int)


def _adult_age_counts() -> tuple[np.ndarray, np.ndarray]:
    total = DATASET_SIZES["adult"]
    ages = np.arange(17, 91)
    counts = _gamma_histogram(ages, 16.0, 2.8, 8.0, total)
    peak = int(counts.max()) + 30
    # contested mode: a unique winner at 36 with close runners-up, so the mode
    # survives direct noising but flips easily once records are omitted
    race = {36: 0, 35: 4, 31: 4, 33: 5, 30: 14, 34: 17, 37: 21, 32: 24, 38: 28, 29: 31}
    cap = peak - 36
    counts = np.minimum(counts, cap)
    for age, gap in race.items():
        counts[age - 17] = peak - gap
    return ages, _rebalance(counts, total, cap)


def _adult_hours_counts() -> tuple[np.ndarray, np.ndarray]:
    # the 40-hour bin holds over half of all records: the mode is effectively
    # impossible to miss, with or without preprocessing
    total = DATASET_SIZES["adult"]
    hours = np.arange(1, 100)
    counts = _gamma_histogram(hours, 0.0, 5.0, 8.5, total - total // 2 - 1)
    counts[40 - 1] = total // 2 + 1 + counts[40 - 1]
    return hours, _rebalance(counts, total, int(counts.max()))


def _expand(values: np.ndarray, counts: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    out = np.repeat(values, counts).astype(float)
    rng.shuffle(out)
    return out


def _adult_columns() -> dict[str, np.ndarray]:
    n = DATASET_SIZES["adult"]
    cols: dict[str, np.ndarray] = {}
    rng = np.random.default_rng(118_821_701)
    ages, age_counts = _adult_age_counts()
    cols["age"] = _expand(ages, age_counts, rng)
    hours, hour_counts = _adult_hours_counts()
    cols["hours-per-week"] = _expand(hours, hour_counts, rng)
    cols["fnlwgt"] = np.clip(
        np.round(np.exp(rng.normal(12.0, 0.47, n))), 12_285, 1_490_400
    ).astype(float)
    edu_weights = np.array([1, 2, 4, 7, 6, 10, 13, 5, 32, 22, 4, 16, 11, 5, 2, 1], dtype=float)
    cols["education-num"] = rng.choice(
        np.arange(1, 17), size=n, p=edu_weights / edu_weights.sum()
    ).astype(float)
    gain = np.zeros(n)
    winners = rng.random(n) < 0.083
    gain[winners] = np.clip(np.round(np.exp(rng.normal(8.6, 1.0, int(winners.sum())))), 114, 99_999)
    cols["capital-gain"] = gain
    loss = np.zeros(n)
    losers = rng.random(n) < 0.047
    loss[losers] = np.clip(np.round(rng.normal(1_880, 390, int(losers.sum()))), 155, 4_356)
    cols["capital-loss"] = loss
    return cols


def _census_columns() -> dict[str, np.ndarray]:
    n = DATASET_SIZES["census"]
    rng = np.random.default_rng(118_821_702)
    # FEDTAX never repeats a value (its mode is undefined by ties)
    fedtax = rng.choice(np.arange(1, 21_261), size=n, replace=False)
    fica = np.clip(np.round(np.exp(rng.normal(7.6, 0.75, n))), 6, 7_932)
    return {"FEDTAX": np.sort(fedtax)[rng.permutation(n)].astype(float), "FICA": fica.astype(float)}


def _irish_columns() -> dict[str, np.ndarray]:
    n = DATASET_SIZES["irish"]
    rng = np.random.default_rng(118_821_703)
    ages = np.arange(15, 85)
    counts = _rebalance(_gamma_histogram(ages, 13.0, 2.4, 11.0, n), n, n)
    edu_weights = np.array([2, 3, 6, 8, 9, 6, 4, 55, 4, 3], dtype=float)
    edu = rng.choice(np.arange(1, 11), size=n, p=edu_weights / edu_weights.sum())
    return {"Age": _expand(ages, counts, rng), "Education": edu.astype(float)}


_BUILDERS = {"adult": _adult_columns, "census": _census_columns, "irish": _irish_columns}
_CACHE: dict[str, dict[str, np.ndarray]] = {}


def dataset_columns(name: str) -> dict[str, np.ndarray]:
    if name not in _BUILDERS:
        raise KeyError(f"unknown dataset {name!r}; have {sorted(_BUILDERS)}")
    if name not in _CACHE:
        _CACHE[name] = _BUILDERS[name]()
    return _CACHE[name]


def column_spec(name: str, column: str) -> ColumnSpec:
    for spec in DATASETS[name]:
        if spec.name == column:
            return spec
    raise KeyError(f"dataset {name!r} has no column {column!r}")


def load_dataset(name: str, column: str) -> Database:
    """One column of a bundled dataset as a 1-dimensional Database."""
    spec = column_spec(name, column)
    return Database(dataset_columns(name)[column], spec.bounds)


def clustering_matrix(name: str = "adult") -> tuple[np.ndarray, tuple[ValueBounds, ...]]:
    """All numeric columns of a dataset as an (n, d) matrix plus their bounds."""
    cols = dataset_columns(name)
    specs = DATASETS[name]
    mat = np.column_stack([cols[s.name] for s in specs])
    return mat, tuple(s.bounds for s in specs)


def write_fixture_csv(name: str, path: str | Path) -> Path:
    """Write a bundled dataset to CSV (header row, comma-separated, UTF-8)."""
    cols = dataset_columns(name)
    names = [s.name for s in DATASETS[name]]
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        arrays = [cols[c] for c in names]
        for row in zip(*arrays):
            writer.writerow([_format_value(v) for v in row])
    return path


def _format_value(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))
