"""Shared domain types: privacy parameters, bounded multiset databases, seeded RNG streams."""

from __future__ import annotations

import hashlib
import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

#: A record is a point in R^d, kept as a plain tuple so it can key multisets.
Record = tuple[float, ...]


@dataclass(frozen=True)
class PrivacyParams:
    """An (epsilon, delta) pair.

    epsilon >= 0 (math.inf allowed for degenerate bounds), 0 <= delta <= 1.
    """

    epsilon: float
    delta: float = 0.0

    def __post_init__(self) -> None:
        if not (self.epsilon >= 0.0) or math.isnan(self.epsilon):
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if not (0.0 <= self.delta <= 1.0):
            raise ValueError(f"delta must be in [0, 1], got {self.delta}")

    def dominates(self, other: "PrivacyParams") -> bool:
        """True when this pair is at least as strong in both coordinates."""
        return self.epsilon <= other.epsilon and self.delta <= other.delta


@dataclass(frozen=True)
class ValueBounds:
    """Closed interval of admissible values for one database column."""

    lower: float
    upper: float

    def __post_init__(self) -> None:
        if not (self.lower < self.upper):
            raise ValueError(f"need lower < upper, got [{self.lower}, {self.upper}]")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def contains(self, x: float) -> bool:
        return self.lower <= x <= self.upper


class Database:
    """Finite multiset of real-valued records with per-dimension bounds.

    Records are rows of an immutable (n, d) float array; duplicates are
    permitted and counted.  Values outside the bounds are rejected at
    construction (the bounds define the record universe, not a filter), and any
    sub-multiset is again a valid database under the same bounds.
    """

    __slots__ = ("values", "bounds")

    def __init__(self, values, bounds: Sequence[ValueBounds] | ValueBounds):
        arr = np.array(values, dtype=float, copy=True)
        if arr.size == 0:
            arr = arr.reshape(0, arr.shape[1] if arr.ndim == 2 else 1)
        if arr.ndim == 1:
            arr = arr.reshape(-1, 1)
        if arr.ndim != 2:
            raise ValueError(f"values must be an (n, d) array, got shape {arr.shape}")
        if isinstance(bounds, ValueBounds):
            bounds = (bounds,)
        bounds = tuple(bounds)
        if len(bounds) != arr.shape[1]:
            raise ValueError(f"{len(bounds)} bounds for {arr.shape[1]} dimensions")
        for j, b in enumerate(bounds):
            col = arr[:, j]
            if col.size and (col.min() < b.lower or col.max() > b.upper):
                bad = int(np.argmax((col < b.lower) | (col > b.upper)))
                raise ValueError(
                    f"value {col[bad]} in row {bad} outside bounds "
                    f"[{b.lower}, {b.upper}] of dimension {j}"
                )
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "bounds", bounds)

    def __setattr__(self, name, value):  # immutable value type
        raise AttributeError("Database is immutable")

    def __len__(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @classmethod
    def empty(cls, bounds: Sequence[ValueBounds] | ValueBounds) -> "Database":
        if isinstance(bounds, ValueBounds):
            bounds = (bounds,)
        return cls(np.empty((0, len(tuple(bounds)))), bounds)

    def records(self) -> list[Record]:
        return [tuple(row) for row in self.values]

    def multiset_key(self) -> tuple[Record, ...]:
        """Canonical key under multiset equality (records sorted lexicographically)."""
        return tuple(sorted(self.records()))

    def column(self) -> np.ndarray:
        """The single column of a 1-dimensional database."""
        if self.dim != 1:
            raise ValueError(f"database is {self.dim}-dimensional")
        return self.values[:, 0]

    def subset(self, mask) -> "Database":
        return Database(self.values[np.asarray(mask, dtype=bool)], self.bounds)

    def add(self, record: Record | float) -> "Database":
        row = np.atleast_1d(np.asarray(record, dtype=float)).reshape(1, -1)
        return Database(np.concatenate([self.values, row]), self.bounds)

    def remove_one(self, record: Record | float) -> "Database":
        """Remove one occurrence of `record` (which must be present)."""
        target = tuple(np.atleast_1d(np.asarray(record, dtype=float)))
        for i, row in enumerate(self.records()):
            if row == target:
                keep = np.ones(len(self), dtype=bool)
                keep[i] = False
                return self.subset(keep)
        raise ValueError(f"record {target} not in database")

    def __eq__(self, other) -> bool:
        if not isinstance(other, Database):
            return NotImplemented
        return self.bounds == other.bounds and self.multiset_key() == other.multiset_key()

    def __hash__(self) -> int:
        return hash((self.bounds, self.multiset_key()))

    def __repr__(self) -> str:
        return f"Database(n={len(self)}, dim={self.dim})"


def _check_compatible(d1: Database, d2: Database) -> None:
    if d1.dim != d2.dim:
        raise ValueError(f"dimension mismatch: {d1.dim} vs {d2.dim}")
    if d1.bounds != d2.bounds:
        raise ValueError("databases do not share bounds")


def symmetric_difference_size(d1: Database, d2: Database) -> int:
    """Size of the multiset symmetric difference; 1 iff the inputs are unbounded neighbors."""
    _check_compatible(d1, d2)
    c1 = Counter(d1.records())
    c2 = Counter(d2.records())
    return sum(abs(c1[r] - c2[r]) for r in set(c1) | set(c2))


def enumerate_unbounded_neighbors(
    d: Database, universe: Iterable[Record | float]
) -> list[Database]:
    """All databases at multiset symmetric difference exactly 1 from `d`.

    One-record deletions of `d` plus one-record additions drawn from the finite
    `universe`, de-duplicated as multisets and returned in a canonical order.
    """
    seen: dict[tuple[Record, ...], Database] = {}
    for rec in set(d.records()):
        nb = d.remove_one(rec)
        seen.setdefault(nb.multiset_key(), nb)
    for rec in universe:
        nb = d.add(rec)
        seen.setdefault(nb.multiset_key(), nb)
    return [seen[k] for k in sorted(seen)]


_MASK64 = (1 << 64) - 1


def _label_entropy(label) -> int:
    """Stable 64-bit digest of a path label (platform-independent)."""
    if isinstance(label, (int, np.integer)):
        data = b"i" + int(label).to_bytes(16, "little", signed=True)
    elif isinstance(label, float):
        data = b"f" + repr(label).encode()
    else:
        data = b"s" + str(label).encode("utf-8")
    return int.from_bytes(hashlib.sha256(data).digest()[:8], "little")


@dataclass(frozen=True)
class RandomStream:
    """Reproducible, hierarchically derivable randomness.

    The same (master_seed, path) always yields an identical draw sequence;
    distinct paths yield statistically independent streams.  Derivation is
    pure, so parallel tasks can each derive their own stream.
    """

    master_seed: int
    path: tuple = ()

    def child(self, *labels) -> "RandomStream":
        return RandomStream(self.master_seed, self.path + tuple(labels))

    def generator(self) -> np.random.Generator:
        """A fresh generator for this stream (same stream => same sequence)."""
        entropy = (self.master_seed & _MASK64,) + tuple(
            _label_entropy(lbl) for lbl in self.path
        )
        return np.random.default_rng(np.random.SeedSequence(entropy))


def as_generator(rng: RandomStream | np.random.Generator | int | None) -> np.random.Generator:
    """Coerce the accepted rng spellings to a numpy Generator."""
    if isinstance(rng, RandomStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        return np.random.default_rng()
    return np.random.default_rng(int(rng))
