"""Option spaces, consideration sets and the reduced power set.

A consideration set is stored as an integer bitmask over the positions of an
:class:`OptionSpace`. Each admissible set is treated as a category of its own,
so ``{SPD, Green}`` and ``{SPD, Green, Left}`` are unrelated labels.
"""

from __future__ import annotations

from collections import Counter
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field

import numpy as np

from conset.errors import DataError

MAX_OPTIONS = 32
SET_SEPARATOR = "+"


@dataclass(frozen=True)
class OptionSpace:
    labels: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if not labels:
            raise ValueError("option space must contain at least one label")
        if len(set(labels)) != len(labels):
            raise ValueError(f"option labels must be distinct: {labels}")
        if len(labels) > MAX_OPTIONS:
            raise ValueError(f"at most {MAX_OPTIONS} options supported, got {len(labels)}")
        for label in labels:
            if not label or SET_SEPARATOR in label or "," in label:
                raise ValueError(f"invalid option label {label!r}")

    @property
    def m(self) -> int:
        return len(self.labels)

    def position(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(label) from None


@dataclass(frozen=True, order=True)
class ConsiderationSet:
    mask: int

    def __post_init__(self):
        if self.mask <= 0:
            raise ValueError("consideration set must be non-empty")

    def __len__(self) -> int:
        return bin(self.mask).count("1")

    @property
    def is_singleton(self) -> bool:
        return self.mask & (self.mask - 1) == 0

    def positions(self) -> list[int]:
        return [i for i in range(self.mask.bit_length()) if self.mask >> i & 1]

    def valid_for(self, options: OptionSpace) -> bool:
        return self.mask >> options.m == 0

    @classmethod
    def from_labels(cls, labels: Iterable[str], options: OptionSpace) -> ConsiderationSet:
        mask = 0
        for label in labels:
            bit = 1 << options.position(label)
            if mask & bit:
                raise ValueError(f"duplicate option {label!r}")
            mask |= bit
        return cls(mask)

    @classmethod
    def singleton(cls, position: int) -> ConsiderationSet:
        return cls(1 << position)

    def labels(self, options: OptionSpace) -> list[str]:
        return [options.labels[i] for i in self.positions()]

    def literal(self, options: OptionSpace) -> str:
        """Text form, e.g. ``"SPD+Green"`` (labels in option-space order)."""
        return SET_SEPARATOR.join(self.labels(options))


def parse_set_literal(text: str, options: OptionSpace) -> ConsiderationSet:
    """Parse a ``+``-joined set literal, matching labels case-sensitively.

    Raises ``ValueError`` for empty literals, unknown tokens and duplicates.
    """
    text = text.strip()
    if not text:
        raise ValueError("empty set literal")
    tokens = [t.strip() for t in text.split(SET_SEPARATOR)]
    mask = 0
    for token in tokens:
        if token not in options.labels:
            raise ValueError(f"unknown option {token!r}")
        bit = 1 << options.labels.index(token)
        if mask & bit:
            raise ValueError(f"duplicate option {token!r}")
        mask |= bit
    return ConsiderationSet(mask)


def _canonical_key(s: ConsiderationSet):
    # singletons first (in option order), then by cardinality, then mask value
    return (len(s), s.mask)


@dataclass(frozen=True)
class ReducedPowerSet:
    """Admissible family of consideration sets, each mapped to a dense id."""

    options: OptionSpace
    categories: tuple[ConsiderationSet, ...]
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        cats = tuple(self.categories)
        object.__setattr__(self, "categories", cats)
        index = {c.mask: j for j, c in enumerate(cats)}
        if len(index) != len(cats):
            raise ValueError("duplicate categories")
        for c in cats:
            if not c.valid_for(self.options):
                raise ValueError(f"category mask {c.mask} outside option space")
        for q in range(self.options.m):
            if (1 << q) not in index:
                raise ValueError(f"singleton {{{self.options.labels[q]}}} missing")
        object.__setattr__(self, "index", index)

    @property
    def K(self) -> int:
        return len(self.categories)

    def __len__(self) -> int:
        return len(self.categories)

    def literals(self) -> list[str]:
        return [c.literal(self.options) for c in self.categories]

    def encode(self, s: ConsiderationSet) -> int | None:
        return encode_set(s, self)

    def singleton_mask(self) -> np.ndarray:
        return np.array([c.is_singleton for c in self.categories])


def build_reduced_power_set(
    options: OptionSpace,
    observed_sets: Sequence[ConsiderationSet],
    min_count: int = 1,
) -> ReducedPowerSet:
    """All singletons plus every non-singleton set seen at least ``min_count`` times."""
    if min_count < 0:
        raise ValueError("min_count must be non-negative")
    for i, s in enumerate(observed_sets):
        if not s.valid_for(options):
            raise DataError(f"observed set {i} has invalid mask {s.mask}", rows=[i])
    freq = Counter(s.mask for s in observed_sets if not s.is_singleton)
    kept = [ConsiderationSet(mask) for mask, c in freq.items() if c >= min_count]
    if min_count == 0:
        # every admissible non-singleton set passes the threshold
        if options.m > 16:
            raise ValueError("min_count=0 enumerates the full power set; need m <= 16")
        kept = [ConsiderationSet(mask) for mask in range(1, 1 << options.m)
                if mask & (mask - 1)]
    singles = [ConsiderationSet.singleton(q) for q in range(options.m)]
    return ReducedPowerSet(options, tuple(singles + sorted(kept, key=_canonical_key)))


def encode_set(s: ConsiderationSet, rps: ReducedPowerSet) -> int | None:
    """Dense category id, or ``None`` when the set is not in the family."""
    return rps.index.get(s.mask)


@dataclass(frozen=True)
class CountStatistic:
    counts: np.ndarray
    n: int

    def __post_init__(self):
        if int(np.sum(self.counts)) != self.n:
            raise ValueError("counts must sum to n")


@dataclass(frozen=True)
class Dataset:
    """Category ids ``y`` (length n) and design matrix ``X`` (n x p, intercept first)."""

    rps: ReducedPowerSet
    y: np.ndarray
    X: np.ndarray
    covariate_names: tuple[str, ...]

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.int64)
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            X = X.reshape(len(y), -1)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y disagree on the number of observations")
        if X.shape[1] != len(self.covariate_names):
            raise ValueError("covariate_names must match the columns of X")
        if y.size and (y.min() < 0 or y.max() >= self.rps.K):
            raise ValueError("category id out of range")
        if not np.all(np.isfinite(X)):
            raise ValueError("covariates must be finite")
        if X.shape[0] and not np.all(X[:, 0] == 1.0):
            raise ValueError("first design column must be the intercept (all ones)")

    @property
    def options(self) -> OptionSpace:
        return self.rps.options

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def K(self) -> int:
        return self.rps.K

    def subset(self, idx) -> Dataset:
        return Dataset(self.rps, self.y[idx], self.X[idx], self.covariate_names)

    def undecided_share(self) -> float:
        """Fraction of observations holding a non-singleton set."""
        if self.n == 0:
            return 0.0
        return float(np.mean(~self.rps.singleton_mask()[self.y]))


def count_statistics(data: Dataset) -> CountStatistic:
    counts = np.bincount(data.y, minlength=data.K).astype(np.int64)
    return CountStatistic(counts, data.n)
