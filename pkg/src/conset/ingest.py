"""Survey CSV ingestion and covariate binarization.

Input files are UTF-8 CSVs with a header; the first column,
``consideration_set``, holds ``+``-joined set literals. Raw covariates are
turned into a design matrix by a :class:`BinarizationScheme`, usually loaded
from a JSON file of the form::

    {"region": {"type": "indicator", "one_levels": ["West"], "name": "west"},
     "age": {"type": "numeric"}}
"""

from __future__ import annotations

import csv
import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np

from conset.core import (
    ConsiderationSet,
    Dataset,
    OptionSpace,
    ReducedPowerSet,
    build_reduced_power_set,
    encode_set,
    parse_set_literal,
)
from conset.errors import DataError

SET_COLUMN = "consideration_set"


@dataclass(frozen=True)
class RawSurveyTable:
    options: OptionSpace
    header: tuple[str, ...]
    sets: tuple[ConsiderationSet, ...]
    rows: tuple[tuple[str, ...], ...]  # raw covariate values, header[1:] order

    @property
    def covariates(self) -> tuple[str, ...]:
        return self.header[1:]

    def __len__(self):
        return len(self.sets)

    def column(self, name: str) -> list[str]:
        j = self.covariates.index(name)
        return [r[j] for r in self.rows]


@dataclass(frozen=True)
class IndicatorColumn:
    covariate: str
    one_levels: frozenset
    name: str
    zero_levels: frozenset | None = None  # None: every other level maps to 0

    def encode(self, level: str) -> float | None:
        if level in self.one_levels:
            return 1.0
        if self.zero_levels is None or level in self.zero_levels:
            return 0.0
        return None


@dataclass(frozen=True)
class NumericColumn:
    covariate: str
    name: str

    def encode(self, level: str) -> float | None:
        try:
            v = float(level)
        except ValueError:
            return None
        return v if math.isfinite(v) else None


@dataclass(frozen=True)
class BinarizationScheme:
    columns: tuple

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    @classmethod
    def from_dict(cls, spec: Mapping) -> BinarizationScheme:
        cols = []
        for cov, entry in spec.items():
            kind = entry.get("type")
            if kind == "indicator":
                one = entry.get("one_levels")
                if not one:
                    raise ValueError(f"indicator for {cov!r} needs one_levels")
                zero = entry.get("zero_levels")
                cols.append(IndicatorColumn(
                    cov, frozenset(map(str, one)), entry.get("name", cov),
                    None if zero is None else frozenset(map(str, zero)),
                ))
            elif kind == "numeric":
                cols.append(NumericColumn(cov, entry.get("name", cov)))
            else:
                raise ValueError(f"unknown column type {kind!r} for {cov!r}")
        names = [c.name for c in cols]
        if len(set(names)) != len(names) or "(Intercept)" in names:
            raise ValueError("generated column names must be distinct")
        return cls(tuple(cols))

    def to_dict(self) -> dict:
        out = {}
        for c in self.columns:
            if isinstance(c, IndicatorColumn):
                d = {"type": "indicator", "one_levels": sorted(c.one_levels), "name": c.name}
                if c.zero_levels is not None:
                    d["zero_levels"] = sorted(c.zero_levels)
            else:
                d = {"type": "numeric", "name": c.name}
            out[c.covariate] = d
        return out

    @classmethod
    def load(cls, path) -> BinarizationScheme:
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def parse_survey_csv(path, options: OptionSpace) -> RawSurveyTable:
    """Read and validate a survey CSV.

    Row numbers in error messages are 1-based file lines (header = line 1).
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = tuple(h.strip() for h in next(reader))
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        return _parse_rows(header, reader, options, str(path))


def parse_survey_rows(header: Sequence[str], rows, options: OptionSpace) -> RawSurveyTable:
    return _parse_rows(tuple(header), iter(rows), options, "<rows>")


def _parse_rows(header, reader, options, source) -> RawSurveyTable:
    if not header or header[0] != SET_COLUMN:
        raise DataError(f"{source}: first column must be {SET_COLUMN!r}")
    if len(set(header)) != len(header):
        raise DataError(f"{source}: duplicate header names")
    sets, rows = [], []
    for i, row in enumerate(reader):
        line = i + 2
        if not row:
            continue
        if len(row) != len(header):
            raise DataError(
                f"{source}: line {line} has {len(row)} fields, expected {len(header)}", rows=[i])
        try:
            s = parse_set_literal(row[0], options)
        except ValueError as exc:
            raise DataError(f"{source}: line {line}: {exc}", rows=[i]) from None
        sets.append(s)
        rows.append(tuple(v.strip() for v in row[1:]))
    return RawSurveyTable(options, header, tuple(sets), tuple(rows))


def binarize(table: RawSurveyTable, scheme: BinarizationScheme) -> np.ndarray:
    """Design matrix with an intercept column prepended."""
    pos = {name: j for j, name in enumerate(table.covariates)}
    for col in scheme.columns:
        if col.covariate not in pos:
            raise DataError(f"scheme references unknown covariate {col.covariate!r}")
    X = np.ones((len(table), len(scheme.columns) + 1))
    for j, col in enumerate(scheme.columns, start=1):
        k = pos[col.covariate]
        cache = {}
        for i, row in enumerate(table.rows):
            level = row[k]
            if level not in cache:
                cache[level] = col.encode(level) if level != "" else None
            v = cache[level]
            if v is None:
                raise DataError(
                    f"covariate {col.covariate!r}: level {level!r} in row {i} "
                    "not covered by scheme", rows=[i])
            X[i, j] = v
    return X


@dataclass(frozen=True)
class DropReport:
    dropped_rows: tuple[int, ...]
    kept_rows: tuple[int, ...]

    @property
    def drops(self) -> int:
        return len(self.dropped_rows)


def assemble_dataset(
    table: RawSurveyTable,
    scheme: BinarizationScheme,
    min_count: int = 1,
    drop_policy: Literal["drop", "error"] = "drop",
    rps: ReducedPowerSet | None = None,
) -> tuple[Dataset, DropReport]:
    """Restrict to the reduced power set and build a :class:`Dataset`.

    The family is ``rps`` when supplied, otherwise it is built from the
    observed sets with ``min_count``. Rows whose set falls outside the family
    are dropped (and reported) or, with ``drop_policy="error"``, raise a
    :class:`DataError` listing them.
    """
    if drop_policy not in ("drop", "error"):
        raise ValueError(f"unknown drop_policy {drop_policy!r}")
    if rps is None:
        rps = build_reduced_power_set(table.options, table.sets, min_count)
    elif rps.options != table.options:
        raise ValueError("rps and table use different option spaces")
    codes = [encode_set(s, rps) for s in table.sets]
    dropped = tuple(i for i, c in enumerate(codes) if c is None)
    if dropped and drop_policy == "error":
        raise DataError(
            f"{len(dropped)} rows hold sets outside the reduced power set: "
            f"{list(dropped)}", rows=dropped)
    kept = tuple(i for i, c in enumerate(codes) if c is not None)
    X = binarize(table, scheme)
    data = Dataset(
        rps,
        np.array([codes[i] for i in kept], dtype=np.int64),
        X[list(kept)] if kept else np.ones((0, X.shape[1])),
        ("(Intercept)",) + scheme.names,
    )
    return data, DropReport(dropped, kept)


def write_survey_csv(path, options: OptionSpace, sets, header, rows) -> None:
    """Write sets plus raw covariate values in the format read back by :func:`parse_survey_csv`."""
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([SET_COLUMN, *header])
        for s, row in zip(sets, rows):
            w.writerow([s.literal(options), *row])
