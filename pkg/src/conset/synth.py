"""Synthetic consideration-set surveys with known ground truth.

Two generators are provided:

* :func:`generate` draws categories from a multinomial logit with a known
  coefficient matrix (for estimator recovery checks);
* :func:`eba_generate` forms each consideration set by elimination by aspects
  (for realistic end-to-end pipelines).

Randomness is portable. Row ``i`` of a draw with ``w`` uniforms per row uses
Philox4x64-10 with key ``(seed, 0)`` on the counter blocks ``(c, 0, 0, 0)`` for
``c = i*W/4 + 1 .. (i+1)*W/4``, ``W`` being the row width rounded up to a
multiple of 4. Each block yields four words in order, and a word ``r`` becomes
the double ``(r >> 11) * 2**-53``. Generating rows in chunks therefore gives
the same data as generating them in one pass.
"""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field

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
from conset.ingest import BinarizationScheme, RawSurveyTable

_U53 = 2.0 ** -53


def row_uniforms(seed: int, start: int, stop: int, width: int) -> np.ndarray:
    """Uniforms in [0, 1) for rows ``start..stop-1``, shape ``(stop-start, width)``."""
    if width < 1 or stop < start:
        raise ValueError("bad uniform block request")
    w4 = -(-width // 4) * 4
    bitgen = np.random.Philox(key=int(seed), counter=start * (w4 // 4))
    raw = bitgen.random_raw((stop - start) * w4).reshape(stop - start, w4)
    return (raw[:, :width] >> np.uint64(11)).astype(np.float64) * _U53


@dataclass(frozen=True)
class CovariateSpec:
    """One raw covariate and the binary design column derived from it.

    ``kind="bernoulli"`` emits raw levels ``"1"``/``"0"`` with ``P("1") = p``.
    ``kind="categorical"`` emits one of ``levels`` with ``probs``; its design
    column is 1 for levels in ``one_levels``.
    """

    name: str
    kind: str = "bernoulli"
    p: float = 0.5
    levels: tuple = ()
    probs: tuple = ()
    one_levels: tuple = ()
    column: str | None = None

    def __post_init__(self):
        if self.kind == "bernoulli":
            if not 0.0 <= self.p <= 1.0:
                raise ValueError(f"{self.name}: p must lie in [0, 1]")
        elif self.kind == "categorical":
            probs = np.asarray(self.probs, dtype=np.float64)
            if len(self.levels) != probs.size or probs.size == 0:
                raise ValueError(f"{self.name}: levels and probs must match")
            if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
                raise ValueError(f"{self.name}: probs must be a distribution")
            if not set(self.one_levels) <= set(self.levels):
                raise ValueError(f"{self.name}: one_levels must be levels")
        else:
            raise ValueError(f"{self.name}: unknown covariate kind {self.kind!r}")

    @property
    def design_name(self) -> str:
        return self.column or self.name

    def draw(self, u: np.ndarray) -> tuple[list[str], np.ndarray]:
        """Raw levels and design values from a vector of uniforms."""
        if self.kind == "bernoulli":
            x = (u < self.p).astype(np.float64)
            return ["1" if v else "0" for v in x], x
        cum = np.cumsum(self.probs)
        idx = np.minimum(np.searchsorted(cum, u * cum[-1], side="right"), len(self.levels) - 1)
        raw = [self.levels[k] for k in idx]
        one = np.array([lv in self.one_levels for lv in self.levels])
        return raw, one[idx].astype(np.float64)

    def scheme_entry(self) -> dict:
        if self.kind == "bernoulli":
            return {"type": "indicator", "one_levels": ["1"], "zero_levels": ["0"],
                    "name": self.design_name}
        return {"type": "indicator", "one_levels": list(self.one_levels),
                "zero_levels": [lv for lv in self.levels if lv not in self.one_levels],
                "name": self.design_name}

    @classmethod
    def from_dict(cls, d: Mapping) -> CovariateSpec:
        kind = d.get("type", d.get("kind", "bernoulli"))
        return cls(
            name=d["name"], kind=kind, p=float(d.get("p", 0.5)),
            levels=tuple(d.get("levels", ())), probs=tuple(d.get("probs", ())),
            one_levels=tuple(d.get("one_levels", ())), column=d.get("column"),
        )

    def to_dict(self) -> dict:
        if self.kind == "bernoulli":
            d = {"name": self.name, "type": "bernoulli", "p": self.p}
        else:
            d = {"name": self.name, "type": "categorical", "levels": list(self.levels),
                 "probs": list(self.probs), "one_levels": list(self.one_levels)}
        if self.column:
            d["column"] = self.column
        return d


def scheme_for(covariates: Sequence[CovariateSpec]) -> BinarizationScheme:
    return BinarizationScheme.from_dict({c.name: c.scheme_entry() for c in covariates})


def _draw_covariates(covariates, u):
    raw_cols, X = [], np.ones((u.shape[0], len(covariates) + 1))
    for j, c in enumerate(covariates):
        raw, x = c.draw(u[:, j])
        raw_cols.append(raw)
        X[:, j + 1] = x
    rows = list(zip(*raw_cols)) if raw_cols else [() for _ in range(u.shape[0])]
    return rows, X


@dataclass(frozen=True)
class SyntheticSurvey:
    """Output of a generator: the raw table plus its ground-truth design."""

    table: RawSurveyTable
    X: np.ndarray
    covariates: tuple[CovariateSpec, ...]

    @property
    def scheme(self) -> BinarizationScheme:
        return scheme_for(self.covariates)

    def dataset(self, rps: ReducedPowerSet | None = None) -> Dataset:
        """Dataset over ``rps`` (default: every observed set); rows outside are dropped."""
        if rps is None:
            rps = build_reduced_power_set(self.table.options, self.table.sets, 1)
        codes = [encode_set(s, rps) for s in self.table.sets]
        keep = [i for i, c in enumerate(codes) if c is not None]
        return Dataset(rps, np.array([codes[i] for i in keep], dtype=np.int64),
                       self.X[keep].reshape(len(keep), self.X.shape[1]),
                       ("(Intercept)",) + tuple(c.design_name for c in self.covariates))


# --------------------------------------------------------------------------
# logit-faithful generator


@dataclass(frozen=True)
class GenerativeSpec:
    rps: ReducedPowerSet
    true_beta: np.ndarray  # K x p, columns summing to zero
    covariates: tuple[CovariateSpec, ...]
    n: int
    seed: int = 0

    def __post_init__(self):
        beta = np.asarray(self.true_beta, dtype=np.float64)
        object.__setattr__(self, "true_beta", beta)
        object.__setattr__(self, "covariates", tuple(self.covariates))
        if beta.shape != (self.rps.K, len(self.covariates) + 1):
            raise ValueError(f"true_beta must be {self.rps.K} x {len(self.covariates) + 1}")
        if not np.all(np.isfinite(beta)):
            raise ValueError("true_beta must be finite")
        if np.max(np.abs(beta.sum(axis=0))) > 1e-8:
            raise ValueError("true_beta columns must sum to zero")
        if self.n < 0 or self.seed < 0:
            raise ValueError("n and seed must be non-negative")

    @property
    def options(self) -> OptionSpace:
        return self.rps.options

    @classmethod
    def from_dict(cls, d: Mapping) -> GenerativeSpec:
        options = OptionSpace(tuple(d["options"]))
        sets = [parse_set_literal(s, options) for s in d.get("sets", [])]
        rps = build_reduced_power_set(options, sets, 1)
        covs = tuple(CovariateSpec.from_dict(c) for c in d.get("covariates", []))
        beta = np.asarray(d["true_beta"], dtype=np.float64)
        if d.get("center", False):
            beta = beta - beta.mean(axis=0)
        return cls(rps, beta, covs, int(d["n"]), int(d.get("seed", 0)))

    def to_dict(self) -> dict:
        return {
            "kind": "logit",
            "options": list(self.options.labels),
            "sets": [c.literal(self.options) for c in self.rps.categories if not c.is_singleton],
            "covariates": [c.to_dict() for c in self.covariates],
            "true_beta": self.true_beta.tolist(),
            "n": self.n,
            "seed": self.seed,
        }


def simulate_logit(spec: GenerativeSpec, start: int = 0, stop: int | None = None) -> SyntheticSurvey:
    stop = spec.n if stop is None else stop
    ncov = len(spec.covariates)
    u = row_uniforms(spec.seed, start, stop, ncov + 1)
    rows, X = _draw_covariates(spec.covariates, u)
    eta = X @ spec.true_beta.T
    P = np.exp(eta - eta.max(axis=1, keepdims=True))
    cum = np.cumsum(P, axis=1)
    target = u[:, ncov] * cum[:, -1]
    cat = np.minimum((cum <= target[:, None]).sum(axis=1), spec.rps.K - 1)
    sets = tuple(spec.rps.categories[q] for q in cat)
    table = RawSurveyTable(spec.options, ("consideration_set",) + tuple(c.name for c in spec.covariates),
                           sets, tuple(rows))
    return SyntheticSurvey(table, X, spec.covariates)


def generate(spec: GenerativeSpec) -> Dataset:
    """Draw ``spec.n`` observations from the multinomial logit of ``spec``."""
    return simulate_logit(spec).dataset(spec.rps)


# --------------------------------------------------------------------------
# elimination by aspects


@dataclass(frozen=True)
class Aspect:
    """An attribute held by ``members``; its selection weight is ``exp(intercept + x . weights)``."""

    name: str
    members: int
    intercept: float = 0.0
    weights: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class LinearScore:
    intercept: float = 0.0
    weights: Mapping[str, float] = field(default_factory=dict)

    def evaluate(self, X: np.ndarray, names: Sequence[str]) -> np.ndarray:
        out = np.full(X.shape[0], float(self.intercept))
        for k, w in self.weights.items():
            out += w * X[:, list(names).index(k)]
        return out

    @classmethod
    def from_dict(cls, d) -> LinearScore:
        if d is None:
            return cls()
        if isinstance(d, (int, float)):
            return cls(float(d))
        return cls(float(d.get("intercept", 0.0)), dict(d.get("weights", {})))

    def to_dict(self) -> dict:
        return {"intercept": self.intercept, "weights": dict(self.weights)}


@dataclass(frozen=True)
class EbaSpec:
    """Elimination-by-aspects survey model.

    Each respondent repeatedly picks an unused aspect (probability proportional
    to its weight) and discards options lacking it. After every screen the
    respondent keeps deliberating with probability ``sigmoid(continuation)``;
    otherwise the survivors are the reported consideration set. A screen that
    would discard every survivor instead leaves only the survivor of highest
    utility (utility score plus logistic noise).
    """

    options: OptionSpace
    aspects: tuple[Aspect, ...]
    covariates: tuple[CovariateSpec, ...]
    n: int
    seed: int = 0
    continuation: LinearScore = LinearScore(50.0)
    utilities: tuple[LinearScore, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "aspects", tuple(self.aspects))
        object.__setattr__(self, "covariates", tuple(self.covariates))
        full = (1 << self.options.m) - 1
        for a in self.aspects:
            if a.members <= 0 or a.members & ~full:
                raise ValueError(f"aspect {a.name!r} has invalid members")
        if self.utilities is not None and len(self.utilities) != self.options.m:
            raise ValueError("need one utility score per option")
        if self.n < 0 or self.seed < 0:
            raise ValueError("n and seed must be non-negative")

    @property
    def design_names(self) -> tuple[str, ...]:
        return tuple(c.design_name for c in self.covariates)

    @classmethod
    def from_dict(cls, d: Mapping) -> EbaSpec:
        options = OptionSpace(tuple(d["options"]))
        aspects = tuple(
            Aspect(a["name"], ConsiderationSet.from_labels(a["members"], options).mask,
                   float(a.get("intercept", 0.0)), dict(a.get("weights", {})))
            for a in d["aspects"]
        )
        covs = tuple(CovariateSpec.from_dict(c) for c in d.get("covariates", []))
        utils = d.get("utilities")
        if utils is not None:
            utils = tuple(LinearScore.from_dict(utils.get(lab)) for lab in options.labels)
        spec = cls(options, aspects, covs, int(d["n"]), int(d.get("seed", 0)),
                   LinearScore.from_dict(d.get("continuation", 50.0)), utils)
        names = spec.design_names
        for a in aspects:
            for k in a.weights:
                if k not in names:
                    raise ValueError(f"aspect {a.name!r} weights unknown covariate {k!r}")
        return spec

    def to_dict(self) -> dict:
        d = {
            "kind": "eba",
            "options": list(self.options.labels),
            "covariates": [c.to_dict() for c in self.covariates],
            "aspects": [
                {"name": a.name, "members": ConsiderationSet(a.members).labels(self.options),
                 "intercept": a.intercept, "weights": dict(a.weights)}
                for a in self.aspects
            ],
            "continuation": self.continuation.to_dict(),
            "n": self.n,
            "seed": self.seed,
        }
        if self.utilities is not None:
            d["utilities"] = {lab: u.to_dict() for lab, u in zip(self.options.labels, self.utilities)}
        return d


def _row_width(spec: EbaSpec) -> int:
    # covariates | utility noise per option | (aspect pick, continue) per step
    return len(spec.covariates) + spec.options.m + 2 * len(spec.aspects)


def simulate_eba(spec: EbaSpec, start: int = 0, stop: int | None = None) -> SyntheticSurvey:
    stop = spec.n if stop is None else stop
    n, m, A, ncov = stop - start, spec.options.m, len(spec.aspects), len(spec.covariates)
    u = row_uniforms(spec.seed, start, stop, _row_width(spec))
    rows, X = _draw_covariates(spec.covariates, u)
    names = ("(Intercept)",) + spec.design_names

    noise = u[:, ncov:ncov + m]
    noise = np.log(np.maximum(noise, _U53)) - np.log1p(-noise)  # logistic
    if spec.utilities is None:
        util = noise
    else:
        util = np.column_stack([s.evaluate(X, names) for s in spec.utilities]) + noise

    logw = np.column_stack([
        LinearScore(a.intercept, a.weights).evaluate(X, names) for a in spec.aspects
    ]) if A else np.zeros((n, 0))
    members = np.array([a.members for a in spec.aspects], dtype=np.int64)
    p_cont = 1.0 / (1.0 + np.exp(-spec.continuation.evaluate(X, names)))
    bits = 1 << np.arange(m, dtype=np.int64)

    surv = np.full(n, (1 << m) - 1, dtype=np.int64)
    active = np.ones(n, dtype=bool)
    used = np.zeros((n, A), dtype=bool)
    base = ncov + m
    for step in range(A):
        active &= (surv & (surv - 1)) != 0  # singletons are final
        if not active.any():
            break
        w = np.where(used, 0.0, np.exp(logw - logw.max(axis=1, keepdims=True)))
        cum = np.cumsum(w, axis=1)
        pick = np.minimum((cum <= (u[:, base + 2 * step] * cum[:, -1])[:, None]).sum(axis=1), A - 1)
        rows_a = np.flatnonzero(active)
        a_idx = pick[rows_a]
        used[rows_a, a_idx] = True
        new = surv[rows_a] & members[a_idx]
        empty = new == 0
        if empty.any():
            r = rows_a[empty]
            inset = (surv[r][:, None] & bits[None, :]) != 0
            best = np.argmax(np.where(inset, util[r], -np.inf), axis=1)
            new[empty] = bits[best]
        surv[rows_a] = new
        stop_now = u[rows_a, base + 2 * step + 1] >= p_cont[rows_a]
        active[rows_a[stop_now | empty]] = False

    sets = tuple(ConsiderationSet(int(s)) for s in surv)
    table = RawSurveyTable(spec.options, ("consideration_set",) + tuple(c.name for c in spec.covariates),
                           sets, tuple(rows))
    return SyntheticSurvey(table, X, spec.covariates)


def eba_generate(
    options: OptionSpace,
    aspect_weights: Sequence[Aspect],
    covariate_spec: Sequence[CovariateSpec],
    n: int,
    seed: int,
    continuation: LinearScore | float = 50.0,
    utilities=None,
    rps: ReducedPowerSet | None = None,
) -> Dataset:
    """Elimination-by-aspects survey as a :class:`Dataset` (see :class:`EbaSpec`)."""
    if not isinstance(continuation, LinearScore):
        continuation = LinearScore(float(continuation))
    spec = EbaSpec(options, tuple(aspect_weights), tuple(covariate_spec), n, seed,
                   continuation, utilities)
    return simulate_eba(spec).dataset(rps)


def undecided_share(survey: SyntheticSurvey) -> float:
    sets = survey.table.sets
    return sum(not s.is_singleton for s in sets) / max(len(sets), 1)


def calibrate_continuation(spec: EbaSpec, target: float, grid=None) -> tuple[float, float]:
    """Grid search over the continuation intercept for a target undecided share.

    Returns ``(intercept, achieved_share)`` closest to ``target``.
    """
    grid = np.linspace(-4.0, 6.0, 101) if grid is None else grid
    best = None
    for c in grid:
        trial = EbaSpec(spec.options, spec.aspects, spec.covariates, spec.n, spec.seed,
                        LinearScore(float(c), spec.continuation.weights), spec.utilities)
        share = undecided_share(simulate_eba(trial))
        if best is None or abs(share - target) < abs(best[1] - target):
            best = (float(c), share)
    return best


def load_spec(source) -> GenerativeSpec | EbaSpec:
    """Read a generator spec from a JSON path or dict; ``kind`` selects the generator."""
    if isinstance(source, Mapping):
        d = source
    else:
        with open(source, encoding="utf-8") as fh:
            d = json.load(fh)
    kind = d.get("kind", "logit")
    if kind == "logit":
        return GenerativeSpec.from_dict(d)
    if kind == "eba":
        return EbaSpec.from_dict(d)
    raise ValueError(f"unknown generator kind {kind!r}")


def simulate(spec) -> SyntheticSurvey:
    if isinstance(spec, EbaSpec):
        return simulate_eba(spec)
    return simulate_logit(spec)


def builtin_spec_path(name: str):
    """Shipped generator spec by name (``eba_default``, ``logit_recovery``), or ``None``."""
    from importlib.resources import files
    path = files("conset") / "configs" / f"{name}.json"
    return path if path.is_file() else None


def default_eba_spec_path():
    return builtin_spec_path("eba_default")
