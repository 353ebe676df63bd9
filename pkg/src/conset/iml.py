"""Binary gradient boosting between two positions and its explanations.

Model outputs and SHAP values live on the log-odds scale, where the
attributions are exactly additive.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from conset.core import Dataset
from conset.errors import DataError
from conset.trees import RegressionTree, grow_tree

_HESS_FLOOR = 1e-12
_PROB_CLAMP = 1e-6


@dataclass(frozen=True)
class BinaryTask:
    X: np.ndarray
    y: np.ndarray  # 1 = positive category
    feature_names: tuple[str, ...]
    rows: np.ndarray  # indices into the source dataset
    positive: int | None = None
    negative: int | None = None

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def balance(self) -> tuple[int, int]:
        """(positives, negatives)."""
        pos = int(self.y.sum())
        return pos, self.n - pos

    def subset(self, idx) -> BinaryTask:
        return BinaryTask(self.X[idx], self.y[idx], self.feature_names, self.rows[idx],
                          self.positive, self.negative)


def make_binary_task(data: Dataset, positive: int, negative: int) -> BinaryTask:
    """Rows of the two categories; the intercept column is dropped."""
    if positive == negative:
        raise ValueError("positive and negative categories must differ")
    for q in (positive, negative):
        if not 0 <= q < data.K:
            raise ValueError(f"category {q} out of range")
    rows = np.flatnonzero((data.y == positive) | (data.y == negative))
    y = (data.y[rows] == positive).astype(np.float64)
    if y.sum() == 0 or y.sum() == y.size:
        absent = positive if y.sum() == 0 else negative
        raise DataError(f"category {absent} has no observations")
    return BinaryTask(data.X[rows, 1:], y, data.covariate_names[1:], rows, positive, negative)


def log_loss(y, F, weight=None) -> float:
    """Mean logistic loss of log-odds ``F``."""
    losses = np.logaddexp(0.0, F) - y * F
    if weight is None:
        return float(np.mean(losses))
    return float(np.sum(weight * losses) / np.sum(weight))


def error_rate(y, F) -> float:
    return float(np.mean((F > 0) != (y > 0.5)))


@dataclass(frozen=True)
class GbmModel:
    trees: tuple[RegressionTree, ...]
    learning_rate: float
    base_score: float
    feature_names: tuple[str, ...]
    train_loss: tuple[float, ...] = ()
    params: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def decision_function(self, X) -> np.ndarray:
        """Log-odds of the positive class."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        F = np.full(X.shape[0], self.base_score)
        for t in self.trees:
            F += self.learning_rate * t.predict(X)
        return F

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.decision_function(X))

    def used_features(self) -> set[int]:
        out = set()
        for t in self.trees:
            out |= t.used_features()
        return out

    def to_dict(self) -> dict:
        return {
            "model": "gradient_boosting_binary",
            "output": "log_odds",
            "prediction": "base_score + learning_rate * sum(tree outputs)",
            "split_rule": "x[feature] <= threshold goes left",
            "base_score": self.base_score,
            "learning_rate": self.learning_rate,
            "feature_names": list(self.feature_names),
            "params": dict(self.params),
            "train_loss": list(self.train_loss),
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d) -> GbmModel:
        return cls(tuple(RegressionTree.from_dict(t) for t in d["trees"]),
                   float(d["learning_rate"]), float(d["base_score"]),
                   tuple(d["feature_names"]), tuple(d.get("train_loss", ())),
                   dict(d.get("params", {})))

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)


def train_gbm(
    task: BinaryTask,
    n_trees: int = 200,
    max_depth: int = 3,
    learning_rate: float = 0.1,
    min_leaf: int = 5,
    seed: int = 0,
    class_weight: bool = False,
    subsample: float = 1.0,
) -> GbmModel:
    """Stagewise logistic-loss boosting with Newton leaf values.

    Each tree is a least-squares fit to the residuals ``y - sigmoid(F)``;
    a leaf's value is ``sum(w r) / sum(w p (1 - p))``. A leaf whose damped
    step would raise the loss on its rows is halved until it does not, so the
    training loss never increases between stages. ``class_weight`` reweights
    both classes to equal total weight. ``subsample < 1`` draws rows without
    replacement per stage from a generator seeded by ``seed``.
    """
    if not 0 < learning_rate <= 1:
        raise ValueError("learning_rate must lie in (0, 1]")
    if n_trees < 0 or max_depth < 1 or min_leaf < 1:
        raise ValueError("invalid boosting hyperparameters")
    y = task.y
    n = task.n
    if n == 0:
        raise ValueError("empty task")
    pos, neg = task.balance
    if class_weight:
        if pos == 0 or neg == 0:
            raise DataError("class weighting needs both classes")
        weight = np.where(y > 0.5, n / (2.0 * pos), n / (2.0 * neg))
    else:
        weight = np.ones(n)
    rng = np.random.default_rng(seed)

    mean = float(np.sum(weight * y) / np.sum(weight))
    mean = min(max(mean, _PROB_CLAMP), 1.0 - _PROB_CLAMP)
    base = math.log(mean / (1.0 - mean))
    F = np.full(n, base)
    losses = [log_loss(y, F, weight)]
    trees = []
    for _ in range(n_trees):
        prob = expit(F)
        resid = y - prob
        hess = prob * (1.0 - prob)
        if subsample < 1.0:
            rows = np.sort(rng.choice(n, size=max(2 * min_leaf, int(round(subsample * n))),
                                      replace=False))
        else:
            rows = np.arange(n)

        def newton(idx):
            return np.sum(weight[idx] * resid[idx]) / max(np.sum(weight[idx] * hess[idx]), _HESS_FLOOR)

        if np.ptp(resid[rows]) == 0.0:
            tree = RegressionTree.constant(0.0, max_depth)
        else:
            tree = grow_tree(task.X, resid, weight, newton, max_depth=max_depth,
                             min_leaf=min_leaf, rows=rows)
        tree = _safeguard_leaves(tree, task.X, y, F, weight, learning_rate)
        # leafwise sums can still round the total up by an ulp; shrink the whole tree
        for _ in range(61):
            G = F + learning_rate * tree.predict(task.X)
            loss = log_loss(y, G, weight)
            if loss <= losses[-1]:
                break
            tree = _scaled(tree, 0.5)
        else:
            tree, G, loss = _scaled(tree, 0.0), F, losses[-1]
        F = G
        trees.append(tree)
        losses.append(loss)

    return GbmModel(tuple(trees), learning_rate, base, task.feature_names, tuple(losses),
                    {"n_trees": n_trees, "max_depth": max_depth, "learning_rate": learning_rate,
                     "min_leaf": min_leaf, "seed": seed, "class_weight": class_weight,
                     "subsample": subsample})


def _scaled(tree, factor):
    return RegressionTree(tree.feature, tree.threshold, tree.left, tree.right,
                          tree.value * factor, tree.max_depth)


def _safeguard_leaves(tree, X, y, F, weight, lr):
    leaf = tree.apply(X)
    value = tree.value.copy()
    for node in np.unique(leaf):
        idx = leaf == node
        before = np.sum(weight[idx] * (np.logaddexp(0.0, F[idx]) - y[idx] * F[idx]))
        v = value[node]
        for _ in range(60):
            G = F[idx] + lr * v
            after = np.sum(weight[idx] * (np.logaddexp(0.0, G) - y[idx] * G))
            if after <= before:
                break
            v *= 0.5
        else:
            v = 0.0
        value[node] = v
    return RegressionTree(tree.feature, tree.threshold, tree.left, tree.right, value, tree.max_depth)


# --------------------------------------------------------------------------
# SHAP


@dataclass(frozen=True)
class ShapExplanation:
    values: np.ndarray  # (n_rows, n_features) or (n_features,)
    base_value: float
    feature_names: tuple[str, ...] = ()

    def total(self) -> np.ndarray:
        return self.base_value + self.values.sum(axis=-1)


def _shapley_leaf_weights(depth: int):
    """Weights for a leaf game with ``a`` required-from-x and ``c`` required-from-background features."""
    wpos = np.zeros((depth + 1, depth + 1))
    wneg = np.zeros((depth + 1, depth + 1))
    for a in range(depth + 1):
        for c in range(depth + 1 - a):
            if a + c == 0:
                continue
            tot = math.factorial(a + c)
            if a >= 1:
                wpos[a, c] = math.factorial(a - 1) * math.factorial(c) / tot
            if c >= 1:
                wneg[a, c] = math.factorial(a) * math.factorial(c - 1) / tot
    return wpos, wneg


def shap_values(model: GbmModel, x, background) -> ShapExplanation:
    """Interventional SHAP values of the log-odds output.

    The value of a coalition ``C`` is the mean over background rows ``b`` of
    the model at the hybrid point taking ``x`` on ``C`` and ``b`` elsewhere.
    For a single leaf and background row the game is an indicator that every
    path feature satisfied only by ``x`` is in ``C`` and every one satisfied
    only by ``b`` is not; its Shapley values are closed-form, so the sum over
    leaves, trees and background rows is exact.
    """
    X = np.asarray(x, dtype=np.float64)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    B = np.atleast_2d(np.asarray(background, dtype=np.float64))
    p = model.n_features
    if X.shape[1] != p or B.shape[1] != p:
        raise ValueError(f"expected {p} features")
    if B.shape[0] == 0:
        raise ValueError("background must be non-empty")

    phi = np.zeros((X.shape[0], p))
    M = B.shape[0]
    cache = {}
    for tree in model.trees:
        for node, feats, lo, hi in tree.leaf_boxes():
            v = model.learning_rate * tree.value[node]
            if v == 0.0 or feats.size == 0:
                continue
            d = feats.size
            if d not in cache:
                cache[d] = _shapley_leaf_weights(d)
            wpos, wneg = cache[d]
            xo = (X[:, feats] > lo) & (X[:, feats] <= hi)  # R x d
            bo = (B[:, feats] > lo) & (B[:, feats] <= hi)  # M x d
            sx = xo[:, None, :] & ~bo[None, :, :]          # R x M x d
            sb = bo[None, :, :] & ~xo[:, None, :]
            reach = np.all(xo[:, None, :] | bo[None, :, :], axis=2)
            a = sx.sum(axis=2)
            c = sb.sum(axis=2)
            wp = np.where(reach, wpos[a, c], 0.0)
            wn = np.where(reach, wneg[a, c], 0.0)
            contrib = (sx * wp[:, :, None] - sb * wn[:, :, None]).sum(axis=1) / M
            phi[:, feats] += v * contrib
    base = float(np.mean(model.decision_function(B)))
    return ShapExplanation(phi[0] if single else phi, base, model.feature_names)


def exact_shapley_oracle(model, x, background, max_features: int = 12) -> np.ndarray:
    """Shapley values by enumerating all ``2^p`` coalitions (reference only).

    ``model`` is anything with ``decision_function``; the coalition value is
    the same interventional average used by :func:`shap_values`.
    """
    x = np.asarray(x, dtype=np.float64)
    B = np.atleast_2d(np.asarray(background, dtype=np.float64))
    p = x.shape[0]
    if p > max_features:
        raise ValueError(f"{p} features exceed the enumeration limit {max_features}")
    if B.shape[0] == 0 or B.shape[1] != p:
        raise ValueError("background must be non-empty with matching width")
    masks = np.array([[(s >> j) & 1 for j in range(p)] for s in range(1 << p)], dtype=bool)
    hybrid = np.where(masks[:, None, :], x[None, None, :], B[None, :, :])
    v = model.decision_function(hybrid.reshape(-1, p)).reshape(1 << p, B.shape[0]).mean(axis=1)
    size = masks.sum(axis=1)
    weight = np.array([math.factorial(s) * math.factorial(p - 1 - s) / math.factorial(p)
                       for s in range(p)])
    phi = np.zeros(p)
    for j in range(p):
        without = np.flatnonzero(~masks[:, j])
        phi[j] = np.sum(weight[size[without]] * (v[without | (1 << j)] - v[without]))
    return phi


def shap_summary(model: GbmModel, rows, background=None):
    """Per-row SHAP values plus feature values, features ordered by mean |phi|.

    Returns ``(header, table, base_value)``; the table has ``len(rows)`` rows
    and ``2p + 1`` columns: row index, ``p`` SHAP columns, ``p`` feature values.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    background = rows if background is None else background
    exp = shap_values(model, rows, background)
    order = np.argsort(-np.abs(exp.values).mean(axis=0), kind="stable")
    names = [model.feature_names[j] for j in order]
    header = ["row"] + [f"shap:{n}" for n in names] + [f"value:{n}" for n in names]
    table = np.column_stack([np.arange(rows.shape[0]), exp.values[:, order], rows[:, order]])
    return header, table, exp.base_value


# --------------------------------------------------------------------------
# permutation feature importance


@dataclass(frozen=True)
class Importance:
    feature_names: tuple[str, ...]
    mean: np.ndarray
    sd: np.ndarray
    baseline: float
    metric: str


def permutation_importance(
    model: GbmModel,
    task: BinaryTask,
    metric: str = "log-loss",
    n_repeats: int = 10,
    seed: int = 0,
) -> Importance:
    """Increase of ``metric`` when one feature column is permuted."""
    if task.n == 0:
        raise ValueError("empty task")
    score = {"log-loss": log_loss, "error-rate": error_rate}.get(metric)
    if score is None:
        raise ValueError(f"unknown metric {metric!r}")
    rng = np.random.default_rng(seed)
    base = score(task.y, model.decision_function(task.X))
    p = task.X.shape[1]
    diffs = np.zeros((n_repeats, p))
    for r in range(n_repeats):
        for j in range(p):
            Xp = task.X.copy()
            Xp[:, j] = Xp[rng.permutation(task.n), j]
            diffs[r, j] = score(task.y, model.decision_function(Xp)) - base
    sd = diffs.std(axis=0, ddof=1) if n_repeats > 1 else np.zeros(p)
    return Importance(task.feature_names, diffs.mean(axis=0), sd, base, metric)
