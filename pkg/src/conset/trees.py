"""Binary decision trees stored as flat node arrays.

A node ``i`` is internal when ``feature[i] >= 0``; rows with
``x[feature[i]] <= threshold[i]`` go to ``left[i]``, the others to
``right[i]``. Leaves carry ``value[i]``.

Split search maximizes ``S_L^2/W_L + S_R^2/W_R - S^2/W`` with ``S`` the
weighted target sum and ``W`` the weight sum of a side. For a real target
this is the weighted squared-error reduction; for a 0/1 target with unit
weights it is half the Gini impurity decrease.
"""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    max_depth: int | None = None

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Leaf node index reached by every row of ``X``."""
        X = np.atleast_2d(X)
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            r = rows[inner]
            n = node[inner]
            go_left = X[r, f[inner]] <= self.threshold[n]
            node[r] = np.where(go_left, self.left[n], self.right[n])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]

    def used_features(self) -> set[int]:
        return {int(f) for f in self.feature if f >= 0}

    def depth(self) -> int:
        depth = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depth[self.left[i]] = depth[self.right[i]] = depth[i] + 1
        return int(depth.max()) if self.n_nodes else 0

    def leaf_boxes(self):
        """Yield ``(leaf, features, lower, upper)`` for every leaf.

        A row reaches the leaf iff ``lower < x[features] <= upper`` holds
        elementwise; each feature on the path appears once.
        """
        stack = [(0, {})]
        while stack:
            node, box = stack.pop()
            f = int(self.feature[node])
            if f < 0:
                feats = sorted(box)
                lo = np.array([box[j][0] for j in feats], dtype=np.float64)
                hi = np.array([box[j][1] for j in feats], dtype=np.float64)
                yield node, np.array(feats, dtype=np.int64), lo, hi
                continue
            t = float(self.threshold[node])
            lo, hi = box.get(f, (-np.inf, np.inf))
            lbox = dict(box)
            lbox[f] = (lo, min(hi, t))
            rbox = dict(box)
            rbox[f] = (max(lo, t), hi)
            stack.append((int(self.right[node]), rbox))
            stack.append((int(self.left[node]), lbox))

    def to_dict(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "max_depth": self.max_depth,
        }

    @classmethod
    def from_dict(cls, d) -> RegressionTree:
        return cls(
            np.asarray(d["feature"], dtype=np.int64),
            np.asarray(d["threshold"], dtype=np.float64),
            np.asarray(d["left"], dtype=np.int64),
            np.asarray(d["right"], dtype=np.int64),
            np.asarray(d["value"], dtype=np.float64),
            d.get("max_depth"),
        )

    @classmethod
    def constant(cls, value: float = 0.0, max_depth=None) -> RegressionTree:
        return cls(np.array([-1]), np.array([np.nan]), np.array([-1]), np.array([-1]),
                   np.array([float(value)]), max_depth)


def best_split(X, target, weight, idx, features, min_leaf):
    """Best ``(gain, feature, threshold)`` over ``features`` for rows ``idx``.

    Returns ``None`` when no split leaves ``min_leaf`` rows on both sides and
    improves the criterion.
    """
    best = None
    t = target[idx]
    w = weight[idx]
    tw = t * w
    S, W = tw.sum(), w.sum()
    parent = S * S / W
    n = idx.shape[0]
    for f in features:
        x = X[idx, f]
        order = np.argsort(x, kind="stable")
        xs = x[order]
        # candidate cut after position i (0-based), left = first i+1 rows
        valid = xs[:-1] < xs[1:]
        pos = np.arange(1, n)
        valid &= (pos >= min_leaf) & (n - pos >= min_leaf)
        if not valid.any():
            continue
        SL = np.cumsum(tw[order])[:-1]
        WL = np.cumsum(w[order])[:-1]
        WR = W - WL
        ok = valid & (WL > 0) & (WR > 0)
        if not ok.any():
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = SL * SL / WL + (S - SL) ** 2 / WR - parent
        gain = np.where(ok, gain, -np.inf)
        i = int(np.argmax(gain))
        # relative floor keeps ties from rounding noise out
        if gain[i] > 1e-12 * max(abs(parent), 1.0) and (best is None or gain[i] > best[0]):
            best = (float(gain[i]), int(f), 0.5 * (xs[i] + xs[i + 1]))
    return best


def grow_tree(
    X: np.ndarray,
    target: np.ndarray,
    weight: np.ndarray,
    leaf_value: Callable[[np.ndarray], float],
    max_depth: int | None = None,
    min_leaf: int = 1,
    mtry: int | None = None,
    rng: np.random.Generator | None = None,
    rows: np.ndarray | None = None,
) -> RegressionTree:
    """Greedy top-down tree on ``rows`` (default: all rows of ``X``).

    ``mtry`` features are sampled without replacement at every node when
    given (requires ``rng``); otherwise all features are searched.
    """
    p = X.shape[1]
    if rows is None:
        rows = np.arange(X.shape[0])
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node():
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        return len(feature) - 1

    root = new_node()
    stack = [(root, rows, 0)]
    while stack:
        node, idx, depth = stack.pop()
        split = None
        if (max_depth is None or depth < max_depth) and idx.shape[0] >= 2 * min_leaf:
            if mtry is not None and mtry < p:
                feats = np.sort(rng.choice(p, size=mtry, replace=False))
            else:
                feats = range(p)
            split = best_split(X, target, weight, idx, feats, min_leaf)
        if split is None:
            value[node] = float(leaf_value(idx))
            continue
        _, f, thr = split
        go_left = X[idx, f] <= thr
        li, ri = new_node(), new_node()
        feature[node], threshold[node], left[node], right[node] = f, thr, li, ri
        stack.append((ri, idx[~go_left], depth + 1))
        stack.append((li, idx[go_left], depth + 1))

    return RegressionTree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=np.float64),
        max_depth,
    )
