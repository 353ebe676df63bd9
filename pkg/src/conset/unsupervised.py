"""Random-forest dissimilarity, k-medoids clustering and position profiles.

The forest learns to tell the observed covariate rows apart from a synthetic
copy whose columns are resampled independently from their marginals. Rows
that often share a terminal node are similar; the dissimilarity is
``sqrt(1 - proximity)``. Only covariates enter the forest; positions are
looked at afterwards, cluster by cluster.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.special import comb

from conset.core import Dataset
from conset.trees import grow_tree


def synthetic_contrast(rows, seed=0) -> tuple[np.ndarray, np.ndarray]:
    """Stack ``rows`` on a marginal-resampled copy; labels 1 = original, 0 = synthetic."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise ValueError("need a matrix with at least two rows")
    rng = np.random.default_rng(seed)
    n, p = rows.shape
    synth = np.empty_like(rows)
    for j in range(p):
        synth[:, j] = rows[rng.integers(0, n, size=n), j]
    Z = np.vstack([rows, synth])
    labels = np.concatenate([np.ones(n), np.zeros(n)])
    return Z, labels


@dataclass(frozen=True)
class ProximityMatrix:
    matrix: np.ndarray
    n_trees: int

    def dissimilarity(self) -> np.ndarray:
        return np.sqrt(np.clip(1.0 - self.matrix, 0.0, 1.0))


def proximity_forest(
    rows,
    n_trees: int = 500,
    max_depth: int | None = None,
    mtry: int | None = None,
    seed: int = 0,
    threads: int | None = None,
    min_leaf: int = 1,
) -> ProximityMatrix:
    """Unsupervised random-forest proximities between the rows of ``rows``.

    Trees are Gini classification trees (original vs synthetic) grown on
    bootstrap samples with ``mtry`` candidate features per split (default
    ``ceil(sqrt(p))``). Tree ``t`` draws from ``default_rng([seed, t])``, so
    results do not depend on ``threads``.
    """
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise ValueError("need a matrix with at least two rows")
    if n_trees < 1:
        raise ValueError("n_trees must be positive")
    n, p = rows.shape
    mtry = math.ceil(math.sqrt(p)) if mtry is None else int(mtry)
    if not 1 <= mtry <= p:
        raise ValueError("mtry must lie in 1..p")
    Z, labels = synthetic_contrast(rows, seed)
    weight = np.ones(Z.shape[0])

    def one_tree(t):
        rng = np.random.default_rng([seed, t])
        boot = np.sort(rng.integers(0, Z.shape[0], size=Z.shape[0]))
        tree = grow_tree(Z, labels, weight, lambda idx: labels[idx].mean(),
                         max_depth=max_depth, min_leaf=min_leaf, mtry=mtry, rng=rng, rows=boot)
        return tree.apply(rows)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        leaves = list(pool.map(one_tree, range(n_trees)))

    # one-hot (row, tree-leaf) incidence; co-occurrence counts = A A^T
    cols, offset = [], 0
    for leaf in leaves:
        _, code = np.unique(leaf, return_inverse=True)
        cols.append(code.reshape(-1) + offset)
        offset += int(code.max()) + 1
    A = sparse.csr_matrix(
        (np.ones(n * n_trees), (np.tile(np.arange(n), n_trees), np.concatenate(cols))),
        shape=(n, offset),
    )
    prox = (A @ A.T).toarray() / n_trees
    prox = 0.5 * (prox + prox.T)
    np.fill_diagonal(prox, 1.0)
    return ProximityMatrix(prox, n_trees)


@dataclass(frozen=True)
class Clustering:
    assignment: np.ndarray
    medoids: np.ndarray
    k: int
    objective: float
    build_objective: float
    n_swaps: int = 0


def pam_cluster(d, k: int, seed=0, max_iter: int = 1000) -> Clustering:
    """k-medoids by PAM: greedy BUILD, then best-improvement SWAP to a local optimum.

    The objective is the total dissimilarity of each point to its medoid. Exact
    ties are broken by a random priority drawn from ``seed``.
    """
    d = np.asarray(d, dtype=np.float64)
    n = d.shape[0]
    if d.ndim != 2 or d.shape[1] != n:
        raise ValueError("dissimilarity must be square")
    if not np.allclose(d, d.T) or np.any(np.diag(d) != 0):
        raise ValueError("dissimilarity must be symmetric with zero diagonal")
    if not 2 <= k <= n:
        raise ValueError("need 2 <= k <= n")
    distinct = np.unique(d, axis=0).shape[0]
    if k > distinct:
        raise ValueError(f"k={k} exceeds the {distinct} distinct points")
    prio = np.random.default_rng(seed).permutation(n)

    def pick_min(values, allowed):
        vals = np.where(allowed, values, np.inf)
        best = vals.min()
        ties = np.flatnonzero(allowed & (vals == best))
        return int(ties[np.argmin(prio[ties])])

    # BUILD
    is_med = np.zeros(n, dtype=bool)
    first = pick_min(d.sum(axis=1), ~is_med)
    medoids = [first]
    is_med[first] = True
    near = d[first].copy()
    while len(medoids) < k:
        gain = np.maximum(near[None, :] - d, 0.0).sum(axis=1)
        i = pick_min(-gain, ~is_med)
        medoids.append(i)
        is_med[i] = True
        near = np.minimum(near, d[i])
    build_obj = float(near.sum())

    # SWAP
    medoids = np.array(medoids)
    swaps = 0
    for _ in range(max_iter if k < n else 0):
        Dm = d[medoids]  # k x n
        order = np.argsort(Dm, axis=0, kind="stable")
        d1 = Dm[order[0], np.arange(n)]
        d2 = Dm[order[1], np.arange(n)]
        current = d1.sum()
        best = (0.0, None, None)
        for slot in range(k):
            base = np.where(order[0] == slot, d2, d1)
            cost = np.minimum(d, base[None, :]).sum(axis=1)  # candidate h replaces slot
            delta = np.where(is_med, np.inf, cost - current)
            h = pick_min(delta, ~is_med)
            if delta[h] < best[0] - 1e-12 * max(current, 1.0):
                best = (delta[h], slot, h)
        if best[1] is None:
            break
        _, slot, h = best
        is_med[medoids[slot]] = False
        is_med[h] = True
        medoids[slot] = h
        swaps += 1

    Dm = d[medoids]
    assignment = np.argmin(Dm, axis=0)
    assignment[medoids] = np.arange(k)
    objective = float(Dm[assignment, np.arange(n)].sum())
    return Clustering(assignment, medoids, k, objective, build_obj, swaps)


def position_profile(clustering: Clustering, data: Dataset) -> np.ndarray:
    """k x K matrix of within-cluster category proportions."""
    a = np.asarray(clustering.assignment)
    if a.shape[0] != data.n:
        raise ValueError("assignment length must equal the number of observations")
    counts = np.zeros((clustering.k, data.K))
    np.add.at(counts, (a, data.y), 1.0)
    size = counts.sum(axis=1, keepdims=True)
    return counts / np.where(size > 0, size, 1.0)


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Chance-corrected agreement between two partitions."""
    a = np.unique(np.asarray(labels_a), return_inverse=True)[1].reshape(-1)
    b = np.unique(np.asarray(labels_b), return_inverse=True)[1].reshape(-1)
    if a.shape != b.shape:
        raise ValueError("label vectors differ in length")
    table = np.zeros((a.max() + 1, b.max() + 1))
    np.add.at(table, (a, b), 1)
    sum_cells = comb(table, 2).sum()
    sum_a = comb(table.sum(axis=1), 2).sum()
    sum_b = comb(table.sum(axis=0), 2).sum()
    expected = sum_a * sum_b / comb(a.shape[0], 2)
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return float((sum_cells - expected) / (max_index - expected))
