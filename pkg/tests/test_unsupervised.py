import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import adjusted_rand_score

from conset.core import Dataset, OptionSpace, build_reduced_power_set, count_statistics
from conset.multinomial import mle_proportions
from conset.trees import best_split, grow_tree
from conset.unsupervised import (
    Clustering,
    adjusted_rand_index,
    pam_cluster,
    position_profile,
    proximity_forest,
    synthetic_contrast,
)


def blobs(n_per=100, seed=0, p=4, spread=6.0):
    rng = np.random.default_rng(seed)
    centres = spread * np.eye(3, p)
    X = np.vstack([c + rng.normal(size=(n_per, p)) for c in centres])
    return X, np.repeat(np.arange(3), n_per)


def euclid(X):
    return np.sqrt(((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2))


class TestTrees:
    def test_split_matches_brute_force(self):
        rng = np.random.default_rng(0)
        X = rng.integers(0, 5, size=(40, 2)).astype(float)
        t = rng.normal(size=40)
        w = np.ones(40)
        gain, f, thr = best_split(X, t, w, np.arange(40), [0, 1], 1)
        best = max(
            ((t[X[:, j] <= c].sum() ** 2 / (X[:, j] <= c).sum()
              + t[X[:, j] > c].sum() ** 2 / (X[:, j] > c).sum() - t.sum() ** 2 / 40, j, c + 0.5)
             for j in range(2) for c in np.unique(X[:, j])[:-1]),
            key=lambda r: r[0])
        assert gain == pytest.approx(best[0], rel=1e-12) and (f, thr) == best[1:]

    def test_min_leaf_and_depth(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(200, 3))
        y = rng.normal(size=200)
        tree = grow_tree(X, y, np.ones(200), lambda idx: y[idx].mean(), max_depth=4, min_leaf=10)
        assert tree.depth() <= 4
        assert np.bincount(tree.apply(X)).max() > 0
        counts = np.bincount(tree.apply(X))
        assert counts[counts > 0].min() >= 10

    def test_leaf_boxes_partition(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(300, 3))
        tree = grow_tree(X, X[:, 0] * X[:, 1], np.ones(300), lambda idx: 0.0, max_depth=5)
        leaf = tree.apply(X)
        for node, feats, lo, hi in tree.leaf_boxes():
            inside = np.all((X[:, feats] > lo) & (X[:, feats] <= hi), axis=1)
            assert np.array_equal(inside, leaf == node)

    def test_structure(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(100, 2))
        tree = grow_tree(X, X[:, 0], np.ones(100), lambda idx: 1.0)
        internal = tree.feature >= 0
        assert np.all(tree.left[internal] > 0) and np.all(tree.right[internal] > 0)
        children = np.concatenate([tree.left[internal], tree.right[internal]])
        assert len(set(children.tolist())) == children.size == tree.n_nodes - 1
        assert np.all(np.isfinite(tree.value[~internal]))


class TestContrast:
    def test_constant_column(self):
        rows = np.column_stack([np.full(50, 3.0), np.arange(50.0)])
        Z, lab = synthetic_contrast(rows, seed=1)
        assert Z.shape == (100, 2) and lab.sum() == 50
        assert np.all(Z[50:, 0] == 3.0)
        assert np.array_equal(Z[:50], rows)

    def test_marginals_kept(self):
        rng = np.random.default_rng(4)
        rows = rng.normal(loc=[1, -2, 5], size=(2000, 3))
        Z, _ = synthetic_contrast(rows, seed=2)
        sd = rows.std(axis=0) / np.sqrt(2000)
        assert np.all(np.abs(Z[2000:].mean(axis=0) - rows.mean(axis=0)) < 3 * sd * np.sqrt(2))
        assert set(np.unique(Z[2000:, 0])) <= set(rows[:, 0])

    def test_dependence_destroyed(self):
        x = np.random.default_rng(5).normal(size=1000)
        Z, _ = synthetic_contrast(np.column_stack([x, x]), seed=3)
        assert abs(np.corrcoef(Z[1000:, 0], Z[1000:, 1])[0, 1]) < 0.1


class TestProximity:
    def test_invariants(self):
        X, _ = blobs(n_per=20)
        prox = proximity_forest(X, n_trees=30, seed=1).matrix
        assert np.array_equal(prox, prox.T)
        assert np.all(np.diag(prox) == 1) and prox.min() >= 0 and prox.max() <= 1

    def test_identical_rows(self):
        X, _ = blobs(n_per=10)
        X[5] = X[3]
        pm = proximity_forest(X, n_trees=20, seed=0)
        assert pm.matrix[3, 5] == 1.0 and pm.dissimilarity()[3, 5] == 0.0

    def test_single_tree_binary(self):
        X, _ = blobs(n_per=15)
        pm = proximity_forest(X, n_trees=1, seed=0)
        assert set(np.unique(pm.matrix)) <= {0.0, 1.0}
        d = pm.dissimilarity()
        assert np.all((d == 1.0) == (pm.matrix == 0.0))

    def test_blobs_within_exceed_between(self):
        X, truth = blobs(n_per=40)
        prox = proximity_forest(X, n_trees=100, seed=3).matrix
        same = truth[:, None] == truth[None, :]
        off = ~np.eye(len(truth), dtype=bool)
        assert prox[same & off].mean() > 5 * prox[~same].mean()

    def test_thread_independent(self):
        X, _ = blobs(n_per=15)
        a = proximity_forest(X, n_trees=12, seed=9, threads=1).matrix
        b = proximity_forest(X, n_trees=12, seed=9, threads=4).matrix
        assert np.array_equal(a, b)

    def test_bad_inputs(self):
        with pytest.raises(ValueError):
            proximity_forest(np.zeros((1, 2)))
        with pytest.raises(ValueError):
            proximity_forest(np.zeros((5, 2)), mtry=3)


def brute_force_pam(d, k):
    n = d.shape[0]
    return min(d[list(m)].min(axis=0).sum() for m in itertools.combinations(range(n), k))


class TestPam:
    def test_blobs(self):
        X, truth = blobs(seed=2)
        c = pam_cluster(euclid(X), 3, seed=0)
        assert adjusted_rand_index(c.assignment, truth) > 0.9

    def test_k_equals_n(self):
        X = np.random.default_rng(1).normal(size=(7, 2))
        c = pam_cluster(euclid(X), 7)
        assert c.objective == 0.0 and sorted(c.medoids.tolist()) == list(range(7))

    @given(st.integers(0, 10_000), st.integers(2, 4))
    @settings(max_examples=25, deadline=None)
    def test_descent_and_invariants(self, seed, k):
        X = np.random.default_rng(seed).normal(size=(12, 2))
        d = euclid(X)
        c = pam_cluster(d, k, seed=seed)
        assert c.objective <= c.build_objective + 1e-12
        assert np.all(np.bincount(c.assignment, minlength=k) > 0)
        assert np.array_equal(c.assignment[c.medoids], np.arange(k))
        assert c.objective >= brute_force_pam(d, k) - 1e-9
        assert c.objective == pytest.approx(d[c.medoids].min(axis=0).sum(), rel=1e-12)

    @given(st.integers(0, 10_000))
    @settings(max_examples=20, deadline=None)
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        X, _ = blobs(n_per=8, seed=seed)
        d = euclid(X)
        perm = rng.permutation(d.shape[0])
        a = pam_cluster(d, 3, seed=1)
        b = pam_cluster(d[np.ix_(perm, perm)], 3, seed=1)
        assert adjusted_rand_index(a.assignment[perm], b.assignment) == 1.0

    def test_errors(self):
        d = euclid(np.zeros((4, 1)))
        with pytest.raises(ValueError):
            pam_cluster(d, 2)  # one distinct point
        with pytest.raises(ValueError):
            pam_cluster(np.array([[0, 1], [2, 0.0]]), 2)
        with pytest.raises(ValueError):
            pam_cluster(euclid(np.arange(3.0)[:, None]), 1)


class TestProfile:
    def data(self, y):
        rps = build_reduced_power_set(OptionSpace(("a", "b", "c")), [], 1)
        return Dataset(rps, y, np.ones((len(y), 1)), ["(Intercept)"])

    def test_one_cluster_is_marginal(self):
        # a one-cluster Clustering object built directly (pam needs k >= 2)
        d = self.data([0, 2, 2, 1, 0, 0])
        c = Clustering(np.zeros(6, dtype=int), np.array([0]), 1, 0.0, 0.0)
        np.testing.assert_allclose(position_profile(c, d)[0], mle_proportions(count_statistics(d)).pi,
                                   rtol=0, atol=1e-15)

    def test_singleton_cluster(self):
        d = self.data([0, 2, 1])
        c = Clustering(np.array([0, 1, 0]), np.array([0, 1]), 2, 0.0, 0.0)
        assert position_profile(c, d)[1].tolist() == [0.0, 0.0, 1.0]

    @given(st.lists(st.integers(0, 2), min_size=5, max_size=60), st.integers(0, 100))
    @settings(max_examples=40, deadline=None)
    def test_rows_sum_to_one(self, y, seed):
        a = np.random.default_rng(seed).integers(0, 3, size=len(y))
        a[:3] = [0, 1, 2]
        c = Clustering(a, np.array([0, 1, 2]), 3, 0.0, 0.0)
        prof = position_profile(c, self.data(y))
        assert np.all(np.abs(prof.sum(axis=1) - 1) <= 1e-12)


@given(st.lists(st.integers(0, 3), min_size=2, max_size=40), st.integers(0, 100))
@settings(max_examples=60, deadline=None)
def test_ari_matches_sklearn(a, seed):
    b = np.random.default_rng(seed).integers(0, 3, size=len(a))
    assert adjusted_rand_index(a, b) == pytest.approx(adjusted_rand_score(a, b), abs=1e-12)
