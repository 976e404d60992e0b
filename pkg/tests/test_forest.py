import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from sklearn.base import clone

from rfne.exceptions import DataError
from rfne.forest import (DecisionTree, Forest, ForestParams, RandomForest, apply_leaf,
                         fit_forest, fit_tree, gini, predict_majority)
from rfne.pipeline import dumps_model, fit_rfne, RfneConfig
from rfne.graphwalk import WalkParams


def random_xy(n=300, p=6, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p))
    X[:, 0] = np.round(X[:, 0], 1)
    y = (X[:, 0] + 0.5 * X[:, 1] + rng.normal(scale=0.5, size=n) > 0).astype(int)
    return X, y


def stump(counts_left, counts_right, threshold=0.5):
    return DecisionTree([0, -1, -1], [threshold, 0, 0], [1, -1, -1], [2, -1, -1], [0, 1, 1],
                        [np.add(counts_left, counts_right), counts_left, counts_right], 1)


def brute_force_best_threshold(x, y):
    """Minimize weighted child Gini over every midpoint."""
    vals = np.unique(x)
    best = None
    for lo, hi in zip(vals[:-1], vals[1:]):
        t = (lo + hi) / 2
        left, right = y[x <= t], y[x > t]
        score = sum(len(part) * gini(np.bincount(part, minlength=2)) for part in (left, right))
        if best is None or score < best[0] - 1e-12:
            best = (score, t)
    return best[1]


def test_two_point_root_split():
    X = np.array([[0.0], [1.0]])
    y = np.array([0, 1])
    tree = fit_tree(X, y, np.arange(2), 5, 1, np.random.default_rng(0))
    assert tree.n_nodes == 3
    assert tree.threshold[0] == 0.5
    assert tree.counts[1].tolist() == [1, 0] and tree.counts[2].tolist() == [0, 1]


def test_pure_sample_is_single_leaf():
    X = np.random.default_rng(0).normal(size=(20, 3))
    tree = fit_tree(X, np.ones(20, dtype=int), np.arange(20), 5, 2, np.random.default_rng(0))
    assert tree.n_nodes == 1 and gini(tree.counts[0]) == 0.0


def test_empty_sample_rejected():
    with pytest.raises((ValueError, DataError)):
        fit_tree(np.zeros((3, 1)), np.zeros(3, dtype=int), np.array([], dtype=int), 3, 1,
                 np.random.default_rng(0))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 12), st.integers(0, 1)), min_size=4, max_size=40))
def test_root_threshold_matches_brute_force(points):
    x = np.array([p[0] for p in points], dtype=float)
    y = np.array([p[1] for p in points])
    if np.unique(x).size < 2 or np.unique(y).size < 2:
        return
    tree = fit_tree(x[:, None], y, np.arange(len(x)), 1, 1, np.random.default_rng(0))
    t = tree.threshold[0]
    oracle = brute_force_best_threshold(x, y)
    score = lambda thr: sum(len(p) * gini(np.bincount(p, minlength=2))
                            for p in (y[x <= thr], y[x > thr]))
    assert score(t) == pytest.approx(score(oracle), abs=1e-9)


def test_tree_structure_invariants():
    X, y = random_xy()
    tree = fit_tree(X, y, np.arange(len(y)), 6, 3, np.random.default_rng(1))
    assert tree.max_depth <= 6
    internal = np.flatnonzero(tree.feature >= 0)
    for node in internal:
        l, r = tree.left[node], tree.right[node]
        assert np.array_equal(tree.counts[node], tree.counts[l] + tree.counts[r])
        assert tree.depth[l] == tree.depth[r] == tree.depth[node] + 1
        n = tree.counts[node].sum()
        child = (tree.counts[l].sum() * gini(tree.counts[l])
                 + tree.counts[r].sum() * gini(tree.counts[r])) / n
        assert child <= gini(tree.counts[node]) + 1e-12
    for leaf in tree.leaves:
        node = tree.node(int(leaf))
        assert node.is_leaf and node.split is None and node.children is None
    # breadth-first ids
    assert np.all(np.diff(tree.depth) >= 0)


def test_leaf_counts_match_routing():
    X, y = random_xy(seed=3)
    rng = np.random.default_rng(5)
    rows = rng.integers(0, len(y), len(y))
    tree = fit_tree(X, y, rows, 5, 2, rng)
    leaves = tree.apply(X[rows])
    for leaf in tree.leaves:
        hit = y[rows][leaves == leaf]
        assert tree.counts[leaf].tolist() == [int((hit == 0).sum()), int((hit == 1).sum())]


def test_min_samples_leaf_respected():
    X, y = random_xy(seed=4)
    tree = fit_tree(X, y, np.arange(len(y)), 8, 6, np.random.default_rng(0), min_samples_leaf=10)
    assert tree.counts[tree.leaves].sum(axis=1).min() >= 10


def test_apply_leaf_routing_examples():
    single = DecisionTree([-1], [0], [-1], [-1], [0], [[3, 4]], 2)
    assert apply_leaf(single, [5.0, -1.0]) == 0
    tree = stump([2, 0], [0, 2])
    assert apply_leaf(tree, [0.0]) == 1
    assert apply_leaf(tree, [1.0]) == 2
    with pytest.raises(DataError):
        tree.apply(np.zeros((2, 3)))


def test_apply_satisfies_path_predicates():
    X, y = random_xy(n=500, p=8, seed=7)
    tree = fit_tree(X, y, np.arange(len(y)), 6, 3, np.random.default_rng(2))
    rows = np.random.default_rng(9).normal(size=(1000, 8))
    leaves = tree.apply(rows)
    for row, leaf in zip(rows, leaves):
        path = tree.path(int(leaf))
        for parent, child in zip(path[:-1], path[1:]):
            goes_left = row[tree.feature[parent]] <= tree.threshold[parent]
            assert child == (tree.left[parent] if goes_left else tree.right[parent])


def test_forest_shape_and_depth():
    X, y = random_xy()
    forest = fit_forest(X, y, ForestParams(10, 5), master_seed=3)
    assert forest.k == 10
    assert all(t.max_depth <= 5 for t in forest.trees)
    assert any(t != forest.trees[0] for t in forest.trees[1:])


def test_forest_seed_determinism_and_worker_invariance():
    X, y = random_xy()
    a = fit_forest(X, y, ForestParams(8, 4), master_seed=11, n_jobs=1)
    b = fit_forest(X, y, ForestParams(8, 4), master_seed=11, n_jobs=2)
    assert all(s == t for s, t in zip(a.trees, b.trees))
    c = fit_forest(X, y, ForestParams(8, 4), master_seed=12)
    assert any(s != t for s, t in zip(a.trees, c.trees))


def test_prefix_of_forest_equals_smaller_forest():
    X, y = random_xy()
    big = fit_forest(X, y, ForestParams(6, 3), 0)
    small = fit_forest(X, y, ForestParams(3, 3), 0)
    assert all(s == t for s, t in zip(small.trees, big.trees[:3]))


def test_single_tree_forest_prediction():
    X, y = random_xy()
    forest = fit_forest(X, y, ForestParams(1, 4), 0)
    tree = forest.trees[0]
    assert np.array_equal(forest.predict(X), tree.leaf_votes()[tree.apply(X)])


def _forest_from_votes(votes):
    trees = [stump([1, 0], [0, 1]) if v else stump([0, 1], [1, 0]) for v in votes]
    return Forest(tuple(trees), ForestParams(len(votes)), 0)


def test_majority_vote_examples():
    # row [1.0] goes right: the stump votes its right leaf's class
    assert predict_majority(_forest_from_votes([1, 1, 0]), [1.0]) == (1, pytest.approx(2 / 3))
    assert predict_majority(_forest_from_votes([1, 0]), [1.0])[0] == 0


def test_leaf_vote_tie_goes_to_zero():
    tree = stump([2, 2], [0, 1])
    assert tree.leaf_votes()[1] == 0


def test_leaf_probability_is_mean_leaf_share():
    X, y = random_xy()
    forest = fit_forest(X, y, ForestParams(5, 3), 0)
    manual = np.mean([(t.counts[:, 1] / t.counts.sum(1))[t.apply(X)] for t in forest.trees], 0)
    assert np.allclose(forest.leaf_probability(X), manual)


def test_estimator_wrapper():
    X, y = random_xy()
    est = RandomForest(n_estimators=5, max_depth=3, random_state=0)
    params = est.get_params()
    assert params["n_estimators"] == 5 and clone(est).get_params() == params
    proba = est.fit(X, y).predict_proba(X)
    assert proba.shape == (len(y), 2) and np.allclose(proba.sum(1), 1)
    assert est.apply(X).shape == (len(y), 5)
    assert set(np.unique(est.predict(X))) <= {0, 1}


def test_serialized_forests_identical():
    from rfne.data import EncodingMap, EncodedColumn, EncodedDataset, Feature, Schema, NUMERIC
    X, y = random_xy(n=120, p=3)
    schema = Schema(tuple(Feature(f"x{i}", NUMERIC) for i in range(3)), "y")
    enc = EncodingMap(schema, tuple(EncodedColumn(f"x{i}", None, 0.0) for i in range(3)))
    data = EncodedDataset(X, y, enc)
    cfg = RfneConfig(ForestParams(3, 3), WalkParams(3, 5))
    assert dumps_model(fit_rfne(data, cfg)) == dumps_model(fit_rfne(data, cfg))


def test_params_validation():
    for bad in (dict(n_estimators=0), dict(max_depth=-1), dict(features_per_split=0),
                dict(min_samples_leaf=0)):
        with pytest.raises(ValueError):
            ForestParams(**bad)
    with pytest.raises(DataError):
        fit_forest(np.zeros((0, 2)), np.zeros(0), ForestParams(2), 0)
