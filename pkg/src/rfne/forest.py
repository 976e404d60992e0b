"""CART classification trees and a bagged random forest.

Trees are stored as flat node tables indexed by node id.  Ids are assigned
breadth-first with the root at 0, so the table doubles as the serialized
form written into model files.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import DataError


@dataclass(frozen=True)
class SplitPredicate:
    column: int
    threshold: float

    def goes_left(self, value: float) -> bool:
        return value <= self.threshold


@dataclass(frozen=True)
class TreeNode:
    id: int
    depth: int
    split: SplitPredicate | None
    children: tuple[int, int] | None
    class_counts: tuple[int, int]

    @property
    def is_leaf(self) -> bool:
        return self.split is None


class DecisionTree:
    """Immutable node table of a fitted binary classification tree.

    ``feature[i] == -1`` marks a leaf; leaves carry threshold 0 and child ids -1.
    """

    def __init__(self, feature, threshold, left, right, depth, counts, n_columns):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.depth = np.asarray(depth, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64).reshape(-1, 2)
        self.n_columns = int(n_columns)
        for arr in (self.feature, self.threshold, self.left, self.right, self.depth, self.counts):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature < 0)

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    def is_leaf(self, node_id: int) -> bool:
        return self.feature[node_id] < 0

    def node(self, node_id: int) -> TreeNode:
        if not 0 <= node_id < self.n_nodes:
            raise KeyError(node_id)
        counts = (int(self.counts[node_id, 0]), int(self.counts[node_id, 1]))
        if self.is_leaf(node_id):
            return TreeNode(node_id, int(self.depth[node_id]), None, None, counts)
        split = SplitPredicate(int(self.feature[node_id]), float(self.threshold[node_id]))
        children = (int(self.left[node_id]), int(self.right[node_id]))
        return TreeNode(node_id, int(self.depth[node_id]), split, children, counts)

    def parents(self) -> np.ndarray:
        parent = np.full(self.n_nodes, -1, dtype=np.int64)
        internal = np.flatnonzero(self.feature >= 0)
        parent[self.left[internal]] = internal
        parent[self.right[internal]] = internal
        return parent

    def path(self, node_id: int) -> list[int]:
        """Node ids from the root down to ``node_id`` inclusive."""
        parent = self.parents()
        out = [node_id]
        while parent[out[-1]] >= 0:
            out.append(int(parent[out[-1]]))
        return out[::-1]

    def leaf_votes(self) -> np.ndarray:
        """Per-node majority class; ties go to class 0."""
        return (self.counts[:, 1] > self.counts[:, 0]).astype(np.int64)

    def apply(self, X) -> np.ndarray:
        """Leaf id reached by each row of ``X``."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_columns:
            raise DataError(f"expected {self.n_columns} columns, got shape {X.shape}")
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        for _ in range(self.max_depth):
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                break
            r, n, f = rows[active], node[active], feat[active]
            left = X[r, f] <= self.threshold[n]
            node[active] = np.where(left, self.left[n], self.right[n])
        return node

    def to_arrays(self) -> dict[str, np.ndarray]:
        return {"feature": self.feature, "threshold": self.threshold, "left": self.left,
                "right": self.right, "depth": self.depth, "counts": self.counts}

    def __eq__(self, other):
        if not isinstance(other, DecisionTree):
            return NotImplemented
        return self.n_columns == other.n_columns and all(
            np.array_equal(a, b) for a, b in zip(self.to_arrays().values(),
                                                 other.to_arrays().values()))

    def __repr__(self):
        return f"DecisionTree(n_nodes={self.n_nodes}, max_depth={self.max_depth})"


def gini(counts) -> float:
    counts = np.asarray(counts, dtype=np.float64)
    total = counts.sum()
    if total == 0:
        return 0.0
    p = counts / total
    return float(1.0 - np.sum(p * p))


def _best_split(values, labels, min_leaf):
    """Best Gini split of one column; returns (score, threshold) or None.

    ``score`` is sum over children of (n_neg^2 + n_pos^2) / n_child, which is
    maximal exactly where the weighted child impurity is minimal.
    """
    order = np.argsort(values, kind="stable")
    v = values[order]
    pos = np.cumsum(labels[order])
    n = v.shape[0]
    boundary = np.flatnonzero(v[1:] > v[:-1]) + 1
    if min_leaf > 1:
        boundary = boundary[(boundary >= min_leaf) & (boundary <= n - min_leaf)]
    if boundary.size == 0:
        return None
    n_left = boundary.astype(np.float64)
    pos_left = pos[boundary - 1].astype(np.float64)
    n_right = n - n_left
    pos_right = pos[-1] - pos_left
    score = ((pos_left ** 2 + (n_left - pos_left) ** 2) / n_left
             + (pos_right ** 2 + (n_right - pos_right) ** 2) / n_right)
    best = int(np.argmax(score))
    lo, hi = v[boundary[best] - 1], v[boundary[best]]
    threshold = lo + (hi - lo) / 2.0
    if not threshold < hi:
        threshold = lo
    return float(score[best]), float(threshold)


def fit_tree(X, y, row_indices, max_depth: int, features_per_split: int, rng,
             min_samples_leaf: int = 1) -> DecisionTree:
    """Grow one CART tree on ``X[row_indices]`` (repeats allowed, as in a bootstrap).

    Each node draws ``features_per_split`` distinct columns uniformly at random
    and takes the midpoint threshold with the lowest weighted Gini impurity.
    Growth stops at ``max_depth``, at pure nodes and at nodes with fewer than
    ``2 * min_samples_leaf`` rows.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    rows = np.asarray(row_indices, dtype=np.int64)
    if rows.size == 0:
        raise DataError("cannot fit a tree on an empty sample")
    if features_per_split < 1:
        raise ValueError("features_per_split must be >= 1")
    n_columns = X.shape[1]
    m = min(features_per_split, n_columns)

    feature, threshold, left, right, depth, counts = [], [], [], [], [], []
    queue = [(rows, 0)]
    head = 0
    while head < len(queue):
        node_rows, node_depth = queue[head]
        node_id = head
        head += 1
        labels = y[node_rows]
        n_pos = int(labels.sum())
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        depth.append(node_depth)
        counts.append((node_rows.size - n_pos, n_pos))

        if (node_depth >= max_depth or n_pos == 0 or n_pos == node_rows.size
                or node_rows.size < 2 * min_samples_leaf):
            continue
        best = None
        for col in rng.choice(n_columns, size=m, replace=False):
            found = _best_split(X[node_rows, col], labels, min_samples_leaf)
            if found is not None and (best is None or found[0] > best[0]):
                best = (found[0], int(col), found[1])
        if best is None:
            continue
        _, col, thr = best
        go_left = X[node_rows, col] <= thr
        feature[node_id] = col
        threshold[node_id] = thr
        left[node_id] = len(queue)
        queue.append((node_rows[go_left], node_depth + 1))
        right[node_id] = len(queue)
        queue.append((node_rows[~go_left], node_depth + 1))

    return DecisionTree(feature, threshold, left, right, depth, counts, n_columns)


def apply_leaf(tree: DecisionTree, row) -> int:
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1:
        raise DataError("apply_leaf expects a single row")
    return int(tree.apply(row[None, :])[0])


def tree_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    """Independent seed stream for tree ``index``; depends on nothing else."""
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))


def default_features_per_split(n_columns: int) -> int:
    return max(1, math.ceil(math.sqrt(n_columns)))


@dataclass(frozen=True)
class ForestParams:
    n_estimators: int = 100
    max_depth: int = 5
    features_per_split: int | None = None
    min_samples_leaf: int = 1

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        if self.max_depth < 0:
            raise ValueError("max_depth must be >= 0")
        if self.features_per_split is not None and self.features_per_split < 1:
            raise ValueError("features_per_split must be >= 1")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")


@dataclass(frozen=True)
class Forest:
    trees: tuple[DecisionTree, ...]
    params: ForestParams
    master_seed: int

    @property
    def k(self) -> int:
        return len(self.trees)

    def apply(self, X) -> np.ndarray:
        """(n_rows, k) matrix of leaf ids."""
        return np.column_stack([t.apply(X) for t in self.trees])

    def leaf_probability(self, X) -> np.ndarray:
        """Mean over trees of the positive-class share of the leaf each row reaches."""
        X = np.asarray(X, dtype=np.float64)
        out = np.zeros(X.shape[0])
        for tree in self.trees:
            out += (tree.counts[:, 1] / tree.counts.sum(axis=1))[tree.apply(X)]
        return out / self.k

    def vote_fraction(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        votes = np.zeros(X.shape[0])
        for tree in self.trees:
            votes += tree.leaf_votes()[tree.apply(X)]
        return votes / self.k

    def predict(self, X) -> np.ndarray:
        return (self.vote_fraction(X) > 0.5).astype(np.int64)


def _fit_one(X, y, index, params, master_seed, features_per_split):
    rng = np.random.default_rng(tree_seed(master_seed, index))
    sample = rng.integers(0, X.shape[0], size=X.shape[0])
    return fit_tree(X, y, sample, params.max_depth, features_per_split, rng,
                    params.min_samples_leaf)


def fit_forest(X, y, params: ForestParams, master_seed: int, n_jobs: int | None = None,
               start: int = 0) -> Forest:
    """Fit ``params.n_estimators`` trees, each on its own bootstrap sample.

    Tree ``i`` depends only on ``(master_seed, start + i)``, so the result is
    the same for every ``n_jobs`` and the first trees of a larger forest equal
    a smaller forest with the same seed.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise DataError("cannot fit a forest on an empty dataset")
    fps = params.features_per_split or default_features_per_split(X.shape[1])
    jobs = range(start, start + params.n_estimators)
    if n_jobs in (None, 1):
        trees = [_fit_one(X, y, i, params, master_seed, fps) for i in jobs]
    else:
        trees = Parallel(n_jobs=n_jobs)(
            delayed(_fit_one)(X, y, i, params, master_seed, fps) for i in jobs)
    return Forest(tuple(trees), params, int(master_seed))


def predict_majority(forest: Forest, row) -> tuple[int, float]:
    """Majority vote for one row: (class, fraction of trees voting positive)."""
    row = np.asarray(row, dtype=np.float64)[None, :]
    fraction = float(forest.vote_fraction(row)[0])
    return int(fraction > 0.5), fraction


class RandomForest(ClassifierMixin, BaseEstimator):
    """Bagged CART forest.

    ``predict`` is the hard majority vote (ties to the first class);
    ``predict_proba`` averages the leaf class shares over trees, which is the
    ranking score used for AUC.  The raw vote share is ``vote_fraction``.
    """

    def __init__(self, n_estimators=100, max_depth=5, features_per_split=None,
                 min_samples_leaf=1, random_state=0, n_jobs=None):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.features_per_split = features_per_split
        self.min_samples_leaf = min_samples_leaf
        self.random_state = random_state
        self.n_jobs = n_jobs

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, y = np.unique(y, return_inverse=True)
        if self.classes_.size > 2:
            raise DataError("RandomForest supports binary targets only")
        params = ForestParams(self.n_estimators, self.max_depth,
                              self.features_per_split, self.min_samples_leaf)
        self.forest_ = fit_forest(X, y, params, self.random_state, self.n_jobs)
        self.n_features_in_ = X.shape[1]
        return self

    def apply(self, X):
        check_is_fitted(self, "forest_")
        return self.forest_.apply(check_array(X, dtype=np.float64))

    def predict_proba(self, X):
        check_is_fitted(self, "forest_")
        pos = self.forest_.leaf_probability(check_array(X, dtype=np.float64))
        return np.column_stack([1.0 - pos, pos])

    def vote_fraction(self, X):
        check_is_fitted(self, "forest_")
        return self.forest_.vote_fraction(check_array(X, dtype=np.float64))

    def predict(self, X):
        check_is_fitted(self, "forest_")
        pred = self.forest_.predict(check_array(X, dtype=np.float64))
        return self.classes_[pred] if self.classes_.size == 2 else self.classes_[0].repeat(len(pred))
