"""CART classification trees (Gini) and bagged random forests."""

from __future__ import annotations

import numpy as np


class Tree:
    """Array-backed binary tree. Leaves have feature == -1."""

    def __init__(self, feature, threshold, left, right, counts):
        self.feature = np.asarray(feature, dtype=np.int64)
        self.threshold = np.asarray(threshold, dtype=float)
        self.left = np.asarray(left, dtype=np.int64)
        self.right = np.asarray(right, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=float)

    @property
    def depth(self) -> int:
        def d(i):
            return 0 if self.feature[i] < 0 else 1 + max(d(self.left[i]), d(self.right[i]))
        return d(0)

    def leaf_index(self, X):
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature[node] >= 0
        while active.any():
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active[idx] = self.feature[node[idx]] >= 0
        return node

    def predict(self, X):
        # argmax picks the lowest class index on ties
        return np.argmax(self.counts[self.leaf_index(X)], axis=1)

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "counts")}

    @classmethod
    def from_dict(cls, d):
        return cls(d["feature"], d["threshold"], d["left"], d["right"], d["counts"])


def _best_split(X, Y, idx, features, min_leaf):
    """Lowest weighted-Gini split over ``features`` (ascending) for rows ``idx``.

    Ties go to the lowest feature index, then the lowest threshold.
    Returns (feature, threshold, left_rows, right_rows) or None.
    """
    n = len(idx)
    Xn = X[np.ix_(idx, features)]
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    Yn = Y[idx]
    cum = np.cumsum(Yn[order], axis=0)  # (n, f, K): class counts of the first i+1 rows
    total = cum[-1, 0]
    left = cum[:-1]
    right = total - left
    nl = np.arange(1, n)[:, None]
    nr = n - nl
    # n_l * gini_l + n_r * gini_r
    impurity = (nl - np.sum(left * left, axis=2) / nl) + (nr - np.sum(right * right, axis=2) / nr)
    valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (nr >= min_leaf)
    if not valid.any():
        return None
    impurity = np.where(valid, impurity, np.inf)
    best_per_feature = impurity.min(axis=0)
    best_val = best_per_feature.min()
    # tolerate rounding so mathematically equal impurities tie
    j = int(np.flatnonzero(best_per_feature <= best_val + 1e-9 * max(1.0, abs(best_val)))[0])
    i = int(np.flatnonzero(impurity[:, j] <= best_val + 1e-9 * max(1.0, abs(best_val)))[0])
    lo, hi = xs[i, j], xs[i + 1, j]
    thr = lo + (hi - lo) / 2.0
    if not lo <= thr < hi:
        thr = lo
    rows = order[:, j]
    return int(features[j]), float(thr), idx[rows[: i + 1]], idx[rows[i + 1:]]


def build_tree(X, y, n_classes, max_depth=None, min_samples_leaf=1, max_features=None, rng=None) -> Tree:
    """Grow a CART tree depth-first.

    ``max_features`` features are drawn without replacement at every split
    when given (random forest mode); otherwise all features are searched.
    """
    X = np.asarray(X, dtype=float)
    Y = np.zeros((len(y), n_classes))
    Y[np.arange(len(y)), y] = 1.0
    p = X.shape[1]
    feature, threshold, left, right, counts = [], [], [], [], []

    def new_node(rows):
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        counts.append(Y[rows].sum(axis=0))
        return len(feature) - 1

    stack = [(np.arange(len(X)), 0, new_node(np.arange(len(X))))]
    while stack:
        rows, depth, node = stack.pop()
        c = counts[node]
        if (max_depth is not None and depth >= max_depth) or np.count_nonzero(c) <= 1 \
                or len(rows) < 2 * min_samples_leaf or p == 0:
            continue
        if max_features is not None and max_features < p:
            feats = np.sort(rng.choice(p, size=max_features, replace=False))
        else:
            feats = np.arange(p)
        split = _best_split(X, Y, rows, feats, min_samples_leaf)
        if split is None:
            continue
        f, thr, lrows, rrows = split
        feature[node] = f
        threshold[node] = thr
        li, ri = new_node(lrows), new_node(rrows)
        left[node], right[node] = li, ri
        stack.append((rrows, depth + 1, ri))
        stack.append((lrows, depth + 1, li))
    return Tree(feature, threshold, left, right, counts)


def tree_seeds(seed, n):
    """Per-tree generators; tree i's stream does not depend on the ensemble size."""
    return [np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,))) for i in range(n)]


def build_forest(X, y, n_classes, n_estimators, max_depth, min_samples_leaf, seed):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    n, p = X.shape
    max_features = max(1, int(np.sqrt(p))) if p else None
    trees = []
    for rng in tree_seeds(seed, n_estimators):
        boot = rng.integers(0, n, size=n)
        trees.append(build_tree(X[boot], y[boot], n_classes, max_depth, min_samples_leaf, max_features, rng))
    return trees


def forest_vote(trees, X, n_classes):
    votes = np.zeros((len(X), n_classes))
    rows = np.arange(len(X))
    for t in trees:
        votes[rows, t.predict(X)] += 1
    return np.argmax(votes, axis=1)
