"""Random forest of Gini decision trees (bootstrap rows, sqrt(d) features per node)."""
import math

import numpy as np

from .._util import make_rng
from .base import FOREST, FittedModel


class Tree:
    """Array-encoded binary tree; ``feature == -1`` marks a leaf."""

    def __init__(self, feature, threshold, left, right, value):
        self.feature = feature
        self.threshold = threshold
        self.left = left
        self.right = right
        self.value = value  # (n_nodes, C) class frequencies
        self.is_leaf = feature < 0
        self.leaf_nodes = np.flatnonzero(self.is_leaf)
        self.leaf_number = np.full(len(feature), -1, dtype=np.int64)
        self.leaf_number[self.leaf_nodes] = np.arange(len(self.leaf_nodes))

    @property
    def n_leaves(self):
        return len(self.leaf_nodes)

    def apply(self, X):
        """Node id of the leaf every row of X falls into."""
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        active = ~self.is_leaf[node]
        while active.any():
            r, nd = rows[active], node[active]
            go_left = X[r, self.feature[nd]] <= self.threshold[nd]
            node[r] = np.where(go_left, self.left[nd], self.right[nd])
            active = ~self.is_leaf[node]
        return node


def _best_split(Xn, Yn, feature_order, max_features, min_samples_leaf):
    m = Xn.shape[0]
    total = Yn.sum(axis=0)
    n_left = np.arange(1, m)
    n_right = m - n_left
    size_ok = (n_left >= min_samples_leaf) & (n_right >= min_samples_leaf)
    best = None
    tried = 0
    for f in feature_order:
        x = Xn[:, f]
        if x.min() == x.max():
            continue
        tried += 1
        order = np.argsort(x, kind="stable")
        xs = x[order]
        left = np.cumsum(Yn[order], axis=0)[:-1]
        right = total - left
        valid = size_ok & (xs[:-1] < xs[1:])
        if valid.any():
            # weighted child Gini times m: n_l - sum(l^2)/n_l + n_r - sum(r^2)/n_r
            score = m - (left**2).sum(axis=1) / n_left - (right**2).sum(axis=1) / n_right
            score = np.where(valid, score, np.inf)
            i = int(np.argmin(score))
            if best is None or score[i] < best[0]:
                thr = 0.5 * (xs[i] + xs[i + 1])
                if thr >= xs[i + 1]:
                    thr = xs[i]
                best = (score[i], f, thr)
        if tried >= max_features and best is not None:
            break
    return best


def build_tree(X, Y, rows, max_depth, min_samples_leaf, max_features, rng):
    """Grow one tree on X[rows] (rows may repeat, as in a bootstrap sample)."""
    d = X.shape[1]
    feature, threshold, left, right, value = [], [], [], [], []

    def new_node(rows_):
        counts = Y[rows_].sum(axis=0)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(counts / counts.sum())
        return len(feature) - 1

    stack = [(new_node(rows), rows, 0)]
    while stack:
        node, rows_, depth = stack.pop()
        m = len(rows_)
        if depth >= max_depth or m < 2 * min_samples_leaf or np.count_nonzero(value[node]) <= 1:
            continue
        split = _best_split(X[rows_], Y[rows_], rng.permutation(d), max_features, min_samples_leaf)
        if split is None:
            continue
        _, f, thr = split
        go_left = X[rows_, f] <= thr
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node(rows_[go_left])
        right[node] = new_node(rows_[~go_left])
        stack.append((right[node], rows_[~go_left], depth + 1))
        stack.append((left[node], rows_[go_left], depth + 1))
    return Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(threshold, dtype=float),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.vstack(value),
    )


class ForestModel(FittedModel):
    kind = FOREST

    def __init__(self, trees, classes, n_features, train_fingerprint):
        super().__init__(classes, n_features, train_fingerprint)
        self.trees = trees
        self.leaf_offsets = np.concatenate([[0], np.cumsum([t.n_leaves for t in trees])])

    @property
    def n_leaves(self):
        return int(self.leaf_offsets[-1])

    def predict_proba(self, X):
        X = self._check(X)
        P = np.zeros((X.shape[0], len(self.classes_)))
        for tree in self.trees:
            P += tree.value[tree.apply(X)]
        P /= len(self.trees)
        return P / P.sum(axis=1, keepdims=True)

    def apply(self, X):
        """Global leaf column (0..n_leaves-1) per row and tree, shape (n, n_trees)."""
        X = self._check(X)
        out = np.empty((X.shape[0], len(self.trees)), dtype=np.int64)
        for t, tree in enumerate(self.trees):
            out[:, t] = self.leaf_offsets[t] + tree.leaf_number[tree.apply(X)]
        return out

    def leaf_onehot(self, X):
        leaves = self.apply(X)
        A = np.zeros((X.shape[0], self.n_leaves))
        A[np.arange(X.shape[0])[:, None], leaves] = 1.0
        return A


def resolve_max_features(rule, d):
    if rule == "sqrt":
        return max(1, int(math.sqrt(d)))
    if rule in (None, "all"):
        return d
    return max(1, min(d, int(rule)))


def fit_forest(X, y_codes, classes, n_trees, max_depth, min_samples_leaf, max_features, seed, fp):
    n, d = X.shape
    Y = np.zeros((n, len(classes)))
    Y[np.arange(n), y_codes] = 1.0
    mf = resolve_max_features(max_features, d)
    trees = []
    for t in range(n_trees):
        rng = make_rng(seed, "tree", t)
        rows = rng.integers(0, n, size=n)
        trees.append(build_tree(X, Y, rows, max_depth, min_samples_leaf, mf, rng))
    return ForestModel(trees, classes, d, fp)
