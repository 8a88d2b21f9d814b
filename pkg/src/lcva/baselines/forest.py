"""Bootstrap-aggregated CART regression forest."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import UsageError
from ..numeric import SeededRng

LEAF = -1


@dataclass
class RegressionTree:
    """Flat array tree. ``feature[i] == LEAF`` marks a leaf holding ``value[i]``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=int)
        active = self.feature[node] != LEAF
        while active.any():
            idx = np.flatnonzero(active)
            nd = node[idx]
            go_left = X[idx, self.feature[nd]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])
            active[idx] = self.feature[node[idx]] != LEAF
        return self.value[node]

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.feature == LEAF)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist()
                for k in ("feature", "threshold", "left", "right", "value", "n_samples")}

    @classmethod
    def from_dict(cls, doc: dict) -> "RegressionTree":
        return cls(np.array(doc["feature"], dtype=int), np.array(doc["threshold"], dtype=float),
                   np.array(doc["left"], dtype=int), np.array(doc["right"], dtype=int),
                   np.array(doc["value"], dtype=float), np.array(doc["n_samples"], dtype=int))


def _best_split(X, y, idx, features, min_leaf):
    """Lowest-SSE axis split of rows ``idx``; ``None`` if no admissible split."""
    n = len(idx)
    best = None
    best_sse = np.inf
    for f in features:
        xs = X[idx, f]
        order = np.argsort(xs, kind="stable")
        xs = xs[order]
        ys = y[idx][order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        # split after position i-1 puts i rows on the left
        i = np.arange(min_leaf, n - min_leaf + 1)
        if len(i) == 0:
            continue
        i = i[xs[i - 1] < xs[i]]
        if len(i) == 0:
            continue
        left_sum = csum[i - 1]
        left_sq = csq[i - 1]
        right_sum = csum[-1] - left_sum
        right_sq = csq[-1] - left_sq
        sse = (left_sq - left_sum ** 2 / i) + (right_sq - right_sum ** 2 / (n - i))
        j = int(np.argmin(sse))
        if sse[j] < best_sse - 1e-12:
            best_sse = sse[j]
            cut = i[j]
            best = (int(f), 0.5 * (xs[cut - 1] + xs[cut]), best_sse)
    return best


def grow_tree(X, y, rng: SeededRng, max_depth=10, min_leaf_size=5, max_features=None) -> RegressionTree:
    if min_leaf_size < 1:
        raise UsageError("min_leaf_size must be >= 1")
    n, m = X.shape
    k = m if max_features is None else max(1, min(m, max_features))
    feature, threshold, left, right, value, count = [], [], [], [], [], []

    def new_node(rows):
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[rows].mean()))
        count.append(len(rows))
        return len(feature) - 1

    root = new_node(np.arange(n))
    stack = [(root, np.arange(n), 0)]
    while stack:
        node, rows, depth = stack.pop()
        if depth >= max_depth or len(rows) < 2 * min_leaf_size:
            continue
        ys = y[rows]
        if np.all(ys == ys[0]):
            continue
        feats = rng.permutation(m)[:k] if k < m else np.arange(m)
        split = _best_split(X, y, rows, feats, min_leaf_size)
        if split is None:
            continue
        f, thr, _ = split
        mask = X[rows, f] <= thr
        lrows, rrows = rows[mask], rows[~mask]
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node(lrows)
        right[node] = new_node(rrows)
        stack.append((right[node], rrows, depth + 1))
        stack.append((left[node], lrows, depth + 1))
    return RegressionTree(np.array(feature, dtype=int), np.array(threshold), np.array(left, dtype=int),
                          np.array(right, dtype=int), np.array(value), np.array(count, dtype=int))


@dataclass
class RegressionForest:
    tree_count: int = 100
    max_depth: int = 10
    min_leaf_size: int = 5
    seed: int = 0
    bootstrap: bool = True
    max_features: int | None = None  # None -> ceil(sqrt(m))
    trees: list = field(default_factory=list)

    def fit(self, X, y) -> "RegressionForest":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        n, m = X.shape
        if n < self.min_leaf_size:
            raise UsageError(f"forest needs at least {self.min_leaf_size} rows, got {n}")
        mf = self.max_features or math.ceil(math.sqrt(m))
        root = SeededRng(self.seed)
        self.trees = []
        for i in range(self.tree_count):
            rng = root.derive(i)
            rows = rng.integers(0, n, n) if self.bootstrap else np.arange(n)
            self.trees.append(grow_tree(X[rows], y[rows], rng, self.max_depth,
                                        self.min_leaf_size, mf))
        return self

    def predict(self, X) -> np.ndarray:
        if not self.trees:
            raise UsageError("forest is not fitted")
        X = np.asarray(X, dtype=np.float64)
        return np.mean([t.predict(X) for t in self.trees], axis=0)

    def to_dict(self) -> dict:
        return {"tree_count": self.tree_count, "max_depth": self.max_depth,
                "min_leaf_size": self.min_leaf_size, "seed": self.seed,
                "bootstrap": self.bootstrap, "max_features": self.max_features,
                "trees": [t.to_dict() for t in self.trees]}

    @classmethod
    def from_dict(cls, doc: dict) -> "RegressionForest":
        doc = dict(doc)
        trees = [RegressionTree.from_dict(t) for t in doc.pop("trees")]
        return cls(**doc, trees=trees)


def fit_forest(dataset, **kwargs) -> RegressionForest:
    """Forest on the OLS-1 inputs ``[x_u, t_u, t_v] -> y_u``."""
    from .linear import ols1_design

    batch = dataset.pair_batch()
    return RegressionForest(**kwargs).fit(ols1_design(batch), batch.y_u)
