"""Random forest over binary presence features.

Every split is a presence test on one feature, so trees need no threshold
search: a node's candidate features are scored by the weighted Gini impurity
of the present/absent children.
"""
from __future__ import annotations

import math

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._base import check_binary_X, check_fit_inputs


class _Tree:
    __slots__ = ("feature", "left", "right", "value")

    def __init__(self, feature, left, right, value):
        self.feature = feature
        self.left = left
        self.right = right
        self.value = value

    def apply(self, Xd: np.ndarray) -> np.ndarray:
        node = np.zeros(Xd.shape[0], dtype=np.int64)
        rows = np.arange(Xd.shape[0])
        active = self.feature[node] >= 0
        while np.any(active):
            r = rows[active]
            n = node[r]
            present = Xd[r, self.feature[n]]
            node[r] = np.where(present, self.right[n], self.left[n])
            active = self.feature[node] >= 0
        return node


def _gini_children(present: np.ndarray, total: np.ndarray) -> np.ndarray:
    """Weighted impurity sum of the two children for each candidate (rows of ``present``)."""
    absent = total[None, :] - present
    out = np.zeros(present.shape[0])
    for part in (present, absent):
        w = part.sum(axis=1)
        safe = np.where(w > 0, w, 1.0)
        out += w - (part**2).sum(axis=1) / safe
    return out


def grow_tree(Xd, y, w, n_classes, max_features, rng, min_weight=1e-12) -> _Tree:
    """Grow an unpruned tree on rows with positive weight."""
    n, p = Xd.shape
    feature, left, right, values = [], [], [], []

    def new_node():
        feature.append(-1)
        left.append(-1)
        right.append(-1)
        values.append(None)
        return len(feature) - 1

    root = new_node()
    stack = [(root, np.flatnonzero(w > min_weight))]
    while stack:
        node, idx = stack.pop()
        yw = np.bincount(y[idx], weights=w[idx], minlength=n_classes)
        values[node] = yw / yw.sum()
        if len(idx) < 2 or np.count_nonzero(yw) <= 1:
            continue
        sub = Xd[idx]
        perm = rng.permutation(p)
        cand = None
        # keep drawing blocks of features until one is non-constant on this node
        for start in range(0, p, max_features):
            block = perm[start:start + max_features]
            cnt = sub[:, block].sum(axis=0)
            ok = (cnt > 0) & (cnt < len(idx))
            if np.any(ok):
                cand = block[ok]
                break
        if cand is None:
            continue
        onehot = np.zeros((len(idx), n_classes))
        onehot[np.arange(len(idx)), y[idx]] = w[idx]
        present = sub[:, cand].T.astype(np.float64) @ onehot
        score = _gini_children(present, yw)
        best = int(np.argmin(score))
        f = int(cand[best])
        mask = sub[:, f]
        feature[node] = f
        lnode, rnode = new_node(), new_node()
        left[node], right[node] = lnode, rnode
        stack.append((rnode, idx[mask]))
        stack.append((lnode, idx[~mask]))
    return _Tree(
        np.asarray(feature, dtype=np.int64),
        np.asarray(left, dtype=np.int64),
        np.asarray(right, dtype=np.int64),
        np.vstack(values),
    )


class BinaryForestClassifier(ClassifierMixin, BaseEstimator):
    """Bootstrap-aggregated Gini trees; probabilities are the mean leaf distribution.

    Each tree sees the training set through a uniform bootstrap whose counts
    multiply the sample weights. ``max_features`` defaults to ceil(sqrt(p)).
    """

    def __init__(self, n_estimators=200, max_features=None, random_state=None):
        self.n_estimators = n_estimators
        self.max_features = max_features
        self.random_state = random_state

    def fit(self, X, y, sample_weight=None):
        if self.n_estimators < 1:
            raise ValueError("n_estimators must be >= 1")
        X, y_enc, w, classes = check_fit_inputs(X, y, sample_weight)
        rng = np.random.default_rng(self.random_state)
        n, p = X.shape
        self.classes_ = classes
        self.n_features_in_ = p
        mtry = self.max_features or max(1, math.ceil(math.sqrt(p)))
        Xd = X.toarray().astype(bool)
        k = len(classes)
        self.estimators_ = []
        for _ in range(self.n_estimators):
            counts = np.bincount(rng.integers(0, n, n), minlength=n)
            self.estimators_.append(grow_tree(Xd, y_enc, w * counts, k, mtry, rng))
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "estimators_")
        Xd = check_binary_X(X, self.n_features_in_).toarray().astype(bool)
        proba = np.zeros((Xd.shape[0], len(self.classes_)))
        for tree in self.estimators_:
            proba += tree.value[tree.apply(Xd)]
        proba /= len(self.estimators_)
        return proba / proba.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def _get_state(self):
        sizes = [len(t.feature) for t in self.estimators_]
        meta = {
            "n_estimators": int(self.n_estimators),
            "max_features": self.max_features,
            "n_features": int(self.n_features_in_),
            "tree_sizes": sizes,
        }
        arrays = {
            "classes": self.classes_,
            "feature": np.concatenate([t.feature for t in self.estimators_]),
            "left": np.concatenate([t.left for t in self.estimators_]),
            "right": np.concatenate([t.right for t in self.estimators_]),
            "value": np.vstack([t.value for t in self.estimators_]),
        }
        return meta, arrays

    @classmethod
    def _from_state(cls, meta, arrays):
        self = cls(n_estimators=meta["n_estimators"], max_features=meta["max_features"])
        self.n_features_in_ = meta["n_features"]
        self.classes_ = arrays["classes"]
        self.estimators_ = []
        start = 0
        for size in meta["tree_sizes"]:
            sl = slice(start, start + size)
            self.estimators_.append(
                _Tree(arrays["feature"][sl], arrays["left"][sl], arrays["right"][sl], arrays["value"][sl])
            )
            start += size
        return self
