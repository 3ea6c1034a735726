"""Weighted nearest-neighbour voting under the Jaccard distance."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ._base import check_binary_X, check_fit_inputs

_QUERY_CHUNK = 512


def jaccard_distance(a, b) -> float:
    """1 - |a & b| / |a | b| for index sets; two empty sets are at distance 0."""
    a, b = set(a), set(b)
    union = len(a | b)
    if union == 0:
        return 0.0
    return 1.0 - len(a & b) / union


def jaccard_distances(Xq, Xt) -> np.ndarray:
    """Pairwise Jaccard distances between the rows of two binary CSR matrices."""
    inter = (Xq @ Xt.T).toarray()
    qs = np.diff(Xq.indptr).astype(np.float64)
    ts = np.diff(Xt.indptr).astype(np.float64)
    union = qs[:, None] + ts[None, :] - inter
    sim = np.ones_like(inter)
    np.divide(inter, union, out=sim, where=union > 0)
    return 1.0 - sim


class JaccardKNNClassifier(ClassifierMixin, BaseEstimator):
    """k-nearest-neighbour class probabilities from a weight-normalized vote.

    Neighbours at equal distance are taken in training order. When fewer than
    ``n_neighbors`` training samples exist all of them vote.
    """

    def __init__(self, n_neighbors=25):
        self.n_neighbors = n_neighbors

    def fit(self, X, y, sample_weight=None):
        if self.n_neighbors < 1:
            raise ValueError("n_neighbors must be >= 1")
        X, y_enc, w, classes = check_fit_inputs(X, y, sample_weight)
        self.classes_ = classes
        self.n_features_in_ = X.shape[1]
        self.X_fit_ = X
        self.y_fit_ = y_enc
        self.weight_fit_ = w
        return self

    def kneighbors(self, X):
        check_is_fitted(self, "X_fit_")
        X = check_binary_X(X, self.n_features_in_)
        k = min(self.n_neighbors, self.X_fit_.shape[0])
        out = np.empty((X.shape[0], k), dtype=np.int64)
        for start in range(0, X.shape[0], _QUERY_CHUNK):
            d = jaccard_distances(X[start:start + _QUERY_CHUNK], self.X_fit_)
            out[start:start + _QUERY_CHUNK] = np.argsort(d, axis=1, kind="stable")[:, :k]
        return out

    def predict_proba(self, X):
        nbrs = self.kneighbors(X)
        n_classes = len(self.classes_)
        proba = np.zeros((nbrs.shape[0], n_classes))
        rows = np.repeat(np.arange(nbrs.shape[0]), nbrs.shape[1])
        np.add.at(proba, (rows, self.y_fit_[nbrs].ravel()), self.weight_fit_[nbrs].ravel())
        total = proba.sum(axis=1, keepdims=True)
        # all-zero-weight neighbourhoods fall back to an unweighted vote
        empty = total[:, 0] <= 0
        if np.any(empty):
            counts = np.zeros((int(empty.sum()), n_classes))
            sub = nbrs[empty]
            np.add.at(counts, (np.repeat(np.arange(len(sub)), sub.shape[1]), self.y_fit_[sub].ravel()), 1.0)
            proba[empty] = counts
            total[empty] = counts.sum(axis=1, keepdims=True)
        return proba / total

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def _get_state(self):
        meta = {"n_neighbors": int(self.n_neighbors), "n_features": int(self.n_features_in_)}
        arrays = {
            "classes": self.classes_,
            "indptr": self.X_fit_.indptr.astype(np.int64),
            "indices": self.X_fit_.indices.astype(np.int64),
            "y": self.y_fit_.astype(np.int64),
            "w": self.weight_fit_,
        }
        return meta, arrays

    @classmethod
    def _from_state(cls, meta, arrays):
        import scipy.sparse as sp

        self = cls(n_neighbors=meta["n_neighbors"])
        self.n_features_in_ = meta["n_features"]
        self.classes_ = arrays["classes"]
        indptr, indices = arrays["indptr"], arrays["indices"]
        data = np.ones(len(indices))
        self.X_fit_ = sp.csr_matrix((data, indices, indptr), shape=(len(indptr) - 1, self.n_features_in_))
        self.y_fit_ = arrays["y"]
        self.weight_fit_ = arrays["w"]
        return self
