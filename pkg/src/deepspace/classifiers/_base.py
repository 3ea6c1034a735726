from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.utils.validation import check_array, check_consistent_length


def check_binary_X(X, n_features=None) -> sp.csr_matrix:
    """Accept dense or sparse presence/absence input and return a binary CSR matrix."""
    if sp.issparse(X):
        X = sp.csr_matrix(X, dtype=np.float64)
    else:
        X = sp.csr_matrix(check_array(X, dtype=np.float64, ensure_all_finite=True, ensure_min_samples=0))
    X.eliminate_zeros()
    if X.nnz and not np.all(X.data == 1.0):
        X.data = (X.data != 0).astype(np.float64)
    X.sort_indices()
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} features, classifier was fitted with {n_features}")
    return X


def check_fit_inputs(X, y, sample_weight):
    X = check_binary_X(X)
    y = np.asarray(y).ravel()
    check_consistent_length(X, y)
    if X.shape[0] < 1:
        raise ValueError("need at least one training sample")
    if sample_weight is None:
        w = np.ones(X.shape[0], dtype=np.float64)
    else:
        w = np.asarray(sample_weight, dtype=np.float64).ravel()
        check_consistent_length(X, w)
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("sample weights must be finite and non-negative")
    classes, y_enc = np.unique(y, return_inverse=True)
    return X, y_enc, w, classes
