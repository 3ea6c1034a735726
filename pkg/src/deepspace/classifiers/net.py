"""Feed-forward softmax network trained with Adam on weighted cross-entropy.

Layer ``l`` computes ``sigma(a_{l-1} @ W_l + b_l)`` with weights stored as
``(fan_in, fan_out)``; the output layer produces logits ``f`` and
probabilities ``softmax(f)``. All parameters live in one flat buffer so the
optimizer runs a handful of vector operations per step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ..exceptions import DivergenceError
from ._base import check_binary_X, check_fit_inputs

# Training matrices up to this many cells are densified once up front.
_DENSE_LIMIT = 20_000_000
_PREDICT_CHUNK = 4096
_TINY = np.finfo(np.float64).tiny


@dataclass
class NetParameters:
    """Views into a flat parameter vector: hidden layers then the output layer."""

    flat: np.ndarray
    weights: list
    biases: list

    @classmethod
    def allocate(cls, sizes, dtype=np.float64, flat=None):
        shapes = list(zip(sizes[:-1], sizes[1:]))
        total = sum(a * b + b for a, b in shapes)
        if flat is None:
            flat = np.zeros(total, dtype=dtype)
        elif flat.size != total:
            raise ValueError(f"flat buffer has {flat.size} entries, layout needs {total}")
        weights, biases = [], []
        pos = 0
        for a, b in shapes:
            weights.append(flat[pos:pos + a * b].reshape(a, b))
            pos += a * b
            biases.append(flat[pos:pos + b])
            pos += b
        return cls(flat, weights, biases)

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self):
        return NetParameters.allocate(self.sizes, flat=self.flat.copy())


def he_uniform(params: NetParameters, rng) -> None:
    """Weights ~ U(-sqrt(6/fan_in), sqrt(6/fan_in)); biases zero."""
    for W, b in zip(params.weights, params.biases):
        bound = math.sqrt(6.0 / W.shape[0])
        W[...] = rng.uniform(-bound, bound, W.shape)
        b[...] = 0.0


def _act(z, activation):
    if activation == "relu":
        return np.maximum(z, 0)
    if activation == "logistic":
        return 1.0 / (1.0 + np.exp(-z))
    raise ValueError(f"unknown activation {activation!r}")


def softmax(f):
    e = f - f.max(axis=1, keepdims=True)
    np.exp(e, out=e)
    e /= e.sum(axis=1, keepdims=True)
    return e


def _forward(params, X, activation, masks=None):
    """Return (hidden activations incl. input, pre-activations, logits)."""
    acts = [X]
    pres = []
    a = X
    for layer, (W, b) in enumerate(zip(params.weights[:-1], params.biases[:-1])):
        z = a @ W
        z += b
        h = _act(z, activation)
        if masks is not None and masks[layer] is not None:
            h *= masks[layer]
        pres.append(z)
        acts.append(h)
        a = h
    f = a @ params.weights[-1]
    f += params.biases[-1]
    return acts, pres, f


def net_forward(params: NetParameters, x, dropout_mask=None, activation="relu"):
    """Logits and softmax probabilities for a batch of inputs.

    ``dropout_mask`` is a per-hidden-layer list of already-scaled masks and is
    only given during training.
    """
    if sp.issparse(x):
        x = sp.csr_matrix(x, dtype=params.flat.dtype)
    else:
        x = np.atleast_2d(np.asarray(x, dtype=params.flat.dtype))
    _, _, f = _forward(params, x, activation, dropout_mask)
    if not np.all(np.isfinite(f)):
        raise DivergenceError("non-finite logits in forward pass")
    return f, softmax(f)


def weighted_loss_and_grad(params, X, y, w, activation="relu", masks=None, grad=None):
    """Weighted-mean cross-entropy and its gradient (as a NetParameters over ``grad``).

    Loss is sum_i w_i * -log q_{y_i}(x_i) / sum_i w_i. All-zero weights give zero
    loss and zero gradient.
    """
    acts, pres, f = _forward(params, X, activation, masks)
    q = softmax(f)
    n = len(y)
    rows = np.arange(n)
    wsum = float(np.sum(w))
    scale = (np.asarray(w, dtype=np.float64) / wsum) if wsum > 0 else np.zeros(n)
    picked = np.maximum(q[rows, y].astype(np.float64), _TINY)
    loss = float(-np.dot(scale, np.log(picked)))
    if grad is None:
        grad = NetParameters.allocate(params.sizes, dtype=params.flat.dtype)
    delta = q
    delta[rows, y] -= 1.0
    delta *= scale.astype(delta.dtype)[:, None]
    L = len(params.weights)
    for layer in range(L - 1, -1, -1):
        a = acts[layer]
        gW = a.T @ delta
        grad.weights[layer][...] = gW
        grad.biases[layer][...] = delta.sum(axis=0)
        if layer == 0:
            break
        delta = delta @ params.weights[layer].T
        if masks is not None and masks[layer - 1] is not None:
            delta *= masks[layer - 1]
        if activation == "relu":
            delta *= pres[layer - 1] > 0
        else:
            s = _act(pres[layer - 1], activation)
            delta *= s * (1.0 - s)
    return loss, grad


class Adam:
    """Adam on a flat parameter vector (bias correction folded into the step size)."""

    def __init__(self, size, dtype, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(size, dtype=dtype)
        self.v = np.zeros(size, dtype=dtype)
        self.tmp = np.empty(size, dtype=dtype)
        self.t = 0

    def step(self, theta, g):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self.m *= b1
        np.multiply(g, 1.0 - b1, out=self.tmp)
        self.m += self.tmp
        self.v *= b2
        np.multiply(g, g, out=self.tmp)
        self.tmp *= 1.0 - b2
        self.v += self.tmp
        c2 = math.sqrt(1.0 - b2**self.t)
        step = self.lr * c2 / (1.0 - b1**self.t)
        np.sqrt(self.v, out=self.tmp)
        self.tmp += self.eps * c2
        np.divide(self.m, self.tmp, out=self.tmp)
        self.tmp *= step
        theta -= self.tmp


class NetClassifier(ClassifierMixin, BaseEstimator):
    """Multilayer perceptron classifier producing tile probabilities.

    Parameters
    ----------
    hidden : tuple of int
        Hidden layer widths.
    activation : {"relu", "logistic"}
    dropout : float
        Drop probability applied after each hidden activation during training
        (inverted scaling, so inference uses the weights as is).
    epochs, batch_size, learning_rate, beta1, beta2, eps :
        Adam training schedule. The loss is the sample-weighted mean
        cross-entropy of each minibatch.
    dtype : {"float32", "float64"}
        Arithmetic precision for training and inference.
    random_state : int, Generator or None
    """

    def __init__(self, hidden=(2048, 1024, 1024), activation="relu", dropout=0.3, epochs=20,
                 batch_size=32, learning_rate=1e-3, beta1=0.9, beta2=0.999, eps=1e-8,
                 dtype="float32", random_state=None):
        self.hidden = hidden
        self.activation = activation
        self.dropout = dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.dtype = dtype
        self.random_state = random_state

    def _validate(self):
        if any(int(h) < 1 for h in self.hidden):
            raise ValueError("hidden sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    def fit(self, X, y, sample_weight=None):
        self._validate()
        X, y_enc, w, classes = check_fit_inputs(X, y, sample_weight)
        dtype = np.dtype(self.dtype)
        rng = np.random.default_rng(self.random_state)
        n, p = X.shape
        self.classes_ = classes
        self.n_features_in_ = p
        sizes = [p, *map(int, self.hidden), len(classes)]
        params = NetParameters.allocate(sizes, dtype=dtype)
        he_uniform(params, rng)
        grad = NetParameters.allocate(sizes, dtype=dtype)
        opt = Adam(params.flat.size, dtype, self.learning_rate, self.beta1, self.beta2, self.eps)

        Xt = X.astype(dtype)
        if n * p <= _DENSE_LIMIT:
            Xt = Xt.toarray()
        keep = 1.0 - self.dropout
        self.initial_loss_ = self._full_loss(params, Xt, y_enc, w)
        self.epoch_losses_ = []
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            running, seen = 0.0, 0.0
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                masks = None
                if self.dropout > 0:
                    masks = [
                        (rng.random((len(idx), int(h)), dtype=dtype) < keep).astype(dtype) / dtype.type(keep)
                        for h in self.hidden
                    ]
                loss, _ = weighted_loss_and_grad(params, Xt[idx], y_enc[idx], w[idx],
                                                 self.activation, masks, grad)
                if not math.isfinite(loss):
                    raise DivergenceError("non-finite training loss", epoch=epoch)
                bw = float(w[idx].sum())
                running += loss * bw
                seen += bw
                opt.step(params.flat, grad.flat)
            self.epoch_losses_.append(running / seen if seen > 0 else 0.0)
        self.final_loss_ = self._full_loss(params, Xt, y_enc, w)
        if not math.isfinite(self.final_loss_) or not np.all(np.isfinite(params.flat)):
            raise DivergenceError("non-finite parameters after training", epoch=max(self.epochs - 1, 0))
        self.params_ = params
        return self

    def _full_loss(self, params, Xt, y, w):
        total, wsum = 0.0, float(w.sum())
        if wsum <= 0:
            return 0.0
        for start in range(0, Xt.shape[0], _PREDICT_CHUNK):
            sl = slice(start, start + _PREDICT_CHUNK)
            _, _, f = _forward(params, Xt[sl], self.activation)
            q = softmax(f.astype(np.float64))
            picked = np.maximum(q[np.arange(len(q)), y[sl]], _TINY)
            total -= float(np.sum(w[sl] * np.log(picked)))
        return total / wsum

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        X = check_binary_X(X, self.n_features_in_).astype(self.params_.flat.dtype)
        out = np.empty((X.shape[0], len(self.classes_)))
        for start in range(0, X.shape[0], _PREDICT_CHUNK):
            f, _ = net_forward(self.params_, X[start:start + _PREDICT_CHUNK], activation=self.activation)
            out[start:start + _PREDICT_CHUNK] = softmax(f.astype(np.float64))
        return out

    def predict(self, X):
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]

    def _get_state(self):
        meta = {k: v for k, v in self.get_params().items() if k != "random_state"}
        meta["hidden"] = [int(h) for h in self.hidden]
        meta["sizes"] = [int(s) for s in self.params_.sizes]
        meta["initial_loss"] = float(self.initial_loss_)
        meta["final_loss"] = float(self.final_loss_)
        meta["epoch_losses"] = [float(x) for x in self.epoch_losses_]
        return meta, {"classes": self.classes_, "flat": self.params_.flat}

    @classmethod
    def _from_state(cls, meta, arrays):
        kwargs = {k: meta[k] for k in ("activation", "dropout", "epochs", "batch_size", "learning_rate",
                                       "beta1", "beta2", "eps", "dtype")}
        self = cls(hidden=tuple(meta["hidden"]), **kwargs)
        self.classes_ = arrays["classes"]
        self.n_features_in_ = meta["sizes"][0]
        self.params_ = NetParameters.allocate(meta["sizes"], flat=np.array(arrays["flat"]))
        self.initial_loss_ = meta["initial_loss"]
        self.final_loss_ = meta["final_loss"]
        self.epoch_losses_ = list(meta["epoch_losses"])
        return self


def gradient_check(hidden=(5,), n_features=6, n_classes=3, n_samples=8, activation="relu",
                   rng=None, h=1e-5, weights=None):
    """Max relative error between backprop and central differences over every parameter.

    Builds a random float64 instance (binary inputs, He-uniform weights,
    small random biases, positive sample weights unless ``weights`` is given)
    with dropout off. Relative error is ``|a - n| / max(|a| + |n|, 1e-7)``.
    """
    rng = np.random.default_rng(rng)
    sizes = [n_features, *hidden, n_classes]
    params = NetParameters.allocate(sizes, dtype=np.float64)
    he_uniform(params, rng)
    for b in params.biases:
        b[...] = rng.normal(0.0, 0.1, b.shape)
    X = (rng.random((n_samples, n_features)) < 0.5).astype(np.float64)
    y = rng.integers(0, n_classes, n_samples)
    w = rng.uniform(0.5, 2.0, n_samples) if weights is None else np.asarray(weights, dtype=np.float64)
    _, grad = weighted_loss_and_grad(params, X, y, w, activation)
    analytic = grad.flat.copy()
    numeric = np.empty_like(analytic)
    theta = params.flat
    for i in range(theta.size):
        old = theta[i]
        theta[i] = old + h
        lp, _ = weighted_loss_and_grad(params, X, y, w, activation)
        theta[i] = old - h
        lm, _ = weighted_loss_and_grad(params, X, y, w, activation)
        theta[i] = old
        numeric[i] = (lp - lm) / (2 * h)
    rel = np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), 1e-7)
    return float(rel.max())
