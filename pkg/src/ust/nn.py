"""Dropout feed-forward classifier with hand-derived backprop and Adam.

The network is a stack of affine layers with rectifier activations between
them and a softmax on top. Dropout is applied to the input of every layer
(the raw features for the first layer, the hidden activations for the rest)
using inverted scaling, so the deterministic pass needs no rescaling.

Inputs are scipy CSR matrices, one row per example. The first-layer weight
matrix is large (hashing dimension x hidden units) and each mini-batch only
touches the rows of the features it contains, so its gradient is kept in
row-sparse form and the optimizer updates those rows only.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from .exceptions import DimensionMismatchError, TrainingDivergedError

logger = logging.getLogger(__name__)

DEFAULT_HIDDEN = 128
DEFAULT_DROPOUT = 0.5


@dataclass
class MlpModel:
    """Parameters of a dropout MLP classifier.

    ``weights[l]`` has shape ``(layer_dims[l], layer_dims[l + 1])`` and
    ``dropout_rates[l]`` is applied to the input of layer ``l``.
    """

    weights: list
    biases: list
    dropout_rates: tuple
    activation: str = "relu"

    def __post_init__(self):
        self.dropout_rates = tuple(float(p) for p in self.dropout_rates)
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need one bias per weight matrix and at least one layer")
        if len(self.dropout_rates) != len(self.weights):
            raise ValueError(
                f"expected {len(self.weights)} dropout rates, got {len(self.dropout_rates)}")
        if any(not 0.0 <= p < 1.0 for p in self.dropout_rates):
            raise ValueError(f"dropout rates must lie in [0, 1): {self.dropout_rates}")
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        for l, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.ndim != 2 or b.shape != (W.shape[1],):
                raise ValueError(f"layer {l}: weight {W.shape} and bias {b.shape} disagree")
            if l and W.shape[0] != self.weights[l - 1].shape[1]:
                raise ValueError(f"layer {l} input dim does not match layer {l - 1} output")
        if self.n_classes < 2:
            raise ValueError("a classifier needs at least two output classes")

    @classmethod
    def init(cls, layer_dims: Sequence[int], dropout_rates=None, rng=None) -> "MlpModel":
        """Random model with weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases."""
        rng = np.random.default_rng(rng)
        dims = [int(d) for d in layer_dims]
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"invalid layer dims {dims}")
        if dropout_rates is None:
            dropout_rates = (DEFAULT_DROPOUT,) * (len(dims) - 1)
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, tuple(dropout_rates))

    @classmethod
    def zeros(cls, layer_dims: Sequence[int], dropout_rates=None) -> "MlpModel":
        dims = [int(d) for d in layer_dims]
        if dropout_rates is None:
            dropout_rates = (0.0,) * (len(dims) - 1)
        weights = [np.zeros((i, o)) for i, o in zip(dims[:-1], dims[1:])]
        biases = [np.zeros(o) for o in dims[1:]]
        return cls(weights, biases, tuple(dropout_rates))

    @property
    def layer_dims(self) -> list:
        return [self.weights[0].shape[0]] + [W.shape[1] for W in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_classes(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list:
        """Flat list ``[W0, b0, W1, b1, ...]`` of the live parameter arrays."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend([W, b])
        return out

    def copy(self) -> "MlpModel":
        return MlpModel([W.copy() for W in self.weights], [b.copy() for b in self.biases],
                        self.dropout_rates, self.activation)

    def load_state(self, other: "MlpModel") -> None:
        """Copy ``other``'s parameter values into this model in place."""
        for dst, src in zip(self.parameters(), other.parameters()):
            dst[...] = src

    def with_dropout(self, dropout_rates) -> "MlpModel":
        """Shallow view sharing parameters but using different dropout rates."""
        return MlpModel(self.weights, self.biases, tuple(dropout_rates), self.activation)


def as_batch(features, dim: int):
    """Coerce ``features`` to a CSR matrix with ``dim`` columns.

    Returns ``(X, single)`` where ``single`` tells whether a lone example was
    passed (a 1-D array or a 1-row sparse matrix), so per-example callers can
    return a vector rather than a 1-row matrix.
    """
    if sp.issparse(features):
        X = sp.csr_matrix(features, dtype=np.float64)
        single = X.shape[0] == 1
    else:
        arr = np.asarray(features, dtype=np.float64)
        single = arr.ndim == 1
        X = sp.csr_matrix(np.atleast_2d(arr))
    if X.shape[1] != dim:
        raise DimensionMismatchError(f"features have dimension {X.shape[1]}, model expects {dim}")
    return X, single


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _keep_mask(u: np.ndarray, rate: float) -> np.ndarray:
    # inverted dropout: kept units are scaled by 1/(1-p)
    return (u >= rate) / (1.0 - rate)


def sample_masks(model: MlpModel, X, rng) -> list:
    """Draw one dropout mask per layer input for every row of ``X``.

    ``masks[0]`` multiplies ``X.data`` (only stored entries can be non-zero);
    ``masks[l]`` for ``l > 0`` has shape ``(n_rows, layer_dims[l])``. Layers
    with rate 0 get ``None`` and consume no random numbers.
    """
    masks = []
    for l, rate in enumerate(model.dropout_rates):
        if rate == 0.0:
            masks.append(None)
        elif l == 0:
            masks.append(_keep_mask(rng.random(X.nnz), rate))
        else:
            masks.append(_keep_mask(rng.random((X.shape[0], model.layer_dims[l])), rate))
    return masks


def _forward(model: MlpModel, X, masks=None):
    """Return ``(logits, inputs, preacts)``; inputs are post-dropout layer inputs."""
    masks = masks if masks is not None else [None] * model.n_layers
    if masks[0] is not None:
        a = sp.csr_matrix((X.data * masks[0], X.indices, X.indptr), shape=X.shape)
    else:
        a = X
    inputs, preacts = [], []
    for l, (W, b) in enumerate(zip(model.weights, model.biases)):
        if l > 0:
            a = np.maximum(preacts[-1], 0.0)
            if masks[l] is not None:
                a = a * masks[l]
        inputs.append(a)
        z = a @ W + b
        preacts.append(np.asarray(z))
    return preacts[-1], inputs, preacts


def forward_deterministic(model: MlpModel, features) -> np.ndarray:
    """Class probabilities with dropout disabled."""
    X, single = as_batch(features, model.input_dim)
    probs = softmax(_forward(model, X)[0])
    return probs[0] if single else probs


def forward_stochastic(model: MlpModel, features, rng) -> np.ndarray:
    """Class probabilities from one pass with a fresh dropout mask per row."""
    X, single = as_batch(features, model.input_dim)
    probs = softmax(_forward(model, X, sample_masks(model, X, rng))[0])
    return probs[0] if single else probs


def first_layer_preactivation(model: MlpModel, features, rng=None) -> np.ndarray:
    """Pre-activation of the first layer, masked when ``rng`` is given."""
    X, single = as_batch(features, model.input_dim)
    masks = sample_masks(model, X, rng) if rng is not None else None
    z = _forward(model, X, masks)[2][0]
    return z[0] if single else z


def predict_proba(model: MlpModel, X) -> np.ndarray:
    X, _ = as_batch(X, model.input_dim)
    return softmax(_forward(model, X)[0])


def log_loss(model: MlpModel, X, y) -> float:
    """Mean deterministic cross-entropy."""
    X, _ = as_batch(X, model.input_dim)
    logits = _forward(model, X)[0]
    y = np.asarray(y, dtype=np.intp)
    lp = logits[np.arange(len(y)), y] - logsumexp(logits, axis=1)
    return float(-lp.mean())


def accuracy(model: MlpModel, X, y) -> float:
    return float(np.mean(predict_proba(model, X).argmax(axis=1) == np.asarray(y)))


@dataclass
class RowSparseGrad:
    """Gradient of a matrix that is non-zero only on ``rows``."""

    rows: np.ndarray
    values: np.ndarray
    shape: tuple

    def todense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.rows] = self.values
        return out


def _input_layer_grad(a, dz: np.ndarray, shape) -> RowSparseGrad:
    rows = np.unique(a.indices)
    compact = sp.csr_matrix((a.data, np.searchsorted(rows, a.indices), a.indptr),
                            shape=(a.shape[0], len(rows)))
    return RowSparseGrad(rows, np.asarray(compact.T @ dz), shape)


def loss_and_grads(model: MlpModel, X, y, weights=None, masks=None):
    """Weighted mean cross-entropy and its gradient.

    The loss is ``mean_i w_i * -log p(y_i | x_i)``. Gradients come back in
    ``model.parameters()`` order; the first weight matrix's gradient is a
    :class:`RowSparseGrad`.
    """
    X, _ = as_batch(X, model.input_dim)
    y = np.asarray(y, dtype=np.intp)
    n = X.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=np.float64)
    logits, inputs, preacts = _forward(model, X, masks)
    log_probs = logits - logsumexp(logits, axis=1, keepdims=True)
    loss = float(np.mean(w * -log_probs[np.arange(n), y]))

    dz = np.exp(log_probs)
    dz[np.arange(n), y] -= 1.0
    dz *= (w / n)[:, None]
    grads = [None] * (2 * model.n_layers)
    for l in reversed(range(model.n_layers)):
        W = model.weights[l]
        if l == 0:
            grads[0] = _input_layer_grad(inputs[0], dz, W.shape)
        else:
            grads[2 * l] = inputs[l].T @ dz
        grads[2 * l + 1] = dz.sum(axis=0)
        if l > 0:
            da = dz @ W.T
            if masks is not None and masks[l] is not None:
                da *= masks[l]
            dz = da * (preacts[l - 1] > 0)
    return loss, grads


@numba.njit(cache=True)
def _adam_rows(p, m, v, rows, g, beta1, beta2, lr, c1, c2, eps):
    # fused Adam update of selected rows; returns False on non-finite output
    finite = True
    for i in range(rows.shape[0]):
        r = rows[i]
        for j in range(p.shape[1]):
            gij = g[i, j]
            mm = beta1 * m[r, j] + (1.0 - beta1) * gij
            vv = beta2 * v[r, j] + (1.0 - beta2) * gij * gij
            m[r, j] = mm
            v[r, j] = vv
            x = p[r, j] - lr * (mm / c1) / (np.sqrt(vv / c2) + eps)
            p[r, j] = x
            if not np.isfinite(x):
                finite = False
    return finite


@dataclass
class AdamState:
    """Adam moment accumulators for one model.

    Row-sparse gradients update only their rows' moments and parameters
    (the "lazy" variant); dense gradients use the textbook update.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_model(cls, model: MlpModel, lr: float = 1e-3, **kw) -> "AdamState":
        params = model.parameters()
        return cls(lr=lr, m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params], **kw)

    def apply(self, model: MlpModel, grads: list) -> None:
        self.step += 1
        c1 = 1.0 - self.beta1 ** self.step
        c2 = 1.0 - self.beta2 ** self.step
        for p, m, v, g in zip(model.parameters(), self.m, self.v, grads):
            if isinstance(g, RowSparseGrad):
                finite = _adam_rows(p, m, v, g.rows, g.values, self.beta1, self.beta2,
                                    self.lr, c1, c2, self.eps)
            else:
                m *= self.beta1
                m += (1.0 - self.beta1) * g
                v *= self.beta2
                v += (1.0 - self.beta2) * g ** 2
                p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
                finite = np.all(np.isfinite(p))
            if not finite:
                raise TrainingDivergedError(f"non-finite parameters after step {self.step}")


def train_step(model: MlpModel, opt: AdamState, X, y, weights=None, rng=None) -> float:
    """One Adam step on a mini-batch, with dropout active.

    Returns the pre-update weighted loss. A batch whose weights are all
    zero leaves the parameters untouched but still advances ``opt.step``.
    """
    X, _ = as_batch(X, model.input_dim)
    y = np.asarray(y, dtype=np.intp)
    if X.shape[0] == 0:
        raise ValueError("empty batch")
    if len(y) != X.shape[0]:
        raise ValueError(f"{X.shape[0]} rows but {len(y)} labels")
    if y.min() < 0 or y.max() >= model.n_classes:
        raise ValueError(f"labels must lie in [0, {model.n_classes})")
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != y.shape or not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ValueError("sample weights must be finite, non-negative, one per example")

    rng = np.random.default_rng(rng)
    masks = sample_masks(model, X, rng)
    loss, grads = loss_and_grads(model, X, y, w, masks)
    if not np.isfinite(loss):
        raise TrainingDivergedError(
            f"loss became {loss} at step {opt.step + 1}; learning rate {opt.lr} may be too high")
    if not np.any(w):
        opt.step += 1
        return loss
    opt.apply(model, grads)
    return loss


def normalize_batch_weights(w: np.ndarray) -> np.ndarray:
    """Divide by the batch mean so the average weight is 1."""
    if np.ptp(w) == 0:
        # constant weights map to exactly 1 (keeps reductions bitwise exact)
        return np.ones_like(w)
    return w / w.mean()


def fit(model: MlpModel, X, y, weights=None, *, valid, epochs: int, batch_size: int,
        patience: Optional[int] = None, rng=None, opt: Optional[AdamState] = None,
        normalize_weights: bool = False, history: Optional[list] = None) -> MlpModel:
    """Mini-batch training with validation-loss model selection.

    After every epoch the deterministic loss on ``valid = (Xv, yv)`` is
    computed; the parameters from the best epoch are loaded back into
    ``model`` (which is also returned). Training stops after ``patience``
    consecutive epochs without improvement (``0`` stops at the first one);
    ``None`` disables early stopping.
    Per-epoch ``(train_loss, val_loss)`` pairs are appended to ``history``.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    Xv, yv = valid
    if len(yv) == 0:
        raise ValueError("validation set is empty")
    X, _ = as_batch(X, model.input_dim)
    y = np.asarray(y, dtype=np.intp)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=np.float64)
    rng = np.random.default_rng(rng)
    opt = opt if opt is not None else AdamState.for_model(model)

    best_loss, best, stale = np.inf, None, 0
    for epoch in range(1, epochs + 1):
        order = rng.permutation(len(y))
        losses = []
        for start in range(0, len(y), batch_size):
            idx = order[start:start + batch_size]
            wb = normalize_batch_weights(w[idx]) if normalize_weights else w[idx]
            losses.append(train_step(model, opt, X[idx], y[idx], wb, rng))
        val = log_loss(model, Xv, yv)
        if history is not None:
            history.append((float(np.mean(losses)), val))
        if val < best_loss:
            best_loss, best, stale = val, model.copy(), 0
        else:
            stale += 1
            if patience is not None and stale >= patience:
                logger.debug("early stop at epoch %d (best val loss %.4f)", epoch, best_loss)
                break
    model.load_state(best)
    return model


def save_model(model: MlpModel, path) -> None:
    """Write a self-describing ``.npz`` checkpoint."""
    arrays = {"layer_dims": np.asarray(model.layer_dims, dtype=np.int64),
              "dropout_rates": np.asarray(model.dropout_rates, dtype=np.float64),
              "activation": np.asarray(model.activation)}
    for l, (W, b) in enumerate(zip(model.weights, model.biases)):
        arrays[f"W{l}"] = W
        arrays[f"b{l}"] = b
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path) -> MlpModel:
    with np.load(path) as data:
        n = len(data["layer_dims"]) - 1
        return MlpModel([data[f"W{l}"] for l in range(n)], [data[f"b{l}"] for l in range(n)],
                        tuple(data["dropout_rates"].tolist()), str(data["activation"]))
