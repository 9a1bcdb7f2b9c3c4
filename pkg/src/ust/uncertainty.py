"""Monte-Carlo dropout statistics for unlabeled examples.

A *pass matrix* is a ``(T, C)`` array holding the softmax output of ``T``
stochastic forward passes. All statistics below accept a single pass matrix
or a stack of them with shape ``(..., T, C)`` and reduce over the last two
axes, so a whole pool is scored with array operations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import xlogy

from .nn import MlpModel, _forward, _keep_mask, as_batch, softmax

DEFAULT_PASSES = 30


def check_pass_matrix(pm, atol: float = 1e-9) -> np.ndarray:
    pm = np.asarray(pm, dtype=np.float64)
    if pm.ndim < 2 or pm.shape[-2] < 1:
        raise ValueError(f"pass matrix must have shape (..., T>=1, C), got {pm.shape}")
    if np.any(pm < 0) or np.any(pm > 1):
        raise ValueError("pass matrix entries must lie in [0, 1]")
    if not np.allclose(pm.sum(axis=-1), 1.0, rtol=0, atol=atol):
        raise ValueError("pass matrix rows must sum to 1")
    return pm


def _constant_columns(pm: np.ndarray) -> np.ndarray:
    return np.ptp(pm, axis=-2) == 0


def predictive_mean(pm) -> np.ndarray:
    """Average class distribution over the passes."""
    return check_pass_matrix(pm).mean(axis=-2)


def predictive_variance(pm) -> np.ndarray:
    """Per-class variance of the pass probabilities, ``E[p^2] - E[p]^2``.

    The data-noise term is taken as zero. Constant columns are set to exactly
    0 and round-off negatives are clamped.
    """
    pm = check_pass_matrix(pm)
    mean = pm.mean(axis=-2)
    var = np.maximum((pm ** 2).mean(axis=-2) - mean ** 2, 0.0)
    return np.where(_constant_columns(pm), 0.0, var)


def bald_score(pm):
    """Mutual information between prediction and weights, in nats.

    Entropy of the mean prediction minus the mean per-pass entropy, clipped
    to ``[0, ln C]``. Returns a float for one matrix, an array for a stack.
    """
    pm = check_pass_matrix(pm)
    mean = pm.mean(axis=-2)
    entropy_of_mean = -xlogy(mean, mean).sum(axis=-1)
    mean_entropy = -xlogy(pm, pm).sum(axis=-1).mean(axis=-1)
    score = np.clip(entropy_of_mean - mean_entropy, 0.0, math.log(pm.shape[-1]))
    score = np.where(np.all(_constant_columns(pm), axis=-1), 0.0, score)
    return float(score) if score.ndim == 0 else score


def vote_hard_label(pm):
    """Majority vote over per-pass argmax labels.

    Ties (within a pass and between vote counts) go to the lowest class
    index. Returns ``(label, margin)`` where margin is the winning vote share.
    """
    pm = check_pass_matrix(pm)
    T, C = pm.shape[-2:]
    votes = pm.argmax(axis=-1)
    counts = (votes[..., None] == np.arange(C)).sum(axis=-2)
    label = counts.argmax(axis=-1)
    margin = counts.max(axis=-1) / T
    if label.ndim == 0:
        return int(label), float(margin)
    return label, margin


@dataclass
class UncertaintyEstimate:
    mean: np.ndarray
    variance: np.ndarray
    bald: float
    bald_norm: float
    hard_label: int
    vote_margin: float

    @property
    def label_variance(self) -> float:
        """Variance at the voted class, the scalar used for confidence weights."""
        return float(self.variance[self.hard_label])


def summarize(pm) -> UncertaintyEstimate:
    pm = check_pass_matrix(pm)
    bald = bald_score(pm)
    label, margin = vote_hard_label(pm)
    return UncertaintyEstimate(mean=predictive_mean(pm), variance=predictive_variance(pm),
                               bald=bald, bald_norm=bald / math.log(pm.shape[-1]),
                               hard_label=label, vote_margin=margin)


def _draw_pass_noise(model: MlpModel, nnz: int, T: int, rng) -> list:
    # one uniform block per dropout layer; rate-0 layers draw nothing
    noise = []
    for l, rate in enumerate(model.dropout_rates):
        if rate == 0.0:
            noise.append(None)
        else:
            width = nnz if l == 0 else model.layer_dims[l]
            noise.append(rng.random((T, width)))
    return noise


def run_passes(model: MlpModel, features, T: int = DEFAULT_PASSES, rng=None) -> np.ndarray:
    """``T`` stochastic forward passes for one example, as a ``(T, C)`` matrix."""
    if T < 1:
        raise ValueError("T must be >= 1")
    x, _ = as_batch(features, model.input_dim)
    if x.shape[0] != 1:
        raise ValueError("run_passes scores a single example; use estimate_pool for batches")
    rng = np.random.default_rng(rng)
    nnz = x.nnz
    tiled = sp.csr_matrix((np.tile(x.data, T), np.tile(x.indices, T), np.arange(T + 1) * nnz),
                          shape=(T, x.shape[1]))
    noise = _draw_pass_noise(model, nnz, T, rng)
    masks = [None if u is None else _keep_mask(u if l else u.ravel(), model.dropout_rates[l])
             for l, u in enumerate(noise)]
    return softmax(_forward(model, tiled, masks)[0])


def estimate(model: MlpModel, features, T: int = DEFAULT_PASSES, rng=None) -> UncertaintyEstimate:
    return summarize(run_passes(model, features, T, rng))


def example_rng(seed: int, example_id: int) -> np.random.Generator:
    """Random stream for one example, independent of scoring order."""
    return np.random.default_rng([int(seed), int(example_id)])


@dataclass
class PoolEstimate:
    """Columnar uncertainty estimates for a pool of examples."""

    ids: np.ndarray
    mean: np.ndarray
    variance: np.ndarray
    bald: np.ndarray
    bald_norm: np.ndarray
    hard_label: np.ndarray
    vote_margin: np.ndarray

    def __len__(self):
        return len(self.ids)

    def __getitem__(self, i) -> UncertaintyEstimate:
        return UncertaintyEstimate(self.mean[i], self.variance[i], float(self.bald[i]),
                                   float(self.bald_norm[i]), int(self.hard_label[i]),
                                   float(self.vote_margin[i]))

    @property
    def label_variance(self) -> np.ndarray:
        return self.variance[np.arange(len(self)), self.hard_label]

    def write_dump(self, path) -> None:
        """Tab-separated dump: id, label, margin, bald, max variance."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("id\tlabel\tmargin\tbald\tmax_variance\n")
            for i in range(len(self)):
                fh.write(f"{self.ids[i]}\t{self.hard_label[i]}\t{self.vote_margin[i]:.6f}\t"
                         f"{self.bald[i]:.8f}\t{self.variance[i].max():.8f}\n")


def pool_passes(model: MlpModel, X, ids, T: int, seed: int) -> np.ndarray:
    """Pass matrices for every row of ``X``, shape ``(n, T, C)``.

    Row ``i`` uses :func:`example_rng` ``(seed, ids[i])``, so it equals
    ``run_passes(model, X[i], T, example_rng(seed, ids[i]))`` up to BLAS
    round-off, whatever the pool composition or order.
    """
    X, _ = as_batch(X, model.input_dim)
    n = X.shape[0]
    noise = [None if rate == 0.0 else
             np.empty((T, X.nnz)) if l == 0 else np.empty((n, T, model.layer_dims[l]))
             for l, rate in enumerate(model.dropout_rates)]
    for i, ex_id in enumerate(ids):
        lo, hi = X.indptr[i], X.indptr[i + 1]
        for l, u in enumerate(_draw_pass_noise(model, hi - lo, T, example_rng(seed, ex_id))):
            if u is None:
                continue
            if l == 0:
                noise[0][:, lo:hi] = u
            else:
                noise[l][i] = u
    out = np.empty((n, T, model.n_classes))
    for t in range(T):
        masks = [None if u is None else
                 _keep_mask(u[t] if l == 0 else u[:, t], model.dropout_rates[l])
                 for l, u in enumerate(noise)]
        out[:, t] = softmax(_forward(model, X, masks)[0])
    return out


def estimate_pool(model: MlpModel, X, ids, T: int = DEFAULT_PASSES, seed: int = 0) -> PoolEstimate:
    """Score a whole pool; see :func:`pool_passes` for the random-stream contract."""
    ids = np.asarray(ids)
    pm = pool_passes(model, X, ids, T, seed)
    bald = bald_score(pm)
    bald = np.atleast_1d(bald)
    label, margin = vote_hard_label(pm)
    return PoolEstimate(ids=ids, mean=predictive_mean(pm), variance=predictive_variance(pm),
                        bald=bald, bald_norm=bald / math.log(model.n_classes),
                        hard_label=np.atleast_1d(label), vote_margin=np.atleast_1d(margin))
