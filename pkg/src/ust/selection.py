"""Choosing which pseudo-labeled examples go into a self-training round."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import EmptyPoolError
from .uncertainty import UncertaintyEstimate

logger = logging.getLogger(__name__)

STRATEGIES = ("uniform", "easy", "hard")


@dataclass(frozen=True)
class SelectionPolicy:
    """How to draw ``budget`` examples from a scored pool.

    ``raw_bald`` switches the easy/hard weights from BALD normalized by
    ``ln C`` to the raw score in nats; only meaningful for binary tasks,
    since ``1 - BALD`` can go negative once ``C > e``.
    """

    strategy: str = "easy"
    class_dependent: bool = True
    budget: int = 4096
    raw_bald: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.budget < 1:
            raise ValueError("budget must be positive")


@dataclass(frozen=True)
class ScoredCandidate:
    id: int
    estimate: UncertaintyEstimate

    @property
    def label(self) -> int:
        return self.estimate.hard_label


def partition_by_label(pool, n_classes: int) -> list:
    """Split candidates into one list per voted label, preserving pool order."""
    groups = [[] for _ in range(n_classes)]
    for cand in pool:
        groups[cand.label].append(cand)
    return groups


def selection_weights(cands, strategy: str, raw_bald: bool = False) -> np.ndarray:
    """Sampling probabilities over ``cands``.

    ``easy`` favours low BALD (weights ``1 - s``), ``hard`` favours high BALD
    (weights ``s``), where ``s`` is BALD divided by ``ln C``. When the weights
    carry no mass the draw falls back to uniform and a warning is logged.
    """
    n = len(cands)
    if n == 0:
        raise ValueError("no candidates to weight")
    if strategy == "uniform":
        return np.full(n, 1.0 / n)
    s = np.array([c.estimate.bald if raw_bald else c.estimate.bald_norm for c in cands])
    if strategy == "easy":
        w = 1.0 - s
    elif strategy == "hard":
        w = s.copy()
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    if raw_bald and np.any(w < 0):
        logger.warning("raw BALD weights went negative (max BALD %.3f nats); clipping at 0", s.max())
        w = np.maximum(w, 0.0)
    total = w.sum()
    if not total > 0:
        logger.warning("%s selection over %d candidates has zero weight mass; using uniform",
                       strategy, n)
        return np.full(n, 1.0 / n)
    return w / total


def _draw_indices(weights: np.ndarray, k: int, rng) -> list:
    w = np.array(weights, dtype=np.float64)
    chosen = []
    for _ in range(k):
        cdf = np.cumsum(w)
        if not cdf[-1] > 0:
            # only zero-mass items remain; finish uniformly among them
            w = np.ones_like(w)
            w[chosen] = 0.0
            cdf = np.cumsum(w)
        # first index whose cdf exceeds u*total always has positive weight
        i = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        chosen.append(i)
        w[i] = 0.0
    return chosen


def sample_without_replacement(cands, weights, k: int, rng) -> list:
    """Draw ``k`` distinct candidates by successive weighted draws.

    After each draw the chosen item is removed and the remaining weights are
    renormalized. ``k`` larger than the pool is clamped.
    """
    cands = list(cands)
    if k > len(cands):
        logger.info("asked for %d of %d candidates; taking all", k, len(cands))
        k = len(cands)
    if len(weights) != len(cands):
        raise ValueError("one weight per candidate required")
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(weights < 0) or not np.all(np.isfinite(weights)):
        raise ValueError("weights must be finite and non-negative")
    return [cands[i] for i in _draw_indices(weights, k, rng)]


def class_budgets(sizes, budget: int) -> np.ndarray:
    """Per-class selection counts.

    Start from ``budget // C`` each, giving the remainder one apiece to the
    lowest class indices. Classes smaller than their share give up the
    difference, which is handed to the classes that still have room in
    proportion to their pool sizes (largest-remainder rounding, ties to the
    lower index), until nothing is left over or every class is exhausted.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    C = len(sizes)
    budget = min(int(budget), int(sizes.sum()))
    alloc = np.full(C, budget // C, dtype=np.int64)
    alloc[: budget % C] += 1
    while True:
        over = alloc > sizes
        shortfall = int((alloc - sizes)[over].sum())
        alloc[over] = sizes[over]
        room = alloc < sizes
        if shortfall == 0 or not room.any():
            break
        share = shortfall * sizes[room] / sizes[room].sum()
        extra = np.floor(share).astype(np.int64)
        leftover = shortfall - int(extra.sum())
        # stable sort keeps lower indices first among equal fractional parts
        for j in np.argsort(-(share - extra), kind="stable")[:leftover]:
            extra[j] += 1
        alloc[room] += extra
    return alloc


def select(pool, policy: SelectionPolicy, rng, n_classes: Optional[int] = None,
           trace: Optional[list] = None) -> list:
    """Pick up to ``policy.budget`` candidates from a scored pool.

    With ``class_dependent`` the budget is split across voted labels by
    :func:`class_budgets` and each class is sampled separately; otherwise a
    single draw is made over the whole pool. If ``trace`` is given, one dict
    per group (class, or ``-1`` for a global draw) is appended to it.
    """
    pool = list(pool)
    if not pool:
        raise EmptyPoolError("no unlabeled candidates; skip this self-training round")
    if len({c.id for c in pool}) != len(pool):
        raise ValueError("candidate ids must be unique")
    if n_classes is None:
        n_classes = len(pool[0].estimate.mean)

    if policy.class_dependent:
        groups = partition_by_label(pool, n_classes)
        budgets = class_budgets([len(g) for g in groups], policy.budget)
        keyed = list(enumerate(groups))
    else:
        budgets = [min(policy.budget, len(pool))]
        keyed = [(-1, pool)]

    chosen = []
    for (cls, group), k in zip(keyed, budgets):
        picked = []
        if k > 0:
            w = selection_weights(group, policy.strategy, policy.raw_bald)
            picked = sample_without_replacement(group, w, int(k), rng)
        chosen.extend(picked)
        if trace is not None:
            balds = np.array([c.estimate.bald for c in group]) if group else np.zeros(0)
            trace.append({
                "class": cls, "pool_size": len(group), "budget": int(k),
                "chosen_ids": [int(c.id) for c in picked],
                "chosen_labels": [int(c.label) for c in picked],
                "bald_min": float(balds.min()) if len(balds) else math.nan,
                "bald_median": float(np.median(balds)) if len(balds) else math.nan,
                "bald_max": float(balds.max()) if len(balds) else math.nan,
            })
    return chosen
