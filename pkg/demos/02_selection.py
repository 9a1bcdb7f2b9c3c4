"""Easy versus hard selection and per-class budgets.

Run with ``python demos/02_selection.py``. Builds a synthetic scored pool
and shows how the sampling weights and class budgets shape a draw.
"""
# %%
import math

import numpy as np

from ust.selection import ScoredCandidate, SelectionPolicy, class_budgets, select, selection_weights
from ust.uncertainty import UncertaintyEstimate

rng = np.random.default_rng(0)


def candidate(i, label, bald_norm):
    est = UncertaintyEstimate(mean=np.array([0.5, 0.5]), variance=np.zeros(2),
                              bald=bald_norm * math.log(2), bald_norm=bald_norm,
                              hard_label=label, vote_margin=1.0)
    return ScoredCandidate(i, est)


# %% Weights for two candidates with normalized BALD 0.2 and 0.6.
pair = [candidate(0, 0, 0.2), candidate(1, 0, 0.6)]
print("easy:", selection_weights(pair, "easy"), " hard:", selection_weights(pair, "hard"))

# %% A lopsided pool: 90 examples voted class 0, only 10 voted class 1.
labels = np.r_[np.zeros(90, int), np.ones(10, int)]
pool = [candidate(i, int(c), float(rng.beta(1, 6))) for i, c in enumerate(labels)]

print("budgets for R=40:", class_budgets([90, 10], 40))
print("budgets for R=30:", class_budgets([90, 10], 30))

# %% Class-dependent sampling keeps the minority class represented; a single
# global draw follows the pool's imbalance.
for class_dependent in (True, False):
    chosen = select(pool, SelectionPolicy("easy", class_dependent, 30), rng)
    counts = np.bincount([c.label for c in chosen], minlength=2)
    mean_bald = np.mean([c.estimate.bald_norm for c in chosen])
    print(f"class_dependent={class_dependent}: per class {counts.tolist()}, "
          f"mean normalized BALD {mean_bald:.3f}")

# %% Easy selection leans toward low BALD, hard toward high BALD.
for strategy in ("uniform", "easy", "hard"):
    chosen = select(pool, SelectionPolicy(strategy, False, 30), np.random.default_rng(5))
    print(f"{strategy:8} mean normalized BALD of picks: "
          f"{np.mean([c.estimate.bald_norm for c in chosen]):.3f}")
