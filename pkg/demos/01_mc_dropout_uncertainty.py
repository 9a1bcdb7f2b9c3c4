"""Monte-Carlo dropout on a tiny text classifier.

Run with ``python demos/01_mc_dropout_uncertainty.py``. The script trains a
teacher on a few labeled sentences, then scores unseen sentences with
stochastic forward passes and prints the statistics used for selection.
"""
# %%
import math

import numpy as np

from ust.data import featurize_many
from ust.nn import AdamState, MlpModel, fit
from ust.uncertainty import estimate, run_passes

labeled = ["a warm and funny film", "great acting and a moving story", "loved every minute",
           "dull and far too long", "weak plot and wooden acting", "a boring mess"]
y = np.array([0, 0, 0, 1, 1, 1])
X = featurize_many(labeled)

model = MlpModel.init([X.shape[1], 32, 2], dropout_rates=(0.5, 0.5), rng=0)
fit(model, X, y, valid=(X, y), epochs=60, batch_size=2, rng=1,
    opt=AdamState.for_model(model, lr=1e-2))

# %% One sentence, 30 passes: each row of the pass matrix is a softmax output
# under a fresh dropout mask.
x = featurize_many(["funny but far too long"])
pm = run_passes(model, x, T=30, rng=np.random.default_rng(2))
print("first five passes:\n", np.round(pm[:5], 3))

# %% The summary statistics. BALD is the part of the predictive entropy that
# comes from disagreement between passes; the variance is per class.
for text in ["a warm and moving story", "funny but far too long", "the popcorn was cold"]:
    est = estimate(model, featurize_many([text]), T=30, rng=np.random.default_rng(3))
    print(f"{text!r:32} label={est.hard_label} margin={est.vote_margin:.2f} "
          f"bald={est.bald:.4f} (max {math.log(2):.4f}) var@label={est.label_variance:.4f}")

# %% Switching dropout off turns every pass into the same deterministic
# prediction, so both uncertainty measures collapse to exactly zero.
est = estimate(model.with_dropout((0.0, 0.0)), x, T=30, rng=4)
print("dropout off -> bald", est.bald, "variance", est.variance)
