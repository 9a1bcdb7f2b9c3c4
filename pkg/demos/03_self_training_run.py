"""One self-training run on the bundled synthetic corpus.

Run with ``python demos/03_self_training_run.py`` (well under a minute). Prints
the teacher's accuracy, the per-round validation log and the final test
accuracy, then compares the pseudo-labels with the withheld truth.
"""
# %%
from ust.data import few_shot_split, generate_synthetic_corpus, withheld_label_accuracy
from ust.nn import accuracy
from ust.self_train import SelfTrainConfig, run_self_training, train_teacher

corpus = generate_synthetic_corpus(n_train=2000, n_test=1000, seed=0)
split = few_shot_split(corpus, K=30, seed=0)
print(f"{len(split.train)} labeled, {len(split.valid)} validation, "
      f"{len(split.unlabeled)} unlabeled, {len(split.test)} test examples")

cfg = SelfTrainConfig(su_size=2048, budget=512, passes=30, iterations=8)

# %% The teacher sees only the 60 labeled examples.
teacher = train_teacher(split, cfg)
print(f"teacher validation accuracy {accuracy(teacher, split.valid.X, split.valid.y):.3f}")

# %% Self-training rounds; the model with the lowest validation loss wins.
result = run_self_training(split, cfg, teacher=teacher)
for rec in result.records:
    print(f"round {rec.round}: val loss {rec.val_loss:.4f} acc {rec.val_accuracy:.3f} "
          f"picked {rec.selected_per_class} mean BALD {rec.mean_bald_selected:.4f} "
          f"mean weight {rec.mean_weight:.2f}")
print("best round:", result.best_round)

# %% How good were the pseudo-labels? The truth for unlabeled examples is
# kept aside for diagnostics like this one and never used in training.
for rnd in (1, result.records[-1].round):
    rows = [t for t in result.traces if t["round"] == rnd]
    ids = [i for t in rows for i in t["chosen_ids"]]
    labels = [t["class"] for t in rows for _ in t["chosen_ids"]]
    print(f"round {rnd}: pseudo-label accuracy {withheld_label_accuracy(split, ids, labels):.3f}")

# %% The test set is read once, at the end.
metrics = split.test.evaluate(result.model)
print(f"test accuracy {metrics['accuracy']:.3f}, macro-F1 {metrics['macro_f1']:.3f}, "
      f"test reads: {split.test.access_count}")
