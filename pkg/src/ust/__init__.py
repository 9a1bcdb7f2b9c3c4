"""Uncertainty-aware self-training for few-shot text classification.

A hashed bag-of-words dropout MLP is fit on a handful of labeled examples,
then repeatedly pseudo-labels unlabeled text. Monte-Carlo dropout passes
give each pseudo-label a BALD score and a predictive variance; selection
favours examples the teacher is sure about, and the student's loss is
weighted by inverse variance.
"""
from .data import (Corpus, FewShotSplit, TestSet, featurize, featurize_many, few_shot_split,
                   generate_synthetic_corpus, load_corpus, write_corpus)
from .exceptions import (CorpusError, DimensionMismatchError, EmptyPoolError, SplitError,
                         TrainingDivergedError, UstError)
from .experiment import Cell, ExperimentPlan, RunReport, emit_report, load_plan, run_plan
from .nn import AdamState, MlpModel, fit, forward_deterministic, forward_stochastic, predict_proba
from .selection import SelectionPolicy, select
from .self_train import SelfTrainConfig, SelfTrainResult, run_self_training, train_teacher
from .uncertainty import (UncertaintyEstimate, bald_score, estimate, estimate_pool,
                          predictive_mean, predictive_variance, vote_hard_label)

__version__ = "0.1.0"
