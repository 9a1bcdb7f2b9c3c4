"""Teacher/student self-training with MC-dropout selection and confidence weights.

One round: draw a mini-pool from the unlabeled data, score it with ``T``
stochastic passes, select ``R`` examples, label them with the voted class,
weight them by inverse predictive variance and retrain the current model on
them. Rounds repeat until the validation loss stops improving.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .data import FewShotSplit
from .exceptions import EmptyPoolError
from .nn import AdamState, MlpModel, accuracy, fit, log_loss, save_model
from .selection import ScoredCandidate, SelectionPolicy, select
from .uncertainty import UncertaintyEstimate, estimate_pool

logger = logging.getLogger(__name__)

CONF_EPS = 1e-6

CONFIG_FILE = "config.json"
ROUNDS_FILE = "rounds.jsonl"
TRACE_FILE = "selection_trace.tsv"
MODEL_FILE = "model.npz"
METRICS_FILE = "metrics.json"
SPLIT_FILE = "split.json"


@dataclass
class SelfTrainConfig:
    """Hyper-parameters of teacher training and the self-training rounds."""

    k: int = 30
    passes: int = 30
    su_size: int = 16384
    budget: int = 4096
    iterations: int = 25
    teacher_epochs: int = 50
    student_epochs: int = 25
    teacher_batch: int = 4
    student_batch: int = 32
    patience: int = 5
    epoch_patience: Optional[int] = 10
    strategy: str = "easy"
    class_dependent: bool = True
    confident_learning: bool = True
    include_labeled_in_student: bool = False
    lambda_labeled: float = 1.0
    raw_bald: bool = False
    fresh_student: bool = False
    hidden: int = 128
    input_dropout: float = 0.5
    hidden_dropout: float = 0.5
    learning_rate: float = 1e-3
    track_test: bool = False
    seed: int = 0

    def __post_init__(self):
        counts = ("k", "passes", "su_size", "budget", "teacher_epochs", "student_epochs",
                  "teacher_batch", "student_batch", "hidden")
        for name in counts:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.iterations < 0 or self.patience < 0:
            raise ValueError("iterations and patience must be non-negative")
        if self.budget > self.su_size:
            raise ValueError(f"budget R={self.budget} exceeds mini-pool size {self.su_size}")
        if self.lambda_labeled < 0:
            raise ValueError("lambda_labeled must be non-negative")
        self.policy  # validates the strategy name

    @property
    def policy(self) -> SelectionPolicy:
        return SelectionPolicy(self.strategy, self.class_dependent, self.budget, self.raw_bald)

    @property
    def dropout_rates(self) -> tuple:
        return (self.input_dropout, self.hidden_dropout)

    @classmethod
    def field_types(cls) -> dict:
        return {f.name: f.type for f in fields(cls)}


@dataclass
class RoundRecord:
    round: int
    val_loss: float
    val_accuracy: float
    test_accuracy: Optional[float] = None
    pool_size: int = 0
    selected_per_class: list = field(default_factory=list)
    mean_bald_selected: float = math.nan
    mean_weight: float = math.nan
    skipped: bool = False


@dataclass
class SelfTrainState:
    model: MlpModel
    opt: Optional[AdamState] = None


@dataclass
class SelfTrainResult:
    model: MlpModel
    records: list
    best_round: int
    teacher_val_loss: float
    teacher_val_accuracy: float
    traces: list = field(default_factory=list)


def _rng(seed: int, *keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, keys)]))


def _seed_int(seed: int, *keys) -> int:
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


def new_model(split: FewShotSplit, cfg: SelfTrainConfig, rng) -> MlpModel:
    return MlpModel.init([split.input_dim, cfg.hidden, split.n_classes], cfg.dropout_rates, rng)


def train_teacher(split: FewShotSplit, cfg: SelfTrainConfig) -> MlpModel:
    """Fit a fresh model on the labeled few-shot data with small batches."""
    model = new_model(split, cfg, _rng(cfg.seed, 0, 0))
    return fit(model, split.train.X, split.train.y, valid=(split.valid.X, split.valid.y),
               epochs=cfg.teacher_epochs, batch_size=cfg.teacher_batch,
               patience=cfg.epoch_patience, rng=_rng(cfg.seed, 0, 1),
               opt=AdamState.for_model(model, cfg.learning_rate))


def confidence_weights(label_variance, eps: float = CONF_EPS) -> np.ndarray:
    """``ln(1 + 1/(v + eps))``: large for low-variance pseudo-labels."""
    v = np.asarray(label_variance, dtype=np.float64)
    return np.log1p(1.0 / (v + eps))


def confidence_weight(est: UncertaintyEstimate, eps: float = CONF_EPS) -> float:
    return float(confidence_weights(est.label_variance, eps))


def run_round(state: SelfTrainState, split: FewShotSplit, cfg: SelfTrainConfig,
              round_index: int, trace: Optional[list] = None) -> RoundRecord:
    """One teacher -> student iteration; updates ``state.model`` in place."""
    pool = split.unlabeled
    if len(pool) == 0:
        logger.warning("round %d skipped: unlabeled pool is empty", round_index)
        return RoundRecord(round_index, log_loss(state.model, split.valid.X, split.valid.y),
                           accuracy(state.model, split.valid.X, split.valid.y), skipped=True)

    n_draw = min(cfg.su_size, len(pool))
    rows = np.sort(_rng(cfg.seed, round_index, 0).choice(len(pool), size=n_draw, replace=False))
    ids, X = pool.ids[rows], pool.X[rows]
    est = estimate_pool(state.model, X, ids, cfg.passes, _seed_int(cfg.seed, round_index, 1))
    cands = [ScoredCandidate(int(ids[i]), est[i]) for i in range(n_draw)]

    round_trace = []
    try:
        chosen = select(cands, cfg.policy, _rng(cfg.seed, round_index, 2),
                        split.n_classes, round_trace)
    except EmptyPoolError:
        logger.warning("round %d skipped: nothing to select", round_index)
        return RoundRecord(round_index, log_loss(state.model, split.valid.X, split.valid.y),
                           accuracy(state.model, split.valid.X, split.valid.y),
                           pool_size=n_draw, skipped=True)
    for row in round_trace:
        row["round"] = round_index
    if trace is not None:
        trace.extend(round_trace)

    row_of = {int(i): r for r, i in enumerate(ids)}
    pos = np.array([row_of[c.id] for c in chosen], dtype=np.intp)
    X_train, y_train = X[pos], est.hard_label[pos]
    if cfg.confident_learning:
        w = confidence_weights(est.label_variance[pos])
    else:
        w = np.ones(len(pos))
    mean_weight = float(w.mean())
    if cfg.include_labeled_in_student:
        X_train = sp.vstack([X_train, split.train.X], format="csr")
        y_train = np.concatenate([y_train, split.train.y])
        w = np.concatenate([w, np.full(len(split.train), w.max() * cfg.lambda_labeled)])

    if cfg.fresh_student:
        state.model = new_model(split, cfg, _rng(cfg.seed, round_index, 4))
    state.opt = AdamState.for_model(state.model, cfg.learning_rate)
    fit(state.model, X_train, y_train, w, valid=(split.valid.X, split.valid.y),
        epochs=cfg.student_epochs, batch_size=cfg.student_batch, patience=cfg.epoch_patience,
        rng=_rng(cfg.seed, round_index, 3), opt=state.opt,
        normalize_weights=cfg.confident_learning)

    counts = np.bincount(est.hard_label[pos], minlength=split.n_classes)
    return RoundRecord(
        round=round_index,
        val_loss=log_loss(state.model, split.valid.X, split.valid.y),
        val_accuracy=accuracy(state.model, split.valid.X, split.valid.y),
        test_accuracy=split.test.evaluate(state.model)["accuracy"] if cfg.track_test else None,
        pool_size=n_draw,
        selected_per_class=counts.tolist(),
        mean_bald_selected=float(est.bald[pos].mean()) if len(pos) else math.nan,
        mean_weight=mean_weight,
    )


def run_self_training(split: FewShotSplit, cfg: SelfTrainConfig,
                      teacher: Optional[MlpModel] = None) -> SelfTrainResult:
    """Train a teacher, then self-train for up to ``cfg.iterations`` rounds.

    Returns the model with the lowest validation loss over all rounds,
    the teacher counting as round 0.
    """
    model = teacher.copy() if teacher is not None else train_teacher(split, cfg)
    best_loss = log_loss(model, split.valid.X, split.valid.y)
    teacher_acc = accuracy(model, split.valid.X, split.valid.y)
    result = SelfTrainResult(model.copy(), [], 0, best_loss, teacher_acc)
    state = SelfTrainState(model)
    stale = 0
    for r in range(1, cfg.iterations + 1):
        rec = run_round(state, split, cfg, r, result.traces)
        result.records.append(rec)
        logger.info("round %d: val loss %.4f acc %.4f", r, rec.val_loss, rec.val_accuracy)
        if rec.val_loss < best_loss:
            best_loss, result.best_round, stale = rec.val_loss, r, 0
            result.model = state.model.copy()
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.info("no validation improvement for %d rounds; stopping", stale)
                break
    return result


def _clean(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return _clean(float(value))
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    return value


def record_to_dict(rec: RoundRecord) -> dict:
    return _clean(asdict(rec))


def write_trace(trace: list, path) -> None:
    """Selection trace as a tab-separated table, one row per (round, class)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("round\tclass\tpool_size\tbudget\tbald_min\tbald_median\tbald_max\tchosen_ids\n")
        for row in trace:
            fh.write(f"{row['round']}\t{row['class']}\t{row['pool_size']}\t{row['budget']}\t"
                     f"{row['bald_min']:.6g}\t{row['bald_median']:.6g}\t{row['bald_max']:.6g}\t"
                     f"{','.join(map(str, row['chosen_ids']))}\n")


def read_trace(path) -> list:
    rows = []
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split("\t")
        for line in fh:
            row = dict(zip(header, line.rstrip("\n").split("\t")))
            for key in ("round", "class", "pool_size", "budget"):
                row[key] = int(row[key])
            for key in ("bald_min", "bald_median", "bald_max"):
                row[key] = float(row[key])
            row["chosen_ids"] = [int(i) for i in row["chosen_ids"].split(",") if i]
            rows.append(row)
    return rows


def write_run_dir(run_dir, cfg: SelfTrainConfig, split: FewShotSplit,
                  result: Optional[SelfTrainResult], metrics: dict,
                  model: Optional[MlpModel] = None, checkpoint: bool = True) -> None:
    """Persist one run: config, round log, selection trace, metrics, split, model."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    with open(run_dir / CONFIG_FILE, "w", encoding="utf-8") as fh:
        json.dump(_clean(asdict(cfg)), fh, indent=2, sort_keys=True)
    with open(run_dir / ROUNDS_FILE, "w", encoding="utf-8") as fh:
        for rec in (result.records if result else []):
            fh.write(json.dumps(record_to_dict(rec), sort_keys=True) + "\n")
    write_trace(result.traces if result else [], run_dir / TRACE_FILE)
    with open(run_dir / METRICS_FILE, "w", encoding="utf-8") as fh:
        json.dump(_clean(metrics), fh, indent=2, sort_keys=True)
    with open(run_dir / SPLIT_FILE, "w", encoding="utf-8") as fh:
        json.dump(split.manifest(), fh)
    if checkpoint:
        save_model(model if model is not None else result.model, run_dir / MODEL_FILE)
