"""Multi-seed experiment harness: ablation cells, K sweeps and reports.

A plan is a grid of *cells* (method plus ablation flags) x K values x
seeds. Every run gets a fresh few-shot split, trains, picks its model on
validation data and touches the test set exactly once.

Cell names::

    base                   teacher only
    classic_st             uniform selection, plain loss, labeled data mixed in
    ust_easy, ust_hard     uncertainty-aware self-training
    ust_easy-class         ... without class-dependent selection
    ust_easy-conf          ... without confident learning
"""
from __future__ import annotations

import configparser
import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .data import Corpus, few_shot_split, load_corpus
from .nn import accuracy, log_loss
from .self_train import (SelfTrainConfig, record_to_dict, run_self_training, train_teacher,
                         write_run_dir, _clean)

logger = logging.getLogger(__name__)

METHODS = ("base", "classic_st", "ust_easy", "ust_hard")
DEFAULT_SEEDS = (0, 1, 2, 3, 4)
K_SWEEP = (20, 30, 50, 100, 500, 1000)
TABLE3_CELLS = ("base", "classic_st", "ust_easy", "ust_easy-class", "ust_easy-conf",
                "ust_hard", "ust_hard-class", "ust_hard-conf")

RESULTS_FILE = "results.jsonl"
TABLE_FILE = "table.txt"
CURVES_DIR = "curves"


@dataclass(frozen=True)
class Cell:
    method: str
    class_dependent: bool = True
    confident: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")

    @classmethod
    def parse(cls, name: str) -> "Cell":
        method, *flags = name.strip().split("-")
        unknown = set(flags) - {"class", "conf"}
        if unknown:
            raise ValueError(f"unknown ablation flag(s) {sorted(unknown)} in {name!r}")
        if flags and not method.startswith("ust_"):
            raise ValueError(f"ablation flags only apply to ust_* methods, got {name!r}")
        return cls(method, "class" not in flags, "conf" not in flags)

    @property
    def name(self) -> str:
        suffix = ("" if self.class_dependent else "-class") + ("" if self.confident else "-conf")
        return self.method + suffix

    def configure(self, cfg: SelfTrainConfig) -> SelfTrainConfig:
        if self.method == "classic_st":
            return replace(cfg, strategy="uniform", class_dependent=False,
                           confident_learning=False, include_labeled_in_student=True)
        if self.method.startswith("ust_"):
            return replace(cfg, strategy=self.method[4:], class_dependent=self.class_dependent,
                           confident_learning=self.confident)
        return cfg


@dataclass
class ExperimentPlan:
    corpus: Optional[str]
    cells: list = field(default_factory=lambda: [Cell.parse(c) for c in TABLE3_CELLS])
    ks: list = field(default_factory=lambda: [30])
    seeds: list = field(default_factory=lambda: list(DEFAULT_SEEDS))
    overrides: dict = field(default_factory=dict)
    master_seed: int = 0

    def __post_init__(self):
        self.cells = [c if isinstance(c, Cell) else Cell.parse(c) for c in self.cells]
        if not self.seeds:
            raise ValueError("a plan needs at least one seed")
        if not self.cells or not self.ks:
            raise ValueError("a plan needs at least one cell and one K")

    def base_config(self) -> SelfTrainConfig:
        return SelfTrainConfig(**self.overrides)


def _coerce(name: str, raw: str):
    types = SelfTrainConfig.field_types()
    if name not in types:
        raise ValueError(f"unknown config key {name!r}")
    kind = str(types[name])
    raw = raw.strip()
    if "bool" in kind:
        if raw.lower() not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
            raise ValueError(f"{name}: expected a boolean, got {raw!r}")
        return raw.lower() in ("true", "1", "yes", "on")
    if "Optional" in kind and raw.lower() in ("none", ""):
        return None
    if "int" in kind:
        return int(raw)
    if "float" in kind:
        return float(raw)
    return raw


def parse_overrides(pairs) -> dict:
    """``["passes=10", "strategy=hard"]`` -> typed config overrides."""
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep:
            raise ValueError(f"override {pair!r} is not key=value")
        key = key.strip().replace("-", "_")
        out[key] = _coerce(key, value)
    return out


def _split_list(raw: str) -> list:
    return [x.strip() for x in raw.replace("\n", ",").split(",") if x.strip()]


def load_plan(path) -> ExperimentPlan:
    """Read a plan file.

    Example::

        [plan]
        corpus = data/toy
        cells = base, classic_st, ust_easy
        k = 30
        seeds = 0, 1, 2, 3, 4
        master_seed = 0

        [config]
        passes = 30
        su_size = 2048
    """
    parser = configparser.ConfigParser()
    if not parser.read(path, encoding="utf-8"):
        raise FileNotFoundError(path)
    plan = parser["plan"] if parser.has_section("plan") else {}
    overrides = {}
    if parser.has_section("config"):
        overrides = {k: _coerce(k, v) for k, v in parser["config"].items()}
    corpus = plan.get("corpus")
    if corpus and not Path(corpus).is_absolute():
        corpus = str(Path(path).parent / corpus)
    return ExperimentPlan(
        corpus=corpus,
        cells=_split_list(plan.get("cells", ",".join(TABLE3_CELLS))),
        ks=[int(k) for k in _split_list(plan.get("k", "30"))],
        seeds=[int(s) for s in _split_list(plan.get("seeds", "0,1,2,3,4"))],
        overrides=overrides,
        master_seed=int(plan.get("master_seed", 0)),
    )


def derive_seed(master: int, *keys) -> int:
    return int(np.random.SeedSequence([int(master), *map(int, keys)]).generate_state(1)[0])


@dataclass
class RunReport:
    """Per-run result records plus aggregation helpers."""

    records: list = field(default_factory=list)

    @property
    def failed(self) -> list:
        return [r for r in self.records if r["status"] != "ok"]

    def cells(self) -> list:
        return list(dict.fromkeys(r["cell"] for r in self.records))

    def ks(self) -> list:
        return sorted({r["K"] for r in self.records})

    def accuracies(self, cell: str, K: int) -> list:
        return [r["test_accuracy"] for r in self.records
                if r["cell"] == cell and r["K"] == K and r["status"] == "ok"]

    def summary(self, cell: str, K: int) -> dict:
        accs = self.accuracies(cell, K)
        return {"mean": float(np.mean(accs)) if accs else None,
                # sample standard deviation; undefined below two seeds
                "std": float(np.std(accs, ddof=1)) if len(accs) >= 2 else None,
                "n": len(accs), "values": accs}

    def to_json_lines(self) -> str:
        return "".join(json.dumps(_clean(r), sort_keys=True) + "\n" for r in self.records)


def _run_one(corpus: Corpus, cell: Cell, K: int, seed: int, plan: ExperimentPlan,
             base_cfg: SelfTrainConfig, out_dir: Optional[Path], checkpoints: bool) -> dict:
    split = few_shot_split(corpus, K, derive_seed(plan.master_seed, K, seed, 0))
    cfg = cell.configure(replace(base_cfg, k=K, seed=derive_seed(plan.master_seed, K, seed, 1)))
    result = None
    if cell.method == "base":
        model = train_teacher(split, cfg)
        best_round, rounds = 0, []
        teacher_val = (log_loss(model, split.valid.X, split.valid.y),
                       accuracy(model, split.valid.X, split.valid.y))
    else:
        result = run_self_training(split, cfg)
        model, best_round = result.model, result.best_round
        rounds = [record_to_dict(r) for r in result.records]
        teacher_val = (result.teacher_val_loss, result.teacher_val_accuracy)
    metrics = split.test.evaluate(model)
    record = {"cell": cell.name, "K": K, "seed": seed, "status": "ok",
              "test_accuracy": metrics["accuracy"], "macro_f1": metrics["macro_f1"],
              "best_round": best_round, "teacher_val_loss": teacher_val[0],
              "teacher_val_accuracy": teacher_val[1], "rounds": rounds,
              "test_accesses": split.test.access_count}
    if out_dir is not None:
        write_run_dir(out_dir / "runs" / cell.name / f"K{K}" / f"seed{seed}", cfg, split,
                      result, record, model=model, checkpoint=checkpoints)
    return record


def run_plan(plan: ExperimentPlan, corpus: Optional[Corpus] = None, out_dir=None,
             checkpoints: bool = False) -> RunReport:
    """Run every (cell, K, seed) combination of ``plan``.

    Randomness is derived from ``(master_seed, K, seed)`` only, so all cells
    of one seed share the split and the teacher. A failing run is logged and
    recorded with ``status = "failed"``; the rest of the plan continues.
    """
    if corpus is None:
        if not plan.corpus:
            raise ValueError("plan has no corpus")
        corpus = load_corpus(plan.corpus)
    base_cfg = plan.base_config()
    out_dir = Path(out_dir) if out_dir is not None else None
    report = RunReport()
    for K in plan.ks:
        for seed in plan.seeds:
            for cell in plan.cells:
                try:
                    rec = _run_one(corpus, cell, K, seed, plan, base_cfg, out_dir, checkpoints)
                except Exception as exc:  # isolate per-run failures
                    logger.exception("run %s K=%d seed=%d failed", cell.name, K, seed)
                    rec = {"cell": cell.name, "K": K, "seed": seed, "status": "failed",
                           "error": f"{type(exc).__name__}: {exc}", "test_accuracy": None,
                           "best_round": None, "rounds": []}
                else:
                    logger.info("%s K=%d seed=%d: test accuracy %.4f (best round %d)",
                                cell.name, K, seed, rec["test_accuracy"], rec["best_round"])
                report.records.append(rec)
    return report


def format_cell(mean: Optional[float], std: Optional[float]) -> str:
    """Percent accuracy with the standard deviation in parentheses, e.g. ``88.19 (1.01)``."""
    if mean is None:
        return "failed"
    return f"{100 * mean:.2f} ({100 * std:.2f})" if std is not None else f"{100 * mean:.2f} (-)"


def render_table(report: RunReport) -> str:
    ks = report.ks()
    header = ["cell"] + [f"K={k}" for k in ks]
    rows = []
    for cell in report.cells():
        stats = [report.summary(cell, K) for K in ks]
        rows.append([cell] + [format_cell(s["mean"], s["std"]) for s in stats])
    widths = [max(len(r[i]) for r in [header] + rows) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(c.ljust(w) for c, w in zip(r, widths)) for r in rows]
    return "\n".join(lines) + "\n"


def _curve_rows(report: RunReport, cell: str, K: int):
    runs = [r for r in report.records if r["cell"] == cell and r["K"] == K and r["status"] == "ok"]
    seeds = [r["seed"] for r in runs]
    n_rounds = max((len(r["rounds"]) for r in runs), default=0)
    header = ["round", "mean_val_accuracy"] + [f"seed{s}_val_accuracy" for s in seeds]
    rows = []
    for i in range(n_rounds):
        vals = [r["rounds"][i]["val_accuracy"] if i < len(r["rounds"]) else None for r in runs]
        present = [v for v in vals if v is not None]
        rows.append([i + 1, f"{np.mean(present):.6f}"] +
                    ["" if v is None else f"{v:.6f}" for v in vals])
    return header, rows


def emit_report(report: RunReport, out_dir) -> dict:
    """Write ``results.jsonl``, ``table.txt`` and one round-curve CSV per cell and K."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {"results": out_dir / RESULTS_FILE, "table": out_dir / TABLE_FILE, "curves": []}
    paths["results"].write_text(report.to_json_lines(), encoding="utf-8")
    paths["table"].write_text(render_table(report), encoding="utf-8")
    curves = out_dir / CURVES_DIR
    curves.mkdir(exist_ok=True)
    for cell in report.cells():
        for K in report.ks():
            header, rows = _curve_rows(report, cell, K)
            path = curves / f"{cell}_K{K}.csv"
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(header)
                writer.writerows(rows)
            paths["curves"].append(path)
    return paths


def load_results(path) -> RunReport:
    with open(path, encoding="utf-8") as fh:
        return RunReport([json.loads(line) for line in fh if line.strip()])
