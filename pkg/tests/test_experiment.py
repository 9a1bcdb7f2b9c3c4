import csv
import json

import numpy as np
import pytest

from ust.cli import main
from ust.data import generate_synthetic_corpus, write_corpus
from ust.experiment import (K_SWEEP, Cell, ExperimentPlan, RunReport, emit_report, format_cell,
                            load_plan, load_results, parse_overrides, render_table, run_plan)

TINY = {"passes": 4, "su_size": 120, "budget": 40, "iterations": 2, "teacher_epochs": 8,
        "student_epochs": 3, "hidden": 8, "patience": 1}


@pytest.fixture(scope="module")
def corpus():
    return generate_synthetic_corpus(n_train=240, n_test=80, seed=4)


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory, corpus):
    d = tmp_path_factory.mktemp("corpus")
    write_corpus(corpus, d)
    return d


def test_cell_parsing():
    c = Cell.parse("ust_easy-conf")
    assert (c.method, c.class_dependent, c.confident) == ("ust_easy", True, False)
    assert Cell.parse("ust_hard-class-conf").name == "ust_hard-class-conf"
    assert Cell.parse("classic_st").name == "classic_st"
    for bad in ("ust_medium", "base-conf", "ust_easy-fast"):
        with pytest.raises(ValueError):
            Cell.parse(bad)


def test_classic_cell_configuration():
    from ust.self_train import SelfTrainConfig
    cfg = Cell.parse("classic_st").configure(SelfTrainConfig())
    assert (cfg.strategy, cfg.class_dependent, cfg.confident_learning,
            cfg.include_labeled_in_student) == ("uniform", False, False, True)
    cfg = Cell.parse("ust_hard-class").configure(SelfTrainConfig())
    assert (cfg.strategy, cfg.class_dependent, cfg.confident_learning) == ("hard", False, True)


def test_plan_defaults_and_validation():
    plan = ExperimentPlan("x")
    assert plan.seeds == [0, 1, 2, 3, 4]
    assert K_SWEEP == (20, 30, 50, 100, 500, 1000)
    with pytest.raises(ValueError):
        ExperimentPlan("x", seeds=[])
    with pytest.raises(ValueError):
        ExperimentPlan("x", cells=["nope"])


def test_overrides_are_typed():
    got = parse_overrides(["passes=5", "raw-bald=yes", "learning_rate=0.01", "strategy=hard",
                           "epoch_patience=none"])
    assert got == {"passes": 5, "raw_bald": True, "learning_rate": 0.01, "strategy": "hard",
                   "epoch_patience": None}
    with pytest.raises(ValueError):
        parse_overrides(["unknown=1"])
    with pytest.raises(ValueError):
        parse_overrides(["passes"])


def test_load_plan(tmp_path):
    p = tmp_path / "plan.ini"
    p.write_text("[plan]\ncorpus = data\ncells = base, ust_easy-conf\nk = 20, 30\nseeds = 1, 2\n"
                 "master_seed = 7\n\n[config]\nsu_size = 64\nbudget = 16\n")
    plan = load_plan(p)
    assert plan.corpus == str(tmp_path / "data")
    assert [c.name for c in plan.cells] == ["base", "ust_easy-conf"]
    assert plan.ks == [20, 30] and plan.seeds == [1, 2] and plan.master_seed == 7
    assert plan.overrides == {"su_size": 64, "budget": 16}


def test_format_cell():
    assert format_cell(0.88191, 0.01012) == "88.19 (1.01)"
    assert format_cell(0.5, None) == "50.00 (-)"


def test_empty_report(tmp_path):
    assert render_table(RunReport()).splitlines()[0].strip() == "cell"
    emit_report(RunReport(), tmp_path)
    assert (tmp_path / "results.jsonl").read_text() == ""


def test_single_base_run(corpus):
    report = run_plan(ExperimentPlan(None, ["base"], [10], [0], dict(TINY)), corpus=corpus)
    assert len(report.accuracies("base", 10)) == 1
    s = report.summary("base", 10)
    assert s["std"] is None and 0 <= s["mean"] <= 1


@pytest.fixture(scope="module")
def small_report(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    plan = ExperimentPlan(None, ["base", "classic_st", "ust_easy"], [10], [0, 1], dict(TINY))
    report = run_plan(plan, corpus=corpus, out_dir=out)
    emit_report(report, out)
    return report, out


def test_report_records_and_audit(small_report):
    report, _ = small_report
    assert not report.failed
    assert len(report.records) == 6
    for rec in report.records:
        assert rec["test_accesses"] == 1
        assert {"cell", "K", "seed", "test_accuracy", "best_round", "rounds"} <= set(rec)


def test_base_and_round_zero_share_teacher(small_report):
    report, _ = small_report
    for seed in (0, 1):
        recs = [r for r in report.records if r["seed"] == seed]
        assert len({r["teacher_val_loss"] for r in recs}) == 1


def test_report_files(small_report):
    report, out = small_report
    lines = (out / "results.jsonl").read_text().splitlines()
    assert [json.loads(line) for line in lines] == json.loads(json.dumps(report.records))
    table = (out / "table.txt").read_text()
    assert "classic_st" in table and "K=10" in table
    with open(out / "curves" / "ust_easy_K10.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:2] == ["round", "mean_val_accuracy"]
    assert [int(r[0]) for r in rows[1:]] == list(range(1, len(rows)))
    assert (out / "runs" / "ust_easy" / "K10" / "seed0" / "selection_trace.tsv").exists()
    assert load_results(out / "results.jsonl").records == json.loads(json.dumps(report.records))


def test_failures_are_isolated(corpus):
    report = run_plan(ExperimentPlan(None, ["base"], [10, 500], [0], dict(TINY)), corpus=corpus)
    assert [r["status"] for r in report.records] == ["ok", "failed"]
    assert "SplitError" in report.failed[0]["error"]
    assert "failed" in render_table(report)


def test_plan_is_deterministic(corpus):
    plan = ExperimentPlan(None, ["ust_easy"], [10], [3], dict(TINY))
    a = run_plan(plan, corpus=corpus).to_json_lines()
    b = run_plan(plan, corpus=corpus).to_json_lines()
    assert a == b


def test_cli_end_to_end(tmp_path, corpus_dir, capsys):
    out = tmp_path / "out"
    args = ["run", "--corpus", str(corpus_dir), "--cells", "base,ust_easy", "--k", "10",
            "--seeds", "0", "-T", "4", "--su-size", "120", "-R", "40", "--iterations", "2",
            "--set", "hidden=8", "--set", "teacher_epochs=8", "--set", "student_epochs=3",
            "--out", str(out)]
    assert main(args) == 0
    assert "ust_easy" in capsys.readouterr().out
    assert (out / "runs" / "ust_easy" / "K10" / "seed0" / "model.npz").exists()

    assert main(["report", str(out / "results.jsonl")]) == 0
    assert main(["inspect", str(out / "runs" / "ust_easy" / "K10" / "seed0"), "--ids"]) == 0
    assert "bald_med" in capsys.readouterr().out


def test_cli_exit_code_on_failure(tmp_path, corpus_dir):
    args = ["run", "--corpus", str(corpus_dir), "--cells", "base", "--k", "1000", "--seeds", "0",
            "--out", str(tmp_path), "--no-checkpoints"]
    assert main(args) == 1


def test_cli_gen_data(tmp_path, capsys):
    assert main(["gen-data", "--out", str(tmp_path), "--classes", "3", "--train-size", "90",
                 "--test-size", "30", "--seed", "2"]) == 0
    lines = (tmp_path / "train.tsv").read_text().splitlines()
    assert len(lines) == 90
    assert {line.split("\t")[0] for line in lines} == {"class0", "class1", "class2"}
    assert np.all([len(line.split("\t")) == 2 for line in lines])
