"""Command line entry point: ``ust run | gen-data | report | inspect``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .data import generate_synthetic_corpus, write_corpus
from .experiment import (ExperimentPlan, emit_report, load_plan, load_results, parse_overrides,
                         render_table, run_plan)
from .self_train import ROUNDS_FILE, TRACE_FILE, read_trace


def _csv(kind=str):
    return lambda raw: [kind(x) for x in raw.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ust", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment plan")
    run.add_argument("--plan", type=Path, help="plan file; flags below override it")
    run.add_argument("--corpus", help="corpus directory (train.tsv/test.tsv) or train file")
    run.add_argument("--cells", "--method", dest="cells", type=_csv(),
                     help="comma-separated cells, e.g. base,classic_st,ust_easy-conf")
    run.add_argument("--k", type=_csv(int), help="labeled examples per class (list allowed)")
    run.add_argument("--seeds", type=_csv(int))
    run.add_argument("--master-seed", type=int)
    run.add_argument("-T", "--passes", type=int, help="stochastic passes per example")
    run.add_argument("--su-size", type=int, help="unlabeled mini-pool per round")
    run.add_argument("-R", "--budget", type=int, help="examples selected per round")
    run.add_argument("--iterations", type=int, help="maximum self-training rounds")
    run.add_argument("--include-labeled", action=argparse.BooleanOptionalAction, default=None,
                     help="mix the labeled set into student training for ust cells")
    run.add_argument("--raw-bald", action=argparse.BooleanOptionalAction, default=None)
    run.add_argument("--set", dest="overrides", action="append", default=[],
                     metavar="KEY=VALUE", help="any other config field")
    run.add_argument("--out", type=Path, required=True)
    run.add_argument("--no-checkpoints", action="store_true")

    gen = sub.add_parser("gen-data", help="write a synthetic corpus")
    gen.add_argument("--out", type=Path, required=True)
    gen.add_argument("--classes", type=int, default=2)
    gen.add_argument("--train-size", type=int, default=2000)
    gen.add_argument("--test-size", type=int, default=1000)
    gen.add_argument("--overlap", type=float, default=0.2, help="vocabulary overlap")
    gen.add_argument("--signal", type=float, default=0.3)
    gen.add_argument("--class-vocab", type=int, default=300)
    gen.add_argument("--seed", type=int, default=0)

    rep = sub.add_parser("report", help="re-render tables and curves from results.jsonl")
    rep.add_argument("results", type=Path)
    rep.add_argument("--out", type=Path, help="directory for table and curves")

    ins = sub.add_parser("inspect", help="dump selection traces of one run directory")
    ins.add_argument("run_dir", type=Path)
    ins.add_argument("--round", type=int)
    ins.add_argument("--ids", action="store_true", help="also print chosen example ids")
    return parser


def _plan_from_args(args) -> ExperimentPlan:
    plan = load_plan(args.plan) if args.plan else ExperimentPlan(corpus=None)
    if args.corpus:
        plan.corpus = args.corpus
    if args.cells:
        plan = ExperimentPlan(plan.corpus, args.cells, plan.ks, plan.seeds, plan.overrides,
                              plan.master_seed)
    if args.k:
        plan.ks = args.k
    if args.seeds:
        plan.seeds = args.seeds
    if args.master_seed is not None:
        plan.master_seed = args.master_seed
    flags = {"passes": args.passes, "su_size": args.su_size, "budget": args.budget,
             "iterations": args.iterations, "include_labeled_in_student": args.include_labeled,
             "raw_bald": args.raw_bald}
    plan.overrides.update({k: v for k, v in flags.items() if v is not None})
    plan.overrides.update(parse_overrides(args.overrides))
    if not plan.corpus:
        raise SystemExit("ust run: a corpus is required (--corpus or plan file)")
    return plan


def cmd_run(args) -> int:
    plan = _plan_from_args(args)
    plan.base_config()  # fail fast on bad overrides
    report = run_plan(plan, out_dir=args.out, checkpoints=not args.no_checkpoints)
    emit_report(report, args.out)
    print(render_table(report), end="")
    for rec in report.failed:
        print(f"FAILED {rec['cell']} K={rec['K']} seed={rec['seed']}: {rec['error']}",
              file=sys.stderr)
    return 1 if report.failed else 0


def cmd_gen_data(args) -> int:
    corpus = generate_synthetic_corpus(n_train=args.train_size, n_test=args.test_size,
                                       n_classes=args.classes, class_vocab=args.class_vocab,
                                       signal=args.signal, overlap=args.overlap, seed=args.seed)
    write_corpus(corpus, args.out)
    print(f"wrote {args.train_size} train / {args.test_size} test examples to {args.out}")
    return 0


def cmd_report(args) -> int:
    report = load_results(args.results)
    if args.out:
        emit_report(report, args.out)
    print(render_table(report), end="")
    return 1 if report.failed else 0


def cmd_inspect(args) -> int:
    rows = read_trace(args.run_dir / TRACE_FILE)
    if args.round is not None:
        rows = [r for r in rows if r["round"] == args.round]
    print("round  class  pool  budget  bald_min  bald_med  bald_max")
    for r in rows:
        print(f"{r['round']:5d}  {r['class']:5d}  {r['pool_size']:4d}  {r['budget']:6d}  "
              f"{r['bald_min']:8.4f}  {r['bald_median']:8.4f}  {r['bald_max']:8.4f}")
        if args.ids:
            print("       ids:", " ".join(map(str, r["chosen_ids"])))
    rounds_path = args.run_dir / ROUNDS_FILE
    if rounds_path.exists():
        for line in rounds_path.read_text(encoding="utf-8").splitlines():
            rec = json.loads(line)
            if args.round is None or rec["round"] == args.round:
                print(f"round {rec['round']}: val_loss={rec['val_loss']:.4f} "
                      f"val_acc={rec['val_accuracy']:.4f} per_class={rec['selected_per_class']}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": cmd_run, "gen-data": cmd_gen_data, "report": cmd_report,
               "inspect": cmd_inspect}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
