"""A small ablation grid with the experiment harness.

Run with ``python demos/04_experiment_grid.py [out_dir]`` (a minute or two).
The same thing from the shell::

    ust gen-data --out data/synth
    ust run --corpus data/synth --cells base,classic_st,ust_easy,ust_easy-conf \\
        --k 30 --seeds 0,1 --su-size 2048 -R 512 --iterations 6 --out runs/demo
    ust inspect runs/demo/runs/ust_easy/K30/seed0 --round 1
"""
# %%
import sys
from pathlib import Path

from ust.data import generate_synthetic_corpus
from ust.experiment import ExperimentPlan, emit_report, render_table, run_plan

out_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("demo_runs")
corpus = generate_synthetic_corpus(seed=0)

plan = ExperimentPlan(corpus=None, cells=["base", "classic_st", "ust_easy", "ust_easy-conf"],
                      ks=[30], seeds=[0, 1],
                      overrides={"su_size": 2048, "budget": 512, "iterations": 6})

# %% Every (cell, K, seed) gets its own split and run directory. Cells with
# the same seed share the split and the teacher, so differences between
# rows come from the self-training method alone.
report = run_plan(plan, corpus=corpus, out_dir=out_dir)
paths = emit_report(report, out_dir)
print(render_table(report))
print("results:", paths["results"])
print("curves:", *[p.name for p in paths["curves"]])
