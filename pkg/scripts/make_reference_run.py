"""Regenerate ``tests/fixtures/desk_reference.jsonl``.

The acceptance thresholds for the directional experiment were checked
against this run before being frozen. Rerun only when the training
procedure changes on purpose, and review the new numbers by hand.
"""
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from desk import REFERENCE_FILE, desk_corpus, desk_plan  # noqa: E402
from ust.experiment import render_table, run_plan  # noqa: E402

if __name__ == "__main__":
    start = time.perf_counter()
    report = run_plan(desk_plan(), corpus=desk_corpus())
    REFERENCE_FILE.write_text(report.to_json_lines(), encoding="utf-8")
    print(render_table(report), end="")
    print(f"{time.perf_counter() - start:.0f} s")
