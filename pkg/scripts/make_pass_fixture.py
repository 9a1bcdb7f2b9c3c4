"""Freeze a 30x4 pass matrix and its statistics computed without numpy.

The expected values come from plain Python loops and the ``math`` module,
so they are independent of the vectorized implementation they check.
"""
import json
import math
import random
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures" / "pass_matrix_30x4.json"


def make_matrix(T=30, C=4, seed=20240101):
    rnd = random.Random(seed)
    rows = []
    for _ in range(T):
        logits = [rnd.gauss(0.0, 1.0) + (1.5 if c == 2 else 0.0) for c in range(C)]
        z = [math.exp(v) for v in logits]
        s = sum(z)
        rows.append([v / s for v in z])
    return rows


def stats(rows):
    T, C = len(rows), len(rows[0])
    mean = [sum(r[c] for r in rows) / T for c in range(C)]
    var = [sum((r[c] - mean[c]) ** 2 for r in rows) / T for c in range(C)]
    h_mean = -sum(p * math.log(p) for p in mean if p > 0)
    mean_h = sum(-sum(p * math.log(p) for p in r if p > 0) for r in rows) / T
    votes = [0] * C
    for r in rows:
        votes[max(range(C), key=lambda c: (r[c], -c))] += 1
    label = max(range(C), key=lambda c: (votes[c], -c))
    return {"mean": mean, "variance": var, "bald": h_mean - mean_h,
            "hard_label": label, "vote_margin": votes[label] / T}


if __name__ == "__main__":
    rows = make_matrix()
    OUT.write_text(json.dumps({"pass_matrix": rows, "expected": stats(rows)}, indent=1))
    print(json.dumps(stats(rows), indent=1))
