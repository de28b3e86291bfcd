"""Regenerate golden_seeded_depth3.json with a straight-line reference evaluator.

Nothing from the package is imported: forecasts are recomputed from the
keyed generator recipe and every prefix probability is a plain product of
Python floats.  Run from the repository root:

    python3 tests/data/make_golden.py
"""

import itertools
import json
from pathlib import Path

import numpy as np

SEEDS = (11, 12)
DEPTH = 3
FLOOR = 0.1


def forecast(seed, prefix):
    rng = np.random.default_rng([seed, len(prefix), *prefix])
    w = rng.dirichlet(np.ones(2))
    p = FLOOR / 2 + (1.0 - FLOOR) * w
    p = p / p.sum()
    return [float(p[0]), float(p[1])]


def main():
    leaves = []
    for path in itertools.product((0, 1), repeat=DEPTH):
        f_prob, g_prob = 1.0, 1.0
        steps = []
        for t in range(DEPTH):
            prefix = list(path[:t])
            pf, pg = forecast(SEEDS[0], prefix), forecast(SEEDS[1], prefix)
            x = path[t]
            f_prob *= pf[x]
            g_prob *= pg[x]
            steps.append({
                "f": pf, "g": pg, "f_prefix": f_prob, "g_prefix": g_prob,
                "D": f_prob / (f_prob + g_prob),
                "L": 1.0 if g_prob < f_prob else (0.0 if g_prob > f_prob else 0.5),
            })
        leaves.append({"outcomes": list(path), "steps": steps})
    out = {"strategies": [f"seeded-random:{s}" for s in SEEDS], "depth": DEPTH, "leaves": leaves}
    target = Path(__file__).with_name("golden_seeded_depth3.json")
    target.write_text(json.dumps(out, indent=1) + "\n")


if __name__ == "__main__":
    main()
