"""Empirical CLT distance of the whitened density sum over blocklengths.

Usage: python3 scripts/clt_sweep.py [OUT_DIR] [TRIALS]
"""

import math
import sys
from pathlib import Path

import numpy as np

from macdisp.export import rows_csv
from macdisp.montecarlo import SimConfig, clt_distance_result
from macdisp.region import collision_channel, collision_inputs

NS = (25, 100, 400, 1600)

if __name__ == "__main__":
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "results/clt")
    trials = int(sys.argv[2]) if len(sys.argv) > 2 else 1_000_000
    ch, inp = collision_channel(), collision_inputs(0.2, 0.2)
    rows = []
    for n in NS:
        res = clt_distance_result(ch, inp, SimConfig(n=n, trials=trials, seed=7))
        rows.append({"n": n, "distance": res.distance, "distance_sqrt_n": res.distance * math.sqrt(n), "rank": res.rank})
        print(f"n={n:5d}  distance={res.distance:.4f}  x sqrt(n)={res.distance * math.sqrt(n):.3f}")
    slope = np.polyfit(np.log(NS), np.log([r["distance"] for r in rows]), 1)[0]
    print(f"slope of log distance vs log n: {slope:.2f}")
    out.mkdir(parents=True, exist_ok=True)
    (out / "clt_sweep.csv").write_text(rows_csv(rows))
