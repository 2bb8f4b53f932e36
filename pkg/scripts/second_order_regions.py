"""Second-order regions of the collision channel at p1 = p2 = 0.2, n = 50, eps = 0.01.

Writes the first-order region and the four second-order regions (CSV, SVG,
JSON), then prints each region's distance from its best-fit rectangle.

Usage: python3 scripts/second_order_regions.py [OUT_DIR]
"""

import json
import sys
from pathlib import Path

from macdisp.cli import main

if __name__ == "__main__":
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "results/second_order")
    code = main(["region", "--collision", "--p1", "0.2", "--p2", "0.2", "--n", "50", "--eps", "0.01", "--out", str(out)])
    if code == 0:
        summary = json.loads((out / "region.json").read_text())
        for kind, dev in summary["rectangle_deviation_nats"].items():
            print(f"{kind:>9}: distance from rectangle {dev:.2e} nats")
    sys.exit(code)
