"""Capacity region of the collision channel as a union of rectangles.

Usage: python3 scripts/capacity_union.py [OUT_DIR] [GRID]
"""

import sys

from macdisp.cli import main

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "results/capacity_union"
    grid = sys.argv[2] if len(sys.argv) > 2 else "200"
    sys.exit(main(["region", "--collision", "--capacity-union", "--grid", grid, "--resolution", "128", "--out", out]))
