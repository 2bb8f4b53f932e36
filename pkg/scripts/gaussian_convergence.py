"""Convergence of quantized-input (I_m, V_m, D_m) for the Gaussian MAC.

Usage: python3 scripts/gaussian_convergence.py [OUT_DIR] [P1] [P2]
"""

import sys

from macdisp.cli import main

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "results/gaussian"
    p1 = sys.argv[2] if len(sys.argv) > 2 else "1"
    p2 = sys.argv[3] if len(sys.argv) > 3 else "1"
    sys.exit(main(["gaussian", "--p1", p1, "--p2", p2, "--m-sweep", "1:16", "--out", out]))
