#!/usr/bin/env python3
"""Finite-difference verification of the analytic gradients, n = 2..5."""
import sys

from chimp.cli import main

if __name__ == "__main__":
    worst = 0
    for n in (2, 3, 4, 5):
        code = main(["gradcheck", "--n", str(n), "--cases", "100", "--seed", "0"]
                    + sys.argv[1:])
        worst = max(worst, code)
    sys.exit(worst)
