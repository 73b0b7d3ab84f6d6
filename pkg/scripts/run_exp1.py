#!/usr/bin/env python3
"""Reproduce the synthetic learning study at its canonical settings.

Four target measures x six noise levels x 20 trials, M = 300 samples,
lr = 0.001, 1000 epochs.  Writes the metrics table and a manifest into a run
directory (./runs by default, or $CHIMP_RUN_ROOT).  Takes about a minute.
"""
import sys

from chimp.cli import main

if __name__ == "__main__":
    sys.exit(main(["exp1", "--epochs", "1000", "--lr", "0.001", "--trials", "20",
                   "--m", "300", "--seed", "0"] + sys.argv[1:]))
