#!/usr/bin/env python3
"""Decision-fusion demo on the two synthetic fixtures.

Writes per-model posterior CSVs for both fixtures into a scratch directory,
runs the fusion pipeline on each through the CLI, and prints where the
metrics and introspection reports ended up.
"""
import sys
import tempfile
from pathlib import Path

from chimp.cli import main
from chimp.fusion import make_complementary_fixture, make_redundant_fixture, save_task_csvs


def run() -> int:
    scratch = Path(tempfile.mkdtemp(prefix="fusion-demo-"))
    comp = scratch / "complementary"
    red = scratch / "redundant"
    save_task_csvs(make_complementary_fixture(), comp)
    save_task_csvs(make_redundant_fixture(), red)

    print("== two complementary half-right sources ==")
    code = main(["fuse", "--posteriors", str(comp), "--epochs", "200", "--seed", "1",
                 "--out", str(scratch / "run_complementary")])
    if code:
        return code
    print("\n== seven near-identical strong sources ==")
    code = main(["fuse", "--posteriors", str(red), "--epochs", "100", "--seed", "1",
                 "--init-low", "0.13", "--init-high", "0.17",
                 "--out", str(scratch / "run_redundant")])
    print(f"\nfixture CSVs and run directories under {scratch}")
    return code


if __name__ == "__main__":
    sys.exit(run())
