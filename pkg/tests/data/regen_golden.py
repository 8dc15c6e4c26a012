"""Rebuild the compare fixture.  Run from anywhere; review the diff before committing.

Writes golden_test.csv, golden.ckpt and compare_golden.csv.
"""

import os
import sys

from protogen.cli import main

HERE = os.path.dirname(os.path.abspath(__file__))
CONFIG = os.path.join(HERE, "golden.ini")


def regen():
    for argv in (
        ["gen-data", CONFIG],
        ["train", CONFIG],
        ["compare", CONFIG, "--summary", os.path.join(HERE, "compare_golden.csv")],
    ):
        if main(argv) != 0:
            sys.exit(f"failed: {' '.join(argv)}")
    for part in ("all", "train", "val"):
        os.remove(os.path.join(HERE, f"golden_{part}.csv"))


if __name__ == "__main__":
    regen()
