#!/usr/bin/env python3
"""Second-moment contrast of untamed vs tamed Euler on the cubic
double-well problem, across a range of levels.

Usage: python scripts/run_blowup.py [outdir]
"""

import sys

from sde_rtm.cli import run_command


def main() -> int:
    outdir = sys.argv[1] if len(sys.argv) > 1 else "results/blowup"
    return run_command([
        "blowup",
        "--levels", "2,4,6,8",
        "--paths", "1000",
        "--master-seed", "20260810",
        "--outdir", outdir,
    ])


if __name__ == "__main__":
    sys.exit(main())
