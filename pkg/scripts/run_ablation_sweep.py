#!/usr/bin/env python3
"""Run the ablation matrix on the synthetic dataset: the structure rows
(w/o SLA, CHA, SPA), the strategy rows (Max-ST, w/o WS, w/o L_reg), the full
method, and the class-removal rows. Expect roughly an hour of CPU for the
full table; use --rows for a subset.
"""

import argparse
import sys
from pathlib import Path

from semfuse.cli import main as cli


def main() -> int:
    parser = argparse.ArgumentParser(
        description=__doc__, formatter_class=argparse.ArgumentDefaultsHelpFormatter
    )
    parser.add_argument("--workdir", default="runs/ablation", help="output root")
    parser.add_argument("--images", type=int, default=32)
    parser.add_argument("--val-images", type=int, default=8)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--rows", default=None,
                        help="comma-separated subset of plan rows")
    args = parser.parse_args()

    work = Path(args.workdir)
    data = work / "data"
    rc = cli(["synth", "--images", str(args.images),
              "--val-images", str(args.val_images), "--seed", str(args.seed),
              "--out", str(data)])
    if rc != 0:
        return rc
    cmd = ["ablate", "--out", str(work / "table"),
           "--set", f"data.root={data}", "--set", f"train.seed={args.seed}"]
    if args.rows:
        cmd += ["--rows", args.rows]
    return cli(cmd)


if __name__ == "__main__":
    sys.exit(main())
