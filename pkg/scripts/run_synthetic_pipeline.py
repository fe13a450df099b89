#!/usr/bin/env python3
"""End-to-end desk-scale experiment on the synthetic glare scenario:
generate data, run both training phases, fuse the validation split, and
score it. Everything lands under --workdir.
"""

import argparse
import sys
from pathlib import Path

from semfuse.cli import main as cli


def main() -> int:
    parser = argparse.ArgumentParser(
        description=__doc__, formatter_class=argparse.ArgumentDefaultsHelpFormatter
    )
    parser.add_argument("--workdir", default="runs/synthetic", help="output root")
    parser.add_argument("--images", type=int, default=32, help="training images")
    parser.add_argument("--val-images", type=int, default=8)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    work = Path(args.workdir)
    data = work / "data"
    run = work / "train"
    fused = work / "fused"
    reports = work / "eval"

    steps = [
        ["synth", "--images", str(args.images), "--val-images", str(args.val_images),
         "--size", str(args.size), "--seed", str(args.seed), "--out", str(data)],
        ["train", "--phase", "both", "--out", str(run),
         "--set", f"data.root={data}", "--set", f"train.seed={args.seed}"],
        ["fuse", "--model", str(run / "last_fusion.ckpt"),
         "--input-dir", str(data / "val"), "--out-dir", str(fused)],
        ["eval", "--fused-dir", str(fused), "--dataset", str(data / "val"),
         "--seg-model", str(run / "last_seg.ckpt"), "--out", str(reports)],
    ]
    for step in steps:
        print(f"\n### semfuse {' '.join(step)}")
        rc = cli(step)
        if rc != 0:
            return rc
    print(f"\nartifacts under {work}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
