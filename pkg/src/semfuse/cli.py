"""Command-line surface: synth, train, fuse, eval, ablate.

Every command is non-interactive, prints machine-parseable ``key=value``
summaries to stdout, and exits 0 on success, 1 on a contract violation,
2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .checkpoint import load_fusion, load_seg
from .config import ENV_CONFIG, default_config_text, load_run_config
from .core import (
    ConfigError,
    NonFiniteLossError,
    palette_for,
    rgb_to_ycbcr,
    validate_pair,
    ycbcr_to_rgb,
)
from .data import (
    SynthSpec,
    generate_synthetic,
    load_gray,
    save_gray,
    save_rgb,
    scan_dataset,
    write_split,
)
from .fusion_net import FusionNet, fuse_pair
from .metrics import curve_csv
from .seg_net import build_seg_net
from .training import (
    AblationPlan,
    AblationRow,
    PhaseOrderError,
    ablation_table,
    default_plan,
    evaluate_images,
    run_ablation,
    semantic_train,
    warm_start,
)

EXIT_OK = 0
EXIT_CONTRACT = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="semfuse",
        description="Semantic-driven infrared/visible image fusion pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("synth", help="generate a seeded synthetic dataset",
                       formatter_class=fmt)
    p.add_argument("--images", type=int, default=32, help="training images to generate")
    p.add_argument("--val-images", type=int, default=0, help="extra validation images")
    p.add_argument("--size", type=int, default=64, help="square image size (divisible by 8)")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--glare-prob", type=float, default=0.5,
                   help="probability a scene contains a saturating glare disc")
    p.add_argument("--out", required=True, help="output dataset root")

    p = sub.add_parser("train", help="run the warm-start and/or semantic phase",
                       formatter_class=fmt)
    _add_config_args(p)
    p.add_argument("--phase", choices=["warm", "semantic", "both"], default="both",
                   help="which training phase(s) to run")
    p.add_argument("--init-from", default=None,
                   help="fusion checkpoint to start the semantic phase from")
    p.add_argument("--out", required=True, help="directory for checkpoints and logs")

    p = sub.add_parser("fuse", help="fuse every pair in a dataset directory",
                       formatter_class=fmt)
    p.add_argument("--model", required=True, help="fusion checkpoint")
    p.add_argument("--input-dir", required=True,
                   help="directory holding ir/ and vis/ subdirectories")
    p.add_argument("--out-dir", required=True, help="where fused images go")
    p.add_argument("--color", action="store_true",
                   help="reattach the visible chrominance to the fused luminance")

    p = sub.add_parser("eval", help="score fused images against their sources",
                       formatter_class=fmt)
    p.add_argument("--fused-dir", required=True, help="directory of fused .png images")
    p.add_argument("--dataset", required=True,
                   help="directory holding ir/, vis/ and optional labels/")
    p.add_argument("--seg-model", default=None,
                   help="segmentation checkpoint; omit for fusion metrics only")
    p.add_argument("--out", required=True, help="directory for report files")

    p = sub.add_parser("ablate", help="run the ablation sweep", formatter_class=fmt)
    _add_config_args(p)
    p.add_argument("--plan", default="default",
                   help="'default' or a JSON plan file [{name, overrides}, ...]")
    p.add_argument("--rows", default=None,
                   help="comma-separated subset of row names to run")
    p.add_argument("--out", required=True, help="directory for the table and row outputs")

    p = sub.add_parser("config", help="print the documented default config",
                       formatter_class=fmt)
    return parser


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", default=os.environ.get(ENV_CONFIG),
                   help=f"run-config file (default: ${ENV_CONFIG})")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   dest="overrides", help="override a config entry; repeatable")


def cmd_synth(args) -> int:
    if args.images < 1:
        print("error: --images must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if args.val_images < 0:
        print("error: --val-images must be >= 0", file=sys.stderr)
        return EXIT_USAGE
    spec = SynthSpec(size=args.size, count=args.images + args.val_images,
                     seed=args.seed, glare_probability=args.glare_prob)
    pairs = generate_synthetic(spec)
    splits = [("train", pairs[:args.images])]
    if args.val_images:
        splits.append(("val", pairs[args.images:]))
    for split, split_pairs in splits:
        split_dir = write_split(split_pairs, args.out, split)
        manifest = scan_dataset(args.out, split, palette_for(spec.class_count))
        (split_dir / "manifest.txt").write_text(manifest.to_lines())
        print(f"split={split} dir={split_dir} images={len(split_pairs)}")
    print(f"seed={args.seed} size={args.size} glare_prob={args.glare_prob}")
    return EXIT_OK


def cmd_train(args) -> int:
    run = load_run_config(args.config, args.overrides)
    config = run.train
    palette = palette_for(config.class_count)
    train_pairs = scan_dataset(run.data_root, run.train_split, palette, config).load_all()
    val_root = Path(run.data_root) / run.val_split
    val_pairs = None
    if val_root.is_dir():
        val_pairs = scan_dataset(run.data_root, run.val_split, palette, config).load_all()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    states = []

    if args.phase in ("warm", "both"):
        fusion = FusionNet(config)
        state = warm_start(fusion, train_pairs, config, out_dir=out)
        states.append(state)
        print(f"phase=warm epochs={config.warm_start_epochs} "
              f"first_epoch_loss={state.epoch_means[0]:.6f} "
              f"final_epoch_loss={state.epoch_means[-1]:.6f} "
              f"checkpoint={out / 'warm_start.ckpt'}")
        warm_started = True
    else:
        fusion = None
        warm_started = False

    if args.phase in ("semantic", "both"):
        if fusion is None:
            if args.init_from:
                fusion, _ = load_fusion(args.init_from)
                warm_started = True
            elif config.skip_warm_start:
                fusion = FusionNet(config)
            else:
                print("error: --phase semantic needs --init-from or "
                      "train.skip_warm_start=true", file=sys.stderr)
                return EXIT_CONTRACT
        seg = build_seg_net(config)
        state = semantic_train(fusion, seg, train_pairs, config,
                               val_pairs=val_pairs, out_dir=out,
                               warm_started=warm_started,
                               scored_classes=sorted(run.scored_classes) or None)
        states.append(state)
        last = state.val_records[-1] if state.val_records else None
        print(f"phase=semantic epochs={config.semantic_epochs} "
              f"first_epoch_loss={state.epoch_means[0]:.6f} "
              f"final_epoch_loss={state.epoch_means[-1]:.6f}"
              + (f" val_mIoU={last['mIoU']:.4f}" if last else ""))
        print(f"checkpoints={out / 'last_fusion.ckpt'},{out / 'last_seg.ckpt'}")

    ok = all(s.trend_ok() for s in states)
    print(f"trend_ok={str(ok).lower()}")
    return EXIT_OK if ok else EXIT_CONTRACT


def cmd_fuse(args) -> int:
    model, config = load_fusion(args.model)
    palette = palette_for(config.class_count)
    manifest = scan_dataset(args.input_dir, "", palette, config)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    failures = []
    written = 0
    for entry in manifest.entries:
        try:
            pair = validate_pair(manifest.load(entry), config)
            fused = fuse_pair(model, pair)
            if args.color:
                ycbcr = rgb_to_ycbcr(pair.vis_rgb)
                ycbcr[..., 0] = fused
                save_rgb(out / f"{pair.id}.png", ycbcr_to_rgb(ycbcr))
            else:
                save_gray(out / f"{pair.id}.png", fused)
            written += 1
        except Exception as exc:  # noqa: BLE001 - per-file failures are listed
            failures.append((entry.id, str(exc)))
    print(f"fused={written} failed={len(failures)} out_dir={out}")
    for fid, reason in failures:
        print(f"failure id={fid} reason={reason}")
    return EXIT_CONTRACT if failures else EXIT_OK


def cmd_eval(args) -> int:
    seg = None
    if args.seg_model:
        seg, seg_config = load_seg(args.seg_model)
        palette = palette_for(seg_config.class_count)
    else:
        palette = palette_for(4)
    manifest = scan_dataset(args.dataset, "", palette)
    fused_dir = Path(args.fused_dir)
    missing = [e.id for e in manifest.entries if not (fused_dir / f"{e.id}.png").is_file()]
    if missing:
        print(f"error: fused images missing for {len(missing)} pairs: "
              + ",".join(missing[:10]), file=sys.stderr)
        return EXIT_CONTRACT
    items = [(manifest.load(e), load_gray(fused_dir / f"{e.id}.png"))
             for e in manifest.entries]
    report = evaluate_images(items, palette, seg=seg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.txt").write_text(report.to_text())
    (out / "sf_curve.csv").write_text(curve_csv(report.sf_curve()))
    (out / "ag_curve.csv").write_text(curve_csv(report.ag_curve()))
    if report.acc:
        (out / "class_table.csv").write_text(report.class_table())
    print(report.to_text(), end="")
    print(f"out_dir={out}")
    return EXIT_OK


def _load_plan(arg: str, palette) -> AblationPlan:
    if arg == "default":
        return default_plan(palette)
    rows = json.loads(Path(arg).read_text())
    parsed = []
    for row in rows:
        overrides = dict(row.get("overrides", {}))
        if "class_mask" in overrides:
            overrides["class_mask"] = frozenset(overrides["class_mask"])
        parsed.append(AblationRow(row["name"], overrides))
    return AblationPlan(tuple(parsed))


def cmd_ablate(args) -> int:
    run = load_run_config(args.config, args.overrides)
    config = run.train
    palette = palette_for(config.class_count)
    train_pairs = scan_dataset(run.data_root, run.train_split, palette, config).load_all()
    val_pairs = scan_dataset(run.data_root, run.val_split, palette, config).load_all()
    plan = _load_plan(args.plan, palette)
    if args.rows:
        wanted = [name.strip() for name in args.rows.split(",")]
        unknown = [w for w in wanted if w not in plan.names()]
        if unknown:
            print(f"error: unknown plan rows {unknown}; have {plan.names()}",
                  file=sys.stderr)
            return EXIT_USAGE
        plan = AblationPlan(tuple(r for r in plan.rows if r.name in wanted))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scored = sorted(run.scored_classes) or None
    results = run_ablation(plan, train_pairs, val_pairs, config, palette,
                           out_dir=out, scored_classes=scored,
                           progress=lambda name: print(f"row={name}"))
    table = ablation_table(results, palette, scored_classes=scored)
    (out / "ablation.csv").write_text(table)
    print(table, end="")
    failed = [n for n, r in results.items() if isinstance(r, str)]
    for name in failed:
        print(f"row_failed={name} reason={results[name]}")
    return EXIT_CONTRACT if failed else EXIT_OK


def cmd_config(_args) -> int:
    print(default_config_text(), end="")
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "fuse": cmd_fuse,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "config": cmd_config,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigError, PhaseOrderError, NonFiniteLossError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONTRACT


if __name__ == "__main__":
    sys.exit(main())
