"""Two-phase training: warm start toward a pixel-average (or max) target, then
joint fusion + segmentation training under cross-entropy with the correlation
regularizer. Also: evaluation over a dataset and the ablation sweep runner.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import losses, metrics
from .checkpoint import save_checkpoint
from .core import (
    ImagePair,
    LabelPalette,
    NonFiniteLossError,
    TrainConfig,
    WarmStartRule,
)
from .data import batch_iterator
from .fusion_net import FusionNet, fuse_pair
from .seg_net import SegNet, build_seg_net, predict

WARM = "warm"
SEMANTIC = "semantic"


class PhaseOrderError(RuntimeError):
    """Semantic training without a warm-started model must be explicit."""


@dataclass
class TrainState:
    """Bookkeeping for one phase: per-step losses, per-epoch means, log lines."""

    phase: str
    seed: int
    epoch: int = 0
    step: int = 0
    step_losses: list[float] = field(default_factory=list)
    epoch_means: list[float] = field(default_factory=list)
    components: dict[str, list[float]] = field(default_factory=dict)
    val_records: list[dict] = field(default_factory=list)
    log_lines: list[str] = field(default_factory=list)

    def log(self, line: str) -> None:
        self.log_lines.append(line)

    def trend_ok(self) -> bool:
        """The loss-trace contract: final epoch mean below the first."""
        if len(self.epoch_means) < 2:
            return True
        return self.epoch_means[-1] < self.epoch_means[0]

    def write_log(self, path: str | Path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            fh.write("\n".join(self.log_lines) + "\n")


def collate(pairs: list[ImagePair], dtype=torch.float32):
    """Batch of pairs -> (ir, vis, labels) tensors; labels is None if any pair
    lacks one."""
    ir = torch.stack([torch.from_numpy(np.ascontiguousarray(p.ir)) for p in pairs])[:, None].to(dtype)
    vis = torch.stack([torch.from_numpy(np.ascontiguousarray(p.vis_luma)) for p in pairs])[:, None].to(dtype)
    labels = None
    if all(p.label is not None for p in pairs):
        labels = torch.stack([torch.from_numpy(p.label) for p in pairs]).long()
    return ir, vis, labels


def _batches(pairs, config: TrainConfig, phase_code: int, epoch: int):
    return batch_iterator(pairs, config.batch_size,
                          seed=config.seed * 2 + phase_code, shuffle=True,
                          epoch=epoch)


def _warm_loss(rule: WarmStartRule):
    return losses.l_ws_average if rule is WarmStartRule.AVERAGE else losses.l_ws_max


def warm_start(model: FusionNet, pairs: list[ImagePair], config: TrainConfig,
               out_dir: str | Path | None = None) -> TrainState:
    """Phase 1: drive the fusion output toward the configured pixel rule.

    Only the fusion parameters are touched. Saves the resulting snapshot to
    ``out_dir/warm_start.ckpt`` when a directory is given.
    """
    state = TrainState(phase=WARM, seed=config.seed)
    opt = torch.optim.Adam(model.parameters(), lr=config.lr_warm)
    loss_fn = _warm_loss(config.warm_start_rule)
    for epoch in range(config.warm_start_epochs):
        state.epoch = epoch
        epoch_losses = []
        for batch in _batches(pairs, config, 0, epoch):
            ir, vis, _ = collate(batch)
            fused = model(ir, vis)
            loss = loss_fn(fused, ir, vis)
            if not torch.isfinite(loss.value):
                raise NonFiniteLossError(
                    f"warm-start loss diverged on batch {[p.id for p in batch]}"
                )
            opt.zero_grad()
            loss.value.backward()
            opt.step()
            val = float(loss)
            epoch_losses.append(val)
            state.step_losses.append(val)
            state.log(f"step={state.step} phase={WARM} epoch={epoch} loss={val:.6f}")
            state.step += 1
        state.epoch_means.append(float(np.mean(epoch_losses)))
    if out_dir is not None:
        save_checkpoint(Path(out_dir) / "warm_start.ckpt", model, config, "fusion")
        state.write_log(Path(out_dir) / "warm_start.log")
    return state


@torch.no_grad()
def validation_scores(fusion: FusionNet, seg: SegNet, pairs: list[ImagePair],
                      scored_classes: list[int], config: TrainConfig) -> dict:
    """Mean semantic loss, mIoU, and corr sum over a labelled validation set."""
    cm = metrics.ConfusionMatrix(config.class_count)
    sem_vals, corr_sums = [], []
    for pair in pairs:
        ir, vis, labels = collate([pair])
        fused = fusion(ir, vis)
        logits = seg(fused)
        sem_vals.append(float(losses.l_sem(logits, labels, config.class_mask)))
        corr_sums.append(float(losses.corr(ir, fused) + losses.corr(vis, fused)))
        cm.accumulate(predict(logits)[0], pair.label)
    scores = metrics.class_scores(cm, scored_classes)
    return {
        "l_sem": float(np.mean(sem_vals)),
        "mIoU": scores["mIoU"],
        "mAcc": scores["mAcc"],
        "corr_sum": float(np.mean(corr_sums)),
    }


def semantic_train(fusion: FusionNet, seg: SegNet, pairs: list[ImagePair],
                   config: TrainConfig, val_pairs: list[ImagePair] | None = None,
                   out_dir: str | Path | None = None,
                   warm_started: bool = True,
                   scored_classes: list[int] | None = None) -> TrainState:
    """Phase 2: joint training of both networks under sem + lambda * reg.

    Refuses to run on a cold fusion model unless config.skip_warm_start is
    set (the deliberate no-warm-start ablation). With config.without_sem the
    cross-entropy is logged but zeroed out of the update, so only the
    regularizer drives the fusion parameters.
    """
    if not warm_started and not config.skip_warm_start:
        raise PhaseOrderError(
            "semantic phase needs a warm-started model; set skip_warm_start "
            "to train from scratch deliberately"
        )
    state = TrainState(phase=SEMANTIC, seed=config.seed)
    state.components = {"sem": [], "reg": [], "corr_sum": []}
    params = list(fusion.parameters()) + list(seg.parameters())
    opt = torch.optim.Adam(params, lr=config.lr_semantic)
    scored = scored_classes or [k for k in range(1, config.class_count)]

    def validate(epoch: int) -> dict | None:
        if not val_pairs:
            return None
        rec = validation_scores(fusion, seg, val_pairs, scored, config)
        rec["epoch"] = epoch
        state.val_records.append(rec)
        state.log(
            f"val epoch={epoch} l_sem={rec['l_sem']:.6f} mIoU={rec['mIoU']:.4f} "
            f"corr_sum={rec['corr_sum']:.4f}"
        )
        return rec

    validate(-1)  # semantic-phase starting point
    best_miou = -1.0
    for epoch in range(config.semantic_epochs):
        state.epoch = epoch
        epoch_losses = []
        for batch in _batches(pairs, config, 1, epoch):
            ir, vis, labels = collate(batch)
            if labels is None:
                raise ValueError(f"semantic phase needs labels; batch {[p.id for p in batch]}")
            fused = fusion(ir, vis)
            logits = seg(fused)
            if config.without_sem:
                with torch.no_grad():
                    sem = losses.l_sem(logits, labels, config.class_mask).value
                reg = losses.l_reg(fused, ir, vis).value
                total = config.lambda_reg * reg
            else:
                lv = losses.l_st(logits, labels, fused, ir, vis,
                                 config.lambda_reg, config.class_mask)
                sem, reg, total = lv.components["sem"], lv.components["reg"], lv.value
            if not torch.isfinite(total):
                raise NonFiniteLossError(
                    f"semantic loss diverged on batch {[p.id for p in batch]}"
                )
            opt.zero_grad()
            total.backward()
            if config.grad_clip > 0:
                torch.nn.utils.clip_grad_norm_(params, config.grad_clip)
            opt.step()
            with torch.no_grad():
                corr_sum = float(losses.corr(ir, fused) + losses.corr(vis, fused))
            sem_f, reg_f, total_f = (float(t.detach()) for t in (sem, reg, total))
            epoch_losses.append(total_f)
            state.step_losses.append(total_f)
            state.components["sem"].append(sem_f)
            state.components["reg"].append(reg_f)
            state.components["corr_sum"].append(corr_sum)
            state.log(
                f"step={state.step} phase={SEMANTIC} epoch={epoch} "
                f"sem={sem_f:.6f} reg={reg_f:.6f} "
                f"total={total_f:.6f} corr_sum={corr_sum:.4f}"
            )
            state.step += 1
        state.epoch_means.append(float(np.mean(epoch_losses)) if epoch_losses else float("nan"))
        rec = validate(epoch)
        if out_dir is not None and rec is not None and rec["mIoU"] > best_miou:
            best_miou = rec["mIoU"]
            save_checkpoint(Path(out_dir) / "best_fusion.ckpt", fusion, config, "fusion")
            save_checkpoint(Path(out_dir) / "best_seg.ckpt", seg, config, "seg")
    if out_dir is not None:
        save_checkpoint(Path(out_dir) / "last_fusion.ckpt", fusion, config, "fusion")
        save_checkpoint(Path(out_dir) / "last_seg.ckpt", seg, config, "seg")
        state.write_log(Path(out_dir) / "semantic.log")
    return state


def run_pipeline(pairs: list[ImagePair], config: TrainConfig,
                 val_pairs: list[ImagePair] | None = None,
                 out_dir: str | Path | None = None,
                 scored_classes: list[int] | None = None
                 ) -> tuple[FusionNet, SegNet, dict[str, TrainState]]:
    """Both phases end to end from fresh seeded models."""
    fusion = FusionNet(config)
    seg = build_seg_net(config)
    states: dict[str, TrainState] = {}
    if not config.skip_warm_start:
        states[WARM] = warm_start(fusion, pairs, config, out_dir=out_dir)
    states[SEMANTIC] = semantic_train(
        fusion, seg, pairs, config, val_pairs=val_pairs, out_dir=out_dir,
        warm_started=not config.skip_warm_start, scored_classes=scored_classes,
    )
    return fusion, seg, states


def evaluate_images(items: list[tuple[ImagePair, np.ndarray]],
                    palette: LabelPalette,
                    seg: SegNet | None = None,
                    scored_classes: list[int] | None = None) -> metrics.EvalReport:
    """Score already-fused images: SF/AG/correlations always, segmentation
    metrics when a classifier and ground-truth labels are available."""
    report = metrics.EvalReport(class_names=list(palette.class_names))
    if scored_classes is None:
        scored_classes = palette.scored_classes()
    cm = metrics.ConfusionMatrix(palette.class_count)
    scored_any = False
    for pair, fused in items:
        report.image_ids.append(pair.id)
        report.sf.append(metrics.spatial_frequency(fused))
        report.ag.append(metrics.average_gradient(fused))
        ft = torch.from_numpy(np.ascontiguousarray(fused, dtype=np.float32))
        report.corr_ir.append(float(losses.corr(torch.from_numpy(pair.ir), ft)))
        report.corr_vis.append(float(losses.corr(torch.from_numpy(pair.vis_luma), ft)))
        if seg is not None and pair.label is not None:
            with torch.no_grad():
                logits = seg(ft[None, None])
            cm.accumulate(predict(logits)[0], pair.label)
            scored_any = True
    if scored_any:
        scores = metrics.class_scores(cm, scored_classes)
        report.acc, report.iou = scores["acc"], scores["iou"]
        report.m_acc, report.m_iou = scores["mAcc"], scores["mIoU"]
    return report


def evaluate(fusion: FusionNet, seg: SegNet | None, pairs: list[ImagePair],
             palette: LabelPalette,
             scored_classes: list[int] | None = None) -> metrics.EvalReport:
    items = [(pair, fuse_pair(fusion, pair)) for pair in pairs]
    return evaluate_images(items, palette, seg=seg, scored_classes=scored_classes)


# ---------------------------------------------------------------------------
# ablation sweep
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AblationRow:
    name: str
    overrides: dict

    def apply(self, base: TrainConfig) -> TrainConfig:
        return replace(base, **self.overrides)


@dataclass(frozen=True)
class AblationPlan:
    rows: tuple[AblationRow, ...]

    def names(self) -> list[str]:
        return [r.name for r in self.rows]


def default_plan(palette: LabelPalette | None = None,
                 removal_classes: tuple[int, int] = (1, 2)) -> AblationPlan:
    """Structure and strategy rows, plus class-removal rows when a palette is
    given (labels permit masking)."""
    rows = [
        AblationRow("w/o SLA", {"attention_variant": "NONE"}),
        AblationRow("CHA", {"attention_variant": "CHA"}),
        AblationRow("SPA", {"attention_variant": "SPA"}),
        AblationRow("Max-ST", {"warm_start_rule": "MAX"}),
        AblationRow("w/o WS", {"skip_warm_start": True}),
        AblationRow("w/o L_reg", {"lambda_reg": 0.0}),
        AblationRow("Ours (Ave-ST)", {}),
    ]
    if palette is not None:
        a, b = removal_classes
        name_a, name_b = palette.class_names[a], palette.class_names[b]
        rows += [
            AblationRow(f"w/o {name_a}", {"class_mask": frozenset({a})}),
            AblationRow(f"w/o {name_b}", {"class_mask": frozenset({b})}),
            AblationRow(f"w/o {name_a}&{name_b}", {"class_mask": frozenset({a, b})}),
            AblationRow("w/o L_sem", {"without_sem": True}),
        ]
    return AblationPlan(tuple(rows))


def run_ablation(plan: AblationPlan, pairs: list[ImagePair],
                 val_pairs: list[ImagePair], base_config: TrainConfig,
                 palette: LabelPalette,
                 out_dir: str | Path | None = None,
                 scored_classes: list[int] | None = None,
                 progress=None) -> dict[str, metrics.EvalReport | str]:
    """Run every row of the plan from the shared seed; failures are recorded
    per row instead of aborting the sweep."""
    results: dict[str, metrics.EvalReport | str] = {}
    for row in plan.rows:
        if progress:
            progress(row.name)
        try:
            config = row.apply(base_config)
            row_dir = Path(out_dir) / _slug(row.name) if out_dir else None
            fusion, seg, _ = run_pipeline(pairs, config, val_pairs=val_pairs,
                                          out_dir=row_dir,
                                          scored_classes=scored_classes)
            results[row.name] = evaluate(fusion, seg, val_pairs, palette,
                                         scored_classes=scored_classes)
        except Exception as exc:  # noqa: BLE001 - per-row failure is data
            results[row.name] = f"failed: {exc}"
    return results


def _slug(name: str) -> str:
    keep = [c if c.isalnum() else "_" for c in name]
    return "".join(keep).strip("_").lower()


def ablation_table(results: dict[str, metrics.EvalReport | str],
                   palette: LabelPalette,
                   scored_classes: list[int] | None = None) -> str:
    """CSV: one row per ablation config, per-class IoU columns plus mIoU."""
    scored = scored_classes or palette.scored_classes()
    header = ["config"] + [f"iou[{palette.class_names[k]}]" for k in scored] + ["mIoU"]
    lines = [",".join(header)]
    for name, rep in results.items():
        if isinstance(rep, str):
            lines.append(",".join([_csv_quote(name)] + [""] * len(scored) + [rep.replace(",", ";")]))
            continue
        cells = [f"{rep.iou[k]:.4f}" if k in rep.iou else "" for k in scored]
        lines.append(",".join([_csv_quote(name)] + cells + [f"{rep.m_iou:.4f}"]))
    return "\n".join(lines) + "\n"


def _csv_quote(cell: str) -> str:
    return f'"{cell}"' if "," in cell else cell
