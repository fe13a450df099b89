"""Run configuration files: INI-style ``key = value`` lines in four sections.

Unknown sections or keys are hard errors (no silent typos). Command-line
``--set section.key=value`` overrides win over the file, which wins over the
defaults listed here.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .core import ConfigError, TrainConfig

ENV_CONFIG = "SEMFUSE_CONFIG"


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _parse_int_set(text: str) -> frozenset[int]:
    t = text.strip()
    if not t:
        return frozenset()
    return frozenset(int(tok) for tok in t.split(","))


# section -> key -> (parser, default, help)
SCHEMA: dict[str, dict[str, tuple]] = {
    "model": {
        "scales": (int, 3, "encoder/decoder scale count S (2..4)"),
        "base_channels": (int, 16, "channels at full resolution; doubles per scale"),
        "attention_variant": (str, "SLA", "SLA | CHA | SPA | NONE"),
        "class_count": (int, 4, "segmentation classes K"),
        "seg_width": (float, 1.0, "segmentation net width multiplier"),
    },
    "train": {
        "warm_start_rule": (str, "AVERAGE", "AVERAGE | MAX warm-start target"),
        "lambda": (float, 1.0, "weight of the correlation regularizer"),
        "class_mask": (_parse_int_set, frozenset(), "comma list of classes removed from the semantic loss"),
        "warm_start_epochs": (int, 20, "epochs of phase 1"),
        "semantic_epochs": (int, 40, "epochs of phase 2"),
        "lr_warm": (float, 5e-3, "warm-start learning rate"),
        "lr_semantic": (float, 1e-4, "semantic-phase learning rate (both nets)"),
        "batch_size": (int, 1, "images per step"),
        "seed": (int, 0, "seed fixing all stochastic behavior"),
        "grad_clip": (float, 5.0, "global grad-norm clip in phase 2 (0 disables)"),
        "skip_warm_start": (_parse_bool, False, "train phase 2 from scratch (ablation)"),
        "without_sem": (_parse_bool, False, "zero the semantic term; only the regularizer updates (ablation)"),
    },
    "data": {
        "root": (str, "./data", "dataset root holding split directories"),
        "train_split": (str, "train", "split dir used for training"),
        "val_split": (str, "val", "split dir used for validation"),
    },
    "eval": {
        "scored_classes": (_parse_int_set, frozenset(), "classes averaged into mAcc/mIoU during train/ablate validation; empty = all but class 0"),
    },
}

# config keys that feed TrainConfig, with their dataclass field names
_TRAIN_FIELDS = {
    ("model", "scales"): "scales",
    ("model", "base_channels"): "base_channels",
    ("model", "attention_variant"): "attention_variant",
    ("model", "class_count"): "class_count",
    ("model", "seg_width"): "seg_width",
    ("train", "warm_start_rule"): "warm_start_rule",
    ("train", "lambda"): "lambda_reg",
    ("train", "class_mask"): "class_mask",
    ("train", "warm_start_epochs"): "warm_start_epochs",
    ("train", "semantic_epochs"): "semantic_epochs",
    ("train", "lr_warm"): "lr_warm",
    ("train", "lr_semantic"): "lr_semantic",
    ("train", "batch_size"): "batch_size",
    ("train", "seed"): "seed",
    ("train", "grad_clip"): "grad_clip",
    ("train", "skip_warm_start"): "skip_warm_start",
    ("train", "without_sem"): "without_sem",
}


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig
    data_root: str
    train_split: str
    val_split: str
    scored_classes: frozenset[int]


def _key_line(path: Path | None, key: str) -> str:
    if path is None:
        return ""
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if line.strip().lower().startswith(key.lower()):
            return f" ({path}:{lineno})"
    return f" ({path})"


def load_run_config(path: str | Path | None = None,
                    overrides: list[str] | None = None) -> RunConfig:
    """Merge defaults, an optional config file, and --set overrides."""
    values = {sec: {k: spec[1] for k, spec in keys.items()}
              for sec, keys in SCHEMA.items()}

    cfg_path = Path(path) if path else None
    if cfg_path is not None:
        if not cfg_path.is_file():
            raise ConfigError(f"config file not found: {cfg_path}")
        parser = configparser.ConfigParser()
        try:
            parser.read(cfg_path)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from exc
        for sec in parser.sections():
            if sec not in SCHEMA:
                raise ConfigError(f"unknown section [{sec}]{_key_line(cfg_path, '[' + sec)}")
            for key, raw in parser.items(sec):
                _apply(values, sec, key, raw, cfg_path)

    for item in overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        dotted, raw = item.split("=", 1)
        sec, key = dotted.split(".", 1)
        _apply(values, sec.strip(), key.strip(), raw.strip(), None)

    kwargs = {field: values[sec][key] for (sec, key), field in _TRAIN_FIELDS.items()}
    try:
        train = TrainConfig(**kwargs)
    except (ValueError, ConfigError) as exc:
        raise ConfigError(str(exc)) from exc
    return RunConfig(
        train=train,
        data_root=values["data"]["root"],
        train_split=values["data"]["train_split"],
        val_split=values["data"]["val_split"],
        scored_classes=values["eval"]["scored_classes"],
    )


def _apply(values: dict, sec: str, key: str, raw: str, path: Path | None) -> None:
    if sec not in SCHEMA:
        raise ConfigError(f"unknown section [{sec}]")
    if key not in SCHEMA[sec]:
        raise ConfigError(f"unknown key {sec}.{key}{_key_line(path, key)}")
    parse = SCHEMA[sec][key][0]
    try:
        values[sec][key] = parse(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {sec}.{key}: {raw!r}{_key_line(path, key)}") from exc


def default_config_text() -> str:
    """The full documented config with every default, suitable as a template."""
    lines = []
    for sec, keys in SCHEMA.items():
        lines.append(f"[{sec}]")
        for key, (parse, default, help_text) in keys.items():
            if isinstance(default, frozenset):
                default = ",".join(str(v) for v in sorted(default))
            lines.append(f"# {help_text}")
            lines.append(f"{key} = {default}")
        lines.append("")
    return "\n".join(lines)
