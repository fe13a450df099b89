"""Model checkpoints: one uncompressed ZIP archive per model.

Layout (format_version 1, stable):

    manifest.json        {"format_version": 1, "kind": "fusion"|"seg",
                          "params": {name: {"shape": [...], "dtype": "<f4"}},
                          "config": {... serialized TrainConfig ...}}
    params/<name>.bin    raw little-endian float32, C order

Archive members carry a fixed timestamp, so identical parameters produce
byte-identical files (checksummable across runs).
"""

from __future__ import annotations

import dataclasses
import json
import zipfile
from pathlib import Path

import numpy as np
import torch

from .core import TrainConfig

FORMAT_VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)  # zip's minimum timestamp


def config_to_dict(config: TrainConfig) -> dict:
    d = dataclasses.asdict(config)
    d["attention_variant"] = config.attention_variant.value
    d["warm_start_rule"] = config.warm_start_rule.value
    d["class_mask"] = sorted(config.class_mask)
    return d


def config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    d["class_mask"] = frozenset(d.get("class_mask", []))
    return TrainConfig(**d)


def _write_member(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_STORED
    zf.writestr(info, payload)


def save_checkpoint(path: str | Path, model: torch.nn.Module, config: TrainConfig,
                    kind: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    params = {
        name: tensor.detach().to(torch.float32).numpy()
        for name, tensor in model.state_dict().items()
    }
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "params": {
            name: {"shape": list(arr.shape), "dtype": "<f4"}
            for name, arr in sorted(params.items())
        },
        "config": config_to_dict(config),
    }
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        _write_member(zf, "manifest.json", json.dumps(manifest, indent=1, sort_keys=True).encode())
        for name in sorted(params):
            data = np.ascontiguousarray(params[name], dtype="<f4").tobytes()
            _write_member(zf, f"params/{name}.bin", data)
    return path


def load_checkpoint(path: str | Path) -> tuple[str, dict[str, np.ndarray], TrainConfig]:
    """Returns (kind, name -> float32 array, TrainConfig)."""
    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read("manifest.json"))
        if manifest.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint version in {path}")
        params = {}
        for name, meta in manifest["params"].items():
            raw = zf.read(f"params/{name}.bin")
            params[name] = np.frombuffer(raw, dtype="<f4").reshape(meta["shape"]).copy()
    return manifest["kind"], params, config_from_dict(manifest["config"])


def load_into(model: torch.nn.Module, params: dict[str, np.ndarray]) -> None:
    state = {name: torch.from_numpy(arr) for name, arr in params.items()}
    model.load_state_dict(state)


def load_fusion(path: str | Path):
    from .fusion_net import FusionNet

    kind, params, config = load_checkpoint(path)
    if kind != "fusion":
        raise ValueError(f"{path} holds a '{kind}' checkpoint, expected fusion")
    model = FusionNet(config)
    load_into(model, params)
    return model, config


def load_seg(path: str | Path):
    from .seg_net import SegNet

    kind, params, config = load_checkpoint(path)
    if kind != "seg":
        raise ValueError(f"{path} holds a '{kind}' checkpoint, expected seg")
    model = SegNet(config.class_count, config.seg_width, seed=config.seed + 1)
    load_into(model, params)
    return model, config
