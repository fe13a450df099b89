"""Dataset ingestion and the seeded synthetic-scene generator.

On-disk layout (one directory per split):

    root/<split>/ir/<id>.png       8-bit grayscale
    root/<split>/vis/<id>.png      8-bit RGB
    root/<split>/labels/<id>.png   8-bit single-channel class indices (optional)

Synthetic scenes pair a smooth visible background with hot elliptical blobs
(bright in infrared, dim in visible), textured rectangles that exist only in
the visible channel, and optionally a saturating glare disc that wipes out
visible content while leaving the infrared untouched.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .core import (
    EmptyDatasetError,
    ImagePair,
    LabelError,
    LabelPalette,
    TrainConfig,
    UnreadableFileError,
    validate_pair,
)

CLASS_BACKGROUND = 0
CLASS_HOT = 1
CLASS_TEXTURE = 2
CLASS_GLARE = 3


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic dataset; generation is a pure function of
    this spec (bit-reproducible)."""

    size: int = 64
    count: int = 32
    class_count: int = 4
    seed: int = 0
    glare_probability: float = 0.5
    blob_count_range: tuple[int, int] = (1, 4)

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if self.size < 16 or self.size % 8:
            raise ValueError("size must be >= 16 and divisible by 8")
        if self.class_count < 4:
            raise ValueError("the generator uses 4 classes; class_count >= 4")
        lo, hi = self.blob_count_range
        if not 1 <= lo <= hi:
            raise ValueError("blob_count_range must satisfy 1 <= lo <= hi")


@dataclass(frozen=True)
class Blob:
    cy: float
    cx: float
    ry: float
    rx: float
    ir_value: float
    vis_value: float


@dataclass(frozen=True)
class Rect:
    y0: int
    y1: int
    x0: int
    x1: int
    stripe: int          # stripe width in pixels
    horizontal: bool
    lo: float
    hi: float


@dataclass(frozen=True)
class Scene:
    """Geometric description of one synthetic image; the rasterizer and the
    test oracles both consume this."""

    index: int
    size: int
    bg_vis: tuple[float, float, float]   # base, gradient-x, gradient-y
    ir_base: float
    ir_waves: tuple[tuple[float, float, float, float], ...]  # amp, kx, ky, phase
    blobs: tuple[Blob, ...] = ()
    rects: tuple[Rect, ...] = ()
    glare: tuple[float, float, float] | None = None  # cy, cx, radius
    noise_seed: int = 0


def sample_scene(spec: SynthSpec, index: int) -> Scene:
    """Draw the scene description for image ``index``; pure given (spec, index)."""
    rng = np.random.default_rng([spec.seed, index])
    n = spec.size
    bg_vis = (rng.uniform(0.12, 0.25), rng.uniform(-0.15, 0.15), rng.uniform(-0.15, 0.15))
    # the thermal background is a smooth low-frequency field
    ir_base = rng.uniform(0.35, 0.5)
    ir_waves = tuple(
        (amp_lo + rng.uniform(0, amp_spread),
         rng.uniform(0.4, 1.2), rng.uniform(0.4, 1.2), rng.uniform(0, 2 * np.pi))
        for amp_lo, amp_spread in ((0.1, 0.08), (0.04, 0.05))
    )

    blobs = []
    for _ in range(rng.integers(spec.blob_count_range[0], spec.blob_count_range[1] + 1)):
        blobs.append(Blob(
            cy=rng.uniform(0.1, 0.9) * n,
            cx=rng.uniform(0.1, 0.9) * n,
            ry=rng.uniform(0.06, 0.13) * n,
            rx=rng.uniform(0.06, 0.13) * n,
            ir_value=rng.uniform(0.95, 1.0),
            vis_value=rng.uniform(0.02, 0.1),
        ))

    rects = []
    for _ in range(rng.integers(1, 3)):
        h = int(rng.uniform(0.15, 0.35) * n)
        w = int(rng.uniform(0.15, 0.35) * n)
        y0 = int(rng.uniform(0, n - h))
        x0 = int(rng.uniform(0, n - w))
        rects.append(Rect(
            y0=y0, y1=y0 + h, x0=x0, x1=x0 + w,
            stripe=int(rng.integers(2, 4)),
            horizontal=bool(rng.integers(0, 2)),
            lo=rng.uniform(0.5, 0.6),
            hi=rng.uniform(0.85, 0.95),
        ))

    glare = None
    if rng.uniform() < spec.glare_probability:
        glare = (
            rng.uniform(0.25, 0.75) * n,
            rng.uniform(0.25, 0.75) * n,
            rng.uniform(0.12, 0.2) * n,
        )
    noise_seed = int(rng.integers(0, 2**31 - 1))
    return Scene(index=index, size=n, bg_vis=bg_vis, ir_base=ir_base,
                 ir_waves=ir_waves, blobs=tuple(blobs),
                 rects=tuple(rects), glare=glare, noise_seed=noise_seed)


def _gradient_field(base: float, gx: float, gy: float, n: int) -> np.ndarray:
    ys, xs = np.mgrid[0:n, 0:n] / max(n - 1, 1)
    return base + gx * xs + gy * ys


def rasterize(scene: Scene) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Scene -> (ir, vis_rgb, label), 8-bit quantized floats in [0, 1].

    Label priority where regions overlap: hot blob > glare > rectangle > background.
    """
    n = scene.size
    ys, xs = np.mgrid[0:n, 0:n].astype(np.float64)
    vis = _gradient_field(*scene.bg_vis, n)
    ir = np.full((n, n), scene.ir_base)
    for amp, kx, ky, phase in scene.ir_waves:
        ir = ir + amp * np.cos(2 * np.pi * (kx * xs + ky * ys) / n + phase)
    label = np.full((n, n), CLASS_BACKGROUND, dtype=np.int64)

    for r in scene.rects:
        coord = ys if r.horizontal else xs
        stripes = ((coord // r.stripe) % 2).astype(bool)
        tex = np.where(stripes, r.hi, r.lo)
        region = np.zeros((n, n), dtype=bool)
        region[r.y0:r.y1, r.x0:r.x1] = True
        vis = np.where(region, tex, vis)
        label[region] = CLASS_TEXTURE

    if scene.glare is not None:
        cy, cx, rad = scene.glare
        inside = (ys - cy) ** 2 + (xs - cx) ** 2 <= rad**2
        vis = np.where(inside, 1.0, vis)
        label[inside] = CLASS_GLARE

    for b in scene.blobs:
        inside = ((ys - b.cy) / b.ry) ** 2 + ((xs - b.cx) / b.rx) ** 2 <= 1.0
        ir = np.where(inside, b.ir_value, ir)
        vis = np.where(inside, b.vis_value, vis)
        label[inside] = CLASS_HOT

    # contrast-match the channels so neither modality dominates the pair;
    # clipping eats part of each stretch, so iterate to the fixed point
    for _ in range(12):
        spread = ir.std()
        if spread < 1e-6 or abs(spread - vis.std()) < 1e-4:
            break
        ir = np.clip((ir - ir.mean()) * (vis.std() / spread) + ir.mean(), 0.0, 1.0)

    noise = np.random.default_rng(scene.noise_seed)
    ir = ir + noise.normal(0.0, 0.01, size=ir.shape)
    vis = vis + noise.normal(0.0, 0.01, size=vis.shape)
    ir = quantize(np.clip(ir, 0.0, 1.0))
    vis = quantize(np.clip(vis, 0.0, 1.0))
    vis_rgb = np.stack([vis, vis, vis], axis=-1)
    return ir.astype(np.float32), vis_rgb.astype(np.float32), label


def quantize(img: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid so a PNG round trip is pixel-exact."""
    return np.round(img * 255.0) / 255.0


def generate_synthetic(spec: SynthSpec) -> list[ImagePair]:
    pairs = []
    for i in range(spec.count):
        ir, vis_rgb, label = rasterize(sample_scene(spec, i))
        pairs.append(ImagePair(id=f"synth_{i:04d}", ir=ir, vis_rgb=vis_rgb, label=label))
    return pairs


# ---------------------------------------------------------------------------
# PNG I/O and dataset scanning
# ---------------------------------------------------------------------------

def load_gray(path: str | Path) -> np.ndarray:
    try:
        img = PILImage.open(path).convert("L")
    except Exception as exc:
        raise UnreadableFileError(f"{path}: {exc}") from exc
    # divide in float64 then narrow, matching the generator's quantize()
    return (np.asarray(img, dtype=np.float64) / 255.0).astype(np.float32)


def load_rgb(path: str | Path) -> np.ndarray:
    try:
        img = PILImage.open(path).convert("RGB")
    except Exception as exc:
        raise UnreadableFileError(f"{path}: {exc}") from exc
    return (np.asarray(img, dtype=np.float64) / 255.0).astype(np.float32)


def load_label(path: str | Path) -> np.ndarray:
    try:
        img = PILImage.open(path).convert("L")
    except Exception as exc:
        raise UnreadableFileError(f"{path}: {exc}") from exc
    return np.asarray(img, dtype=np.int64)


def save_gray(path: str | Path, img: np.ndarray) -> None:
    PILImage.fromarray(np.round(img * 255.0).astype(np.uint8), mode="L").save(path)


def save_rgb(path: str | Path, img: np.ndarray) -> None:
    PILImage.fromarray(np.round(img * 255.0).astype(np.uint8), mode="RGB").save(path)


def save_label(path: str | Path, label: np.ndarray) -> None:
    if label.max() > 255:
        raise LabelError("label indices exceed 8-bit storage")
    PILImage.fromarray(label.astype(np.uint8), mode="L").save(path)


def write_split(pairs: list[ImagePair], root: str | Path, split: str) -> Path:
    """Write pairs under root/<split>/{ir,vis,labels}; returns the split dir."""
    base = Path(root) / split
    (base / "ir").mkdir(parents=True, exist_ok=True)
    (base / "vis").mkdir(parents=True, exist_ok=True)
    has_labels = any(p.label is not None for p in pairs)
    if has_labels:
        (base / "labels").mkdir(parents=True, exist_ok=True)
    for p in pairs:
        save_gray(base / "ir" / f"{p.id}.png", p.ir)
        save_rgb(base / "vis" / f"{p.id}.png", p.vis_rgb)
        if p.label is not None:
            save_label(base / "labels" / f"{p.id}.png", p.label)
    return base


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    ir_path: Path
    vis_path: Path
    label_path: Path | None = None


@dataclass
class DatasetManifest:
    root: Path
    split: str
    entries: list[ManifestEntry]
    palette: LabelPalette
    rejected: list[tuple[str, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def load(self, entry: ManifestEntry) -> ImagePair:
        pair = ImagePair(
            id=entry.id,
            ir=load_gray(entry.ir_path),
            vis_rgb=load_rgb(entry.vis_path),
            label=load_label(entry.label_path) if entry.label_path else None,
        )
        return pair

    def load_all(self) -> list[ImagePair]:
        return [self.load(e) for e in self.entries]

    def to_lines(self) -> str:
        """Line-oriented audit export: id, ir path, vis path, label path."""
        lines = []
        for e in self.entries:
            label = str(e.label_path) if e.label_path else "-"
            lines.append(f"{e.id}\t{e.ir_path}\t{e.vis_path}\t{label}")
        return "\n".join(lines) + "\n"


def scan_dataset(root: str | Path, split: str, palette: LabelPalette,
                 config: TrainConfig | None = None) -> DatasetManifest:
    """Build a validated manifest from root/<split>/{ir,vis,labels}.

    Stems present in only one modality are rejected with a reason; every kept
    entry is decoded once and must pass validate_pair. An empty split name
    means ``root`` itself holds the ir/vis/labels subdirectories.
    """
    base = Path(root) / split if split else Path(root)
    ir_dir, vis_dir, label_dir = base / "ir", base / "vis", base / "labels"
    if not ir_dir.is_dir() or not vis_dir.is_dir():
        raise EmptyDatasetError(f"{base} must contain ir/ and vis/ subdirectories")
    if config is None:
        config = TrainConfig(class_count=palette.class_count)

    def stems(d: Path) -> dict[str, Path]:
        return {p.stem: p for p in sorted(d.glob("*.png"))}

    ir_files, vis_files = stems(ir_dir), stems(vis_dir)
    label_files = stems(label_dir) if label_dir.is_dir() else {}

    entries: list[ManifestEntry] = []
    rejected: list[tuple[str, str]] = []
    for stem in sorted(set(ir_files) | set(vis_files)):
        if stem not in ir_files:
            rejected.append((stem, "missing ir"))
            continue
        if stem not in vis_files:
            rejected.append((stem, "missing vis"))
            continue
        entry = ManifestEntry(
            id=stem,
            ir_path=ir_files[stem],
            vis_path=vis_files[stem],
            label_path=label_files.get(stem),
        )
        pair = ImagePair(
            id=stem,
            ir=load_gray(entry.ir_path),
            vis_rgb=load_rgb(entry.vis_path),
            label=load_label(entry.label_path) if entry.label_path else None,
        )
        try:
            validate_pair(pair, config)
        except LabelError as exc:
            raise LabelError(f"{entry.label_path}: {exc}") from exc
        entries.append(entry)

    if not entries:
        raise EmptyDatasetError(f"no usable pairs under {base}")
    return DatasetManifest(root=Path(root), split=split, entries=entries,
                           palette=palette, rejected=rejected)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

def batch_iterator(source, batch_size: int, seed: int = 0, shuffle: bool = True,
                   epoch: int = 0):
    """Yield lists of ImagePair; deterministic order given (seed, epoch).

    ``source`` is a list of ImagePair or a DatasetManifest (entries are loaded
    lazily). The final partial batch is kept.
    """
    if isinstance(source, DatasetManifest):
        items = list(source.entries)
        load = source.load
    else:
        items = list(source)
        load = None
    if not items:
        raise EmptyDatasetError("batch_iterator got an empty source")
    order = np.arange(len(items))
    if shuffle:
        np.random.default_rng([seed, epoch]).shuffle(order)
    for start in range(0, len(items), batch_size):
        chunk = [items[i] for i in order[start:start + batch_size]]
        yield [load(c) for c in chunk] if load else chunk
