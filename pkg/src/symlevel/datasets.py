"""Synthetic symmetry datasets: corpora, per-class profiles, and persistence.

A base corpus holds upright images with class ids. A symmetry profile maps each
class to a SymmetrySpec. Building a dataset draws one rotation per sample from
its class spec, applies it with bilinear interpolation, and records the applied
angle as ground truth.

Two corpus sources exist: MNIST-format IDX ingestion, and a self-contained
procedural glyph generator (stroke compositions with no nontrivial rotational
stabilizer) so the pipeline runs without any external files.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .angles import CYCLIC, GAUSSIAN, UNIFORM, SymmetrySpec, cyclic_elements, sample_spec
from .imaging import rotate_image
from .persist import (
    ManifestError,
    parse_float_field,
    read_blob,
    read_manifest,
    write_blob,
    write_manifest,
)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

PRESETS = ("rot60", "rot60_90", "multiple", "gaussian", "c2_c4", "full", "none")

_RECORD_HEADER = ("sample_id", "class_id", "base_index", "applied_angle", "family", "param")


class IdxFormatError(ValueError):
    """Raised for malformed IDX byte streams."""


@dataclass
class BaseCorpus:
    images: np.ndarray  # (N, H, W) float32 in [0, 1], upright
    labels: np.ndarray  # (N,) int class ids

    def __post_init__(self) -> None:
        if len(self.images) != len(self.labels):
            raise ValueError("corpus images and labels must have equal length")

    @property
    def n_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0


@dataclass(frozen=True)
class SampleRecord:
    sample_id: int
    class_id: int
    base_index: int
    applied_angle: float
    spec: SymmetrySpec


@dataclass
class SymDataset:
    images: np.ndarray  # (N, H, W) float32
    records: list[SampleRecord]
    split: str = "train"

    def __post_init__(self) -> None:
        if len(self.images) != len(self.records):
            raise ValueError("dataset images and records must have equal length")

    def __len__(self) -> int:
        return len(self.records)

    def class_ids(self) -> np.ndarray:
        return np.array([r.class_id for r in self.records], dtype=np.int64)

    def applied_angles(self) -> np.ndarray:
        return np.array([r.applied_angle for r in self.records], dtype=np.float64)


# ---------------------------------------------------------------------------
# IDX ingestion
# ---------------------------------------------------------------------------

def parse_idx(data: bytes) -> np.ndarray:
    """Parse an IDX byte stream (big-endian MNIST distribution format).

    Images (magic 0x00000803) return a (count, rows, cols) uint8 array;
    labels (magic 0x00000801) return a (count,) uint8 array.
    """
    if len(data) < 8:
        raise IdxFormatError(f"truncated header: {len(data)} bytes")
    (magic,) = struct.unpack_from(">I", data, 0)
    if magic == IDX_IMAGES_MAGIC:
        if len(data) < 16:
            raise IdxFormatError("truncated image header (need 16 bytes)")
        count, rows, cols = struct.unpack_from(">III", data, 4)
        expected = count * rows * cols
        payload = data[16:]
        if len(payload) != expected:
            raise IdxFormatError(
                f"image payload length {len(payload)} != {count}x{rows}x{cols} = {expected}"
            )
        return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols).copy()
    if magic == IDX_LABELS_MAGIC:
        (count,) = struct.unpack_from(">I", data, 4)
        payload = data[8:]
        if len(payload) != count:
            raise IdxFormatError(f"label payload length {len(payload)} != count {count}")
        return np.frombuffer(payload, dtype=np.uint8).copy()
    raise IdxFormatError(f"unsupported IDX magic 0x{magic:08x}")


def load_idx_corpus(images_path: str | Path, labels_path: str | Path, pad_to: int | None = None) -> BaseCorpus:
    """Load an IDX image/label pair into a corpus, optionally zero-padding to a square size."""
    images = parse_idx(Path(images_path).read_bytes())
    labels = parse_idx(Path(labels_path).read_bytes())
    if images.ndim != 3:
        raise IdxFormatError(f"{images_path}: expected an image file, got shape {images.shape}")
    if labels.ndim != 1:
        raise IdxFormatError(f"{labels_path}: expected a label file, got shape {labels.shape}")
    if len(images) != len(labels):
        raise IdxFormatError(f"image count {len(images)} != label count {len(labels)}")
    imgs = images.astype(np.float32) / 255.0
    if pad_to is not None and pad_to > imgs.shape[1]:
        n, h, w = imgs.shape
        top = (pad_to - h) // 2
        left = (pad_to - w) // 2
        padded = np.zeros((n, pad_to, pad_to), dtype=np.float32)
        padded[:, top : top + h, left : left + w] = imgs
        imgs = padded
    return BaseCorpus(images=imgs, labels=labels.astype(np.int64))


# ---------------------------------------------------------------------------
# Procedural glyph corpus
# ---------------------------------------------------------------------------

# Stroke tables in unit coordinates (x right, y down), one glyph per class.
# Letter-like compositions with no nontrivial rotational stabilizer, ordered
# so that small class counts get maximally dissimilar shapes.
_GLYPH_STROKES: list[list[tuple[float, float, float, float]]] = [
    [(0.30, 0.20, 0.30, 0.80), (0.30, 0.20, 0.72, 0.20), (0.30, 0.50, 0.62, 0.50)],  # F
    [(0.60, 0.20, 0.30, 0.60), (0.30, 0.60, 0.72, 0.60), (0.60, 0.20, 0.60, 0.80)],  # 4
    [(0.30, 0.20, 0.70, 0.20), (0.62, 0.20, 0.62, 0.75), (0.62, 0.75, 0.38, 0.75), (0.38, 0.75, 0.38, 0.62)],  # J
    [(0.35, 0.20, 0.35, 0.78), (0.35, 0.78, 0.70, 0.78)],  # L
    [(0.30, 0.22, 0.70, 0.22), (0.70, 0.22, 0.42, 0.80)],  # 7
    [(0.32, 0.20, 0.32, 0.80), (0.32, 0.20, 0.66, 0.20), (0.66, 0.20, 0.66, 0.45), (0.32, 0.45, 0.66, 0.45)],  # P
    [(0.35, 0.35, 0.35, 0.80), (0.35, 0.44, 0.62, 0.30)],  # r
    [(0.32, 0.18, 0.32, 0.80), (0.32, 0.50, 0.64, 0.50), (0.64, 0.50, 0.64, 0.80)],  # h
    [(0.50, 0.20, 0.50, 0.80), (0.32, 0.38, 0.68, 0.38)],  # t
    [(0.32, 0.20, 0.32, 0.80), (0.32, 0.52, 0.66, 0.24), (0.40, 0.46, 0.66, 0.80)],  # k
]


_EDGE_RAMP_PX = 3.0  # soft edge width; keeps rotation round trips low-loss


def _render_strokes(strokes, size: int, width_px: float, dx: float, dy: float) -> np.ndarray:
    """Rasterize line segments with soft edges; intensity is the max over strokes."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    img = np.zeros((size, size), dtype=np.float64)
    for x0, y0, x1, y1 in strokes:
        ax, ay = x0 * (size - 1) + dx, y0 * (size - 1) + dy
        bx, by = x1 * (size - 1) + dx, y1 * (size - 1) + dy
        vx, vy = bx - ax, by - ay
        denom = vx * vx + vy * vy
        if denom < 1e-12:
            t = np.zeros_like(xs)
        else:
            t = np.clip(((xs - ax) * vx + (ys - ay) * vy) / denom, 0.0, 1.0)
        dist = np.hypot(xs - (ax + t * vx), ys - (ay + t * vy))
        stroke = np.clip(
            (width_px / 2.0 + _EDGE_RAMP_PX / 2.0 - dist) / _EDGE_RAMP_PX, 0.0, 1.0
        )
        np.maximum(img, stroke, out=img)
    return img.astype(np.float32)


def _procedural_strokes(class_id: int, seed: int, size: int) -> list[tuple[float, float, float, float]]:
    """Random stroke set for class ids beyond the hand-drawn table.

    Re-draws until the rendered glyph is visibly asymmetric under 180 degrees.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(9999, class_id)))
    while True:
        n_strokes = int(rng.integers(3, 5))
        strokes = []
        x, y = rng.uniform(0.3, 0.7, size=2)
        for _ in range(n_strokes):
            nx, ny = rng.uniform(0.22, 0.78, size=2)
            strokes.append((x, y, nx, ny))
            x, y = nx, ny
        glyph = _render_strokes(strokes, size, 0.09 * size, 0.0, 0.0)
        flipped = rotate_image(glyph, 180.0, "nearest")
        if float(np.mean((glyph - flipped) ** 2)) > 0.02:
            return strokes


def render_glyph_corpus(n_classes: int, per_class: int, size: int = 32, seed: int = 0) -> BaseCorpus:
    """Render an upright glyph corpus: per-class stroke shapes with small jitter.

    Jitter: stroke width scale in [0.9, 1.1] and translation up to 2 px.
    Deterministic given the seed.
    """
    if n_classes < 1:
        raise ValueError("need at least one class")
    if size < 16:
        raise ValueError("glyph size must be >= 16")
    images = np.zeros((n_classes * per_class, size, size), dtype=np.float32)
    labels = np.zeros(n_classes * per_class, dtype=np.int64)
    base_width = 0.09 * size
    idx = 0
    for class_id in range(n_classes):
        if class_id < len(_GLYPH_STROKES):
            strokes = _GLYPH_STROKES[class_id]
        else:
            strokes = _procedural_strokes(class_id, seed, size)
        for j in range(per_class):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(class_id, j)))
            width = base_width * rng.uniform(0.9, 1.1)
            dx, dy = rng.uniform(-2.0, 2.0, size=2)
            images[idx] = _render_strokes(strokes, size, width, dx, dy)
            labels[idx] = class_id
            idx += 1
    return BaseCorpus(images=images, labels=labels)


# ---------------------------------------------------------------------------
# Symmetry profiles and dataset construction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SymmetryProfile:
    specs: tuple[SymmetrySpec, ...]  # indexed by class id

    def spec_for(self, class_id: int) -> SymmetrySpec:
        if not 0 <= class_id < len(self.specs):
            raise KeyError(f"no symmetry spec for class {class_id}")
        return self.specs[class_id]


def preset_profile(name: str, n_classes: int) -> SymmetryProfile:
    """Named per-class symmetry layouts used by the synthetic datasets.

    rot60      every class Uniform(60)
    rot60_90   first half Uniform(60), second half Uniform(90)
    multiple   class c -> Uniform(18 * c)
    gaussian   class c -> Gaussian(9 * c)
    c2_c4      first half Cyclic(2), second half Cyclic(4)
    full       every class Uniform(180)
    none       every class Uniform(0)
    """
    half = (n_classes + 1) // 2
    if name == "rot60":
        specs = [SymmetrySpec(UNIFORM, 60.0)] * n_classes
    elif name == "rot60_90":
        specs = [SymmetrySpec(UNIFORM, 60.0 if c < half else 90.0) for c in range(n_classes)]
    elif name == "multiple":
        specs = [SymmetrySpec(UNIFORM, 18.0 * c) for c in range(n_classes)]
    elif name == "gaussian":
        specs = [SymmetrySpec(GAUSSIAN, 9.0 * c) for c in range(n_classes)]
    elif name == "c2_c4":
        specs = [SymmetrySpec(CYCLIC, 2 if c < half else 4) for c in range(n_classes)]
    elif name == "full":
        specs = [SymmetrySpec(UNIFORM, 180.0)] * n_classes
    elif name == "none":
        specs = [SymmetrySpec(UNIFORM, 0.0)] * n_classes
    else:
        raise ValueError(f"unknown preset {name!r}; known: {', '.join(PRESETS)}")
    return SymmetryProfile(specs=tuple(specs))


def build_dataset(
    corpus: BaseCorpus, profile: SymmetryProfile, seed: int, split: str = "train"
) -> SymDataset:
    """Rotate every corpus image by a draw from its class spec.

    Per-sample rngs are derived from (seed, sample_id), so generation is a pure
    function of (corpus, profile, seed) and order-independent.
    """
    n = len(corpus.images)
    images = np.zeros_like(corpus.images)
    records: list[SampleRecord] = []
    for i in range(n):
        class_id = int(corpus.labels[i])
        spec = profile.spec_for(class_id)
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        angle = sample_spec(spec, rng)
        images[i] = np.clip(rotate_image(corpus.images[i], angle, "bilinear"), 0.0, 1.0)
        records.append(
            SampleRecord(sample_id=i, class_id=class_id, base_index=i, applied_angle=angle, spec=spec)
        )
    return SymDataset(images=images, records=records, split=split)


def audit_record(record: SampleRecord, tol: float = 1e-9) -> bool:
    """Check that a record's applied angle is consistent with its spec."""
    spec = record.spec
    if spec.family == UNIFORM:
        return abs(record.applied_angle) <= spec.param + tol
    if spec.family == CYCLIC:
        return any(abs(record.applied_angle - e) <= tol for e in cyclic_elements(spec.order))
    return True  # gaussian support is the whole circle after canonicalization


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_dataset(ds: SymDataset, path: str | Path) -> None:
    """Write images as a SYMT blob plus a record manifest under a directory."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    write_blob(out / "images.symt", ds.images.astype(np.float32))
    rows = []
    for r in ds.records:
        param = repr(int(r.spec.param)) if r.spec.family == CYCLIC else repr(float(r.spec.param))
        rows.append(
            (r.sample_id, r.class_id, r.base_index, repr(float(r.applied_angle)), r.spec.family, param)
        )
    write_manifest(out / "records.csv", _RECORD_HEADER, rows)
    (out / "split.txt").write_text(ds.split + "\n")


def load_dataset(path: str | Path) -> SymDataset:
    src = Path(path)
    images = read_blob(src / "images.symt")
    manifest = src / "records.csv"
    rows = read_manifest(manifest, _RECORD_HEADER)
    records = []
    for lineno, row in enumerate(rows, start=2):
        sample_id = int(row[0])
        class_id = int(row[1])
        base_index = int(row[2])
        angle = parse_float_field(manifest, lineno, "applied_angle", row[3])
        family = row[4]
        if family == CYCLIC:
            param: float = int(parse_float_field(manifest, lineno, "param", row[5]))
        else:
            param = parse_float_field(manifest, lineno, "param", row[5])
        try:
            spec = SymmetrySpec(family, param)
        except ValueError as exc:
            raise ManifestError(f"{manifest}: line {lineno}: {exc}") from None
        records.append(SampleRecord(sample_id, class_id, base_index, angle, spec))
    split_file = src / "split.txt"
    split = split_file.read_text().strip() if split_file.exists() else "train"
    return SymDataset(images=images, records=records, split=split)
