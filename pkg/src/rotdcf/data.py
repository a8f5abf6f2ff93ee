"""Dataset ingestion: MNIST IDX files, rotation augmentation, and a
synthetic 10-class glyph generator used when no MNIST files are available.

The synthetic classes are parametric stroke figures (bars, rings, arcs,
crosses) chosen to stay mutually distinguishable under arbitrary rotation
while several of them carry a strong canonical orientation, which is what
makes the upright-to-rotated transfer protocol informative.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .imageops import rotate

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    pass


class BadMagicError(IdxFormatError):
    pass


class TruncatedFileError(IdxFormatError):
    pass


class CountMismatchError(IdxFormatError):
    pass


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # (N, 1, H, W) float64 in [0, 1]
    labels: np.ndarray  # (N,) int64 in [0, 10)
    source: str  # idx | rotmnist | synthetic

    def __post_init__(self):
        if self.images.shape[0] != self.labels.shape[0]:
            raise CountMismatchError(
                f"{self.images.shape[0]} images but {self.labels.shape[0]} labels"
            )
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError("pixels out of [0, 1]")

    def __len__(self):
        return self.images.shape[0]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.source)


def _read_be32(buf: bytes, offset: int, path: str) -> int:
    if offset + 4 > len(buf):
        raise TruncatedFileError(f"{path}: truncated header")
    return struct.unpack_from(">I", buf, offset)[0]


def load_idx(images_path, labels_path) -> Dataset:
    """Parse an IDX image/label file pair; pixels scaled by 1/255."""
    with open(images_path, "rb") as f:
        blob = f.read()
    magic = _read_be32(blob, 0, str(images_path))
    if magic != IMAGE_MAGIC:
        raise BadMagicError(
            f"{images_path}: image magic 0x{magic:08x}, expected 0x{IMAGE_MAGIC:08x}"
        )
    n = _read_be32(blob, 4, str(images_path))
    rows = _read_be32(blob, 8, str(images_path))
    cols = _read_be32(blob, 12, str(images_path))
    need = 16 + n * rows * cols
    if len(blob) < need:
        raise TruncatedFileError(
            f"{images_path}: payload holds {len(blob) - 16} bytes, need {need - 16}"
        )
    images = np.frombuffer(blob, dtype=np.uint8, count=n * rows * cols, offset=16)
    images = images.reshape(n, 1, rows, cols).astype(np.float64) / 255.0

    with open(labels_path, "rb") as f:
        blob = f.read()
    magic = _read_be32(blob, 0, str(labels_path))
    if magic != LABEL_MAGIC:
        raise BadMagicError(
            f"{labels_path}: label magic 0x{magic:08x}, expected 0x{LABEL_MAGIC:08x}"
        )
    n_labels = _read_be32(blob, 4, str(labels_path))
    if len(blob) < 8 + n_labels:
        raise TruncatedFileError(f"{labels_path}: truncated label payload")
    labels = np.frombuffer(blob, dtype=np.uint8, count=n_labels, offset=8).astype(np.int64)

    if n != n_labels:
        raise CountMismatchError(f"{n} images but {n_labels} labels")
    return Dataset(images, labels, "idx")


def make_rotmnist(base: Dataset, max_rot: float, seed: int) -> Dataset:
    """Rotate each image about its center by an independent uniform angle.

    max_rot in radians; angles are uniform on [-max_rot, max_rot], except
    full-circle mode (max_rot >= 2*pi) which draws from [0, 2*pi).
    """
    if not (0.0 <= max_rot <= 2.0 * np.pi + 1e-12):
        raise ValueError("max_rot must be in [0, 2*pi]")
    if max_rot == 0.0:
        return Dataset(base.images.copy(), base.labels.copy(), "rotmnist")
    rng = np.random.default_rng(seed)
    n = len(base)
    if max_rot >= 2.0 * np.pi - 1e-12:
        angles = rng.uniform(0.0, 2.0 * np.pi, size=n)
    else:
        angles = rng.uniform(-max_rot, max_rot, size=n)
    out = np.empty_like(base.images)
    for i in range(n):
        out[i] = np.clip(rotate(base.images[i], float(angles[i])), 0.0, 1.0)
    return Dataset(out, base.labels.copy(), "rotmnist")


# ------------------------------------------------------------ synthetic set

_AA = 0.8  # antialias ramp width in pixels


def _coverage(dist: np.ndarray) -> np.ndarray:
    return np.clip(0.5 - dist / _AA, 0.0, 1.0)


def _seg_dist(px, py, ax, ay, bx, by):
    vx, vy = bx - ax, by - ay
    t = np.clip(((px - ax) * vx + (py - ay) * vy) / (vx * vx + vy * vy), 0.0, 1.0)
    return np.hypot(px - (ax + t * vx), py - (ay + t * vy))


def _stroke(px, py, ax, ay, bx, by, thick):
    return _coverage(_seg_dist(px, py, ax, ay, bx, by) - thick / 2.0)


def _ring(px, py, cx, cy, radius, thick):
    return _coverage(np.abs(np.hypot(px - cx, py - cy) - radius) - thick / 2.0)


def _disk(px, py, cx, cy, radius):
    return _coverage(np.hypot(px - cx, py - cy) - radius)


def _arc(px, py, cx, cy, radius, thick, a0, a1):
    ang = np.arctan2(py - cy, px - cx)
    inside = (ang - a0) % (2 * np.pi) <= (a1 - a0) % (2 * np.pi)
    d_ring = np.abs(np.hypot(px - cx, py - cy) - radius)
    e0 = np.hypot(px - (cx + radius * np.cos(a0)), py - (cy + radius * np.sin(a0)))
    e1 = np.hypot(px - (cx + radius * np.cos(a1)), py - (cy + radius * np.sin(a1)))
    dist = np.where(inside, d_ring, np.minimum(e0, e1))
    return _coverage(dist - thick / 2.0)


def _render_glyph(cls: int, cx: float, cy: float, scale: float, size: int) -> np.ndarray:
    ii, jj = np.meshgrid(np.arange(size, dtype=float), np.arange(size, dtype=float), indexing="ij")
    px, py = jj, ii
    th = 2.4 * scale
    img = np.zeros((size, size))

    def add(layer):
        np.maximum(img, layer, out=img)

    if cls == 0:
        add(_ring(px, py, cx, cy, 8.0 * scale, th))
    elif cls == 1:
        add(_stroke(px, py, cx, cy - 8 * scale, cx, cy + 8 * scale, th))
    elif cls == 2:
        add(_stroke(px, py, cx - 4 * scale, cy - 7 * scale, cx - 4 * scale, cy + 7 * scale, th))
        add(_stroke(px, py, cx + 4 * scale, cy - 7 * scale, cx + 4 * scale, cy + 7 * scale, th))
    elif cls == 3:
        add(_stroke(px, py, cx, cy - 8 * scale, cx, cy + 8 * scale, th))
        add(_stroke(px, py, cx - 8 * scale, cy, cx + 8 * scale, cy, th))
    elif cls == 4:
        add(_disk(px, py, cx, cy, 5.0 * scale))
    elif cls == 5:
        add(_arc(px, py, cx, cy, 8.0 * scale, th, np.pi, 2 * np.pi))
    elif cls == 6:
        add(_stroke(px, py, cx - 6 * scale, cy - 7 * scale, cx - 6 * scale, cy + 6 * scale, th))
        add(_stroke(px, py, cx - 6 * scale, cy + 6 * scale, cx + 7 * scale, cy + 6 * scale, th))
    elif cls == 7:
        add(_ring(px, py, cx, cy, 4.2 * scale, th * 0.9))
    elif cls == 8:
        for ang in (np.pi / 2, np.pi / 2 + 2 * np.pi / 3, np.pi / 2 + 4 * np.pi / 3):
            add(
                _stroke(
                    px, py, cx, cy,
                    cx + 8.5 * scale * np.cos(ang), cy + 8.5 * scale * np.sin(ang), th,
                )
            )
    elif cls == 9:
        add(_disk(px, py, cx, cy + 5 * scale, 2.8 * scale))
        add(_stroke(px, py, cx, cy - 8 * scale, cx, cy - 1 * scale, th))
    else:
        raise ValueError(f"no glyph for class {cls}")
    return img


def make_synthetic(n: int, seed: int, size: int = 28) -> Dataset:
    """n antialiased glyph images with round-robin class labels."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    images = np.empty((n, 1, size, size))
    labels = np.empty(n, dtype=np.int64)
    center = (size - 1) / 2.0
    for i in range(n):
        cls = i % 10
        cx = center + rng.uniform(-1.5, 1.5)
        cy = center + rng.uniform(-1.5, 1.5)
        scale = rng.uniform(0.9, 1.1)
        images[i, 0] = _render_glyph(cls, cx, cy, scale, size)
        labels[i] = cls
    return Dataset(images, labels, "synthetic")
