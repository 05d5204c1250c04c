"""Dataset ingestion: CIFAR-10 binary files and a deterministic synthetic
shapes corpus. Images are float32 (N, C, H, W) in [0, 1]; iteration order is
fixed by (source, split, seed)."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .rng import Stream

SHAPE_NAMES = ("square", "circle", "triangle", "cross", "ring", "bar-h", "bar-v", "diamond")

_CIFAR_RECORD = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes
_CIFAR_PER_FILE = 10000


@dataclass
class DatasetHandle:
    """In-memory labeled image set with a fixed, reproducible order."""

    source: str
    split: str
    images: np.ndarray  # (N, C, H, W) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64
    n_classes: int
    seed: int = 0

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def geometry(self) -> tuple[int, int, int]:
        return self.images.shape[1:]

    def __iter__(self):
        for i in range(len(self)):
            yield self.images[i], int(self.labels[i])

    def batches(self, batch_size: int):
        """Yield (images, labels) slices in the fixed dataset order."""
        for lo in range(0, len(self), batch_size):
            hi = min(lo + batch_size, len(self))
            yield self.images[lo:hi], self.labels[lo:hi]

    def take(self, n: int) -> "DatasetHandle":
        n = min(n, len(self))
        return DatasetHandle(self.source, self.split, self.images[:n].copy(),
                             self.labels[:n].copy(), self.n_classes, self.seed)


# ---------------------------------------------------------------------------
# CIFAR-10 binary format


def _read_cifar_file(path: str) -> tuple[np.ndarray, np.ndarray]:
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % _CIFAR_RECORD != 0:
        raise ValueError(
            f"{path}: truncated CIFAR-10 file, {raw.size} bytes is not a multiple "
            f"of the {_CIFAR_RECORD}-byte record (offset {raw.size - raw.size % _CIFAR_RECORD})"
        )
    records = raw.reshape(-1, _CIFAR_RECORD)
    labels = records[:, 0].astype(np.int64)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        off = int(bad[0]) * _CIFAR_RECORD
        raise ValueError(f"{path}: label {labels[bad[0]]} > 9 at byte offset {off}")
    # channel planes R, G, B of 32x32, row-major
    images = records[:, 1:].reshape(-1, 3, 32, 32).astype(np.float32) / 255.0
    return images, labels


def load_cifar10(path: str, split: str) -> DatasetHandle:
    """Load CIFAR-10 from the canonical binary layout.

    `path` is a directory holding data_batch_{1..5}.bin and test_batch.bin,
    or a single .bin file.
    """
    if split not in ("train", "test"):
        raise ValueError(f"split must be 'train' or 'test', got {split!r}")
    if os.path.isfile(path):
        files = [path]
    else:
        names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
        files = [os.path.join(path, n) for n in names]
        for f in files:
            if not os.path.exists(f):
                raise FileNotFoundError(f"missing CIFAR-10 file: {f}")
    parts = [_read_cifar_file(f) for f in files]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    return DatasetHandle("cifar10_binary", split, images, labels, n_classes=10)


# ---------------------------------------------------------------------------
# synthetic shapes corpus


def _shape_mask(kind: str, side: int, cx: float, cy: float, s: float) -> np.ndarray:
    """Boolean (side, side) mask of one shape; s is the half-extent in pixels."""
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    dx, dy = xx - cx, yy - cy
    w = 0.3 * s  # arm/stroke half-width for cross, ring, bars
    if kind == "square":
        return (np.abs(dx) <= s) & (np.abs(dy) <= s)
    if kind == "circle":
        return dx * dx + dy * dy <= s * s
    if kind == "triangle":
        t = (dy + s) / (2.0 * s)  # 0 at top vertex, 1 at base
        return (dy >= -s) & (dy <= s) & (np.abs(dx) <= np.clip(t, 0, 1) * s)
    if kind == "cross":
        return ((np.abs(dx) <= w) & (np.abs(dy) <= s)) | ((np.abs(dy) <= w) & (np.abs(dx) <= s))
    if kind == "ring":
        r2 = dx * dx + dy * dy
        return (r2 <= s * s) & (r2 >= (s - w) * (s - w))
    if kind == "bar-h":
        return (np.abs(dy) <= w) & (np.abs(dx) <= s)
    if kind == "bar-v":
        return (np.abs(dx) <= w) & (np.abs(dy) <= s)
    if kind == "diamond":
        return np.abs(dx) + np.abs(dy) <= s
    raise ValueError(f"unknown shape kind {kind!r}")


def gen_shapes(seed: int, n: int, image_side: int = 32, classes: int = 4,
               channels: int = 3, split: str = "train",
               noise_amp: float = 0.02, pos_jitter: float = 0.15,
               scale_lo: float = 0.22, scale_hi: float = 0.42) -> DatasetHandle:
    """Deterministic labeled shapes corpus.

    Labels are assigned round-robin (class-balanced within one image). Each
    image is one bright shape at jittered position/scale on dark uniform
    noise. The default ranges keep the class signal dominant in pixel
    variance; shapes near the upper scale may clip at the border.
    """
    if not 2 <= classes <= len(SHAPE_NAMES):
        raise ValueError(f"classes must be in [2, {len(SHAPE_NAMES)}], got {classes}")
    root = Stream(seed, "shapes").child(split)
    images = np.zeros((n, channels, image_side, image_side), dtype=np.float32)
    labels = np.arange(n, dtype=np.int64) % classes
    half = image_side / 2.0
    for i in range(n):
        r = root.child(f"img{i}")
        noise = r.uniform((channels, image_side, image_side), 0.0, noise_amp)
        cx = half + r.uniform((), -pos_jitter, pos_jitter)[()] * image_side
        cy = half + r.uniform((), -pos_jitter, pos_jitter)[()] * image_side
        s = r.uniform((), scale_lo, scale_hi)[()] * image_side
        mask = _shape_mask(SHAPE_NAMES[labels[i]], image_side, cx, cy, s)
        img = noise
        img[:, mask] = 1.0
        images[i] = np.clip(img, 0.0, 1.0).astype(np.float32)
    return DatasetHandle("shapes_synthetic", split, images, labels, n_classes=classes, seed=seed)
