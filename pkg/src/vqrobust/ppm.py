"""Bit-exact PPM (P6, binary, 8-bit, no comments) image export."""

from __future__ import annotations

import numpy as np


def to_uint8(img: np.ndarray) -> np.ndarray:
    """(C, H, W) float in [0,1] -> (H, W, 3) uint8; grayscale is replicated."""
    if img.ndim != 3:
        raise ValueError(f"expected (C, H, W), got shape {img.shape}")
    c = img.shape[0]
    if c == 1:
        img = np.repeat(img, 3, axis=0)
    elif c != 3:
        raise ValueError(f"expected 1 or 3 channels, got {c}")
    arr = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    return arr.transpose(1, 2, 0)


def write_ppm(path: str, rgb: np.ndarray) -> None:
    """Write (H, W, 3) uint8 as binary P6 with maxval 255."""
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.dtype != np.uint8:
        raise ValueError(f"write_ppm wants (H, W, 3) uint8, got {rgb.shape} {rgb.dtype}")
    h, w = rgb.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(rgb.tobytes())


def read_ppm(path: str) -> np.ndarray:
    """Read back a P6 file written by write_ppm (strict, no comments)."""
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(b"P6\n"):
        raise ValueError(f"{path}: not a P6 file")
    header, _, rest = data.partition(b"255\n")
    dims = header.split()[1:3]
    w, h = int(dims[0]), int(dims[1])
    pixels = np.frombuffer(rest, dtype=np.uint8)
    if pixels.size != w * h * 3:
        raise ValueError(f"{path}: expected {w * h * 3} pixel bytes, got {pixels.size}")
    return pixels.reshape(h, w, 3)


def image_grid(panels: list[list[np.ndarray]], gap: int = 2) -> np.ndarray:
    """Assemble rows of (C, H, W) float images into one (H', W', 3) uint8 grid
    with white separators, row-major."""
    rows = []
    for row in panels:
        tiles = [to_uint8(p) for p in row]
        h = tiles[0].shape[0]
        spacer = np.full((h, gap, 3), 255, dtype=np.uint8)
        glued = tiles[0]
        for t in tiles[1:]:
            glued = np.concatenate([glued, spacer, t], axis=1)
        rows.append(glued)
    w = rows[0].shape[1]
    hspacer = np.full((gap, w, 3), 255, dtype=np.uint8)
    out = rows[0]
    for r in rows[1:]:
        out = np.concatenate([out, hspacer, r], axis=0)
    return out
