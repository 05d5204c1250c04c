"""Versioned binary checkpoint container ("VQRB").

Layout, all little-endian:
  magic "VQRB" | u32 version | 9 x u32 config ints
  (image_side, channels, patch_side, T, d, K, M, encoder_width, encoder_depth)
  | u64 seed | u32 metadata length | metadata JSON bytes
  | u32 tensor count | per tensor: u32 name length, name bytes, u32 rank,
    u32 dims..., float32 data.

Loaders reject unknown magic or version. Metadata carries fine-tuning
provenance ({train_radius, inner_steps, epochs, dataset id, parent hash}).
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .autodiff import Tensor
from .tokenizer import Tokenizer, TokenizerConfig

MAGIC = b"VQRB"
PROBE_MAGIC = b"VQPR"
VERSION = 1

_CONFIG_INTS = ("image_side", "channels", "patch_side", "T", "d", "K", "M",
                "encoder_width", "encoder_depth")


def hash_params(params: dict[str, Tensor], prefix: str = "") -> str:
    """sha256 over (name, float32 bytes) pairs in sorted name order."""
    h = hashlib.sha256()
    for name in sorted(params):
        if not name.startswith(prefix):
            continue
        h.update(name.encode("utf-8"))
        h.update(params[name].data.astype("<f4").tobytes())
    return h.hexdigest()


def hash_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        h.update(f.read())
    return h.hexdigest()


def _write_tensors(f, params: dict[str, Tensor]) -> None:
    f.write(struct.pack("<I", len(params)))
    for name, p in params.items():
        nb = name.encode("utf-8")
        f.write(struct.pack("<I", len(nb)))
        f.write(nb)
        f.write(struct.pack("<I", p.data.ndim))
        f.write(struct.pack(f"<{p.data.ndim}I", *p.data.shape))
        f.write(p.data.astype("<f4").tobytes())


def _read_tensors(data: bytes, off: int, path: str) -> tuple[dict[str, Tensor], int]:
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    params: dict[str, Tensor] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", data, off)
        off += 4
        name = data[off:off + nlen].decode("utf-8")
        off += nlen
        (rank,) = struct.unpack_from("<I", data, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", data, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(data, dtype="<f4", count=n, offset=off).reshape(dims).copy()
        off += 4 * n
        params[name] = Tensor(arr, requires_grad=True)
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes after last tensor")
    return params, off


def save_checkpoint(path: str, tok: Tokenizer, meta: dict | None = None) -> None:
    cfg = tok.config
    meta_bytes = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<9I", *(getattr(cfg, k) for k in _CONFIG_INTS)))
        f.write(struct.pack("<Q", cfg.seed & 0xFFFFFFFFFFFFFFFF))
        f.write(struct.pack("<I", len(meta_bytes)))
        f.write(meta_bytes)
        _write_tensors(f, tok.params)


def load_checkpoint(path: str) -> tuple[Tokenizer, dict]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}, not a VQRB checkpoint")
    off = 4
    (version,) = struct.unpack_from("<I", data, off)
    off += 4
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    ints = struct.unpack_from("<9I", data, off)
    off += 36
    (seed,) = struct.unpack_from("<Q", data, off)
    off += 8
    fields = dict(zip(_CONFIG_INTS, ints))
    cfg = TokenizerConfig(image_side=fields["image_side"], channels=fields["channels"],
                          patch_side=fields["patch_side"], d=fields["d"], K=fields["K"],
                          M=fields["M"], encoder_width=fields["encoder_width"],
                          encoder_depth=fields["encoder_depth"], seed=seed)
    if cfg.T != fields["T"]:
        raise ValueError(f"{path}: stored T={fields['T']} inconsistent with geometry (expected {cfg.T})")
    (meta_len,) = struct.unpack_from("<I", data, off)
    off += 4
    meta = json.loads(data[off:off + meta_len].decode("utf-8")) if meta_len else {}
    off += meta_len
    params, off = _read_tensors(data, off, path)
    return Tokenizer(cfg, params), meta


def save_probe(path: str, probe) -> None:
    header = json.dumps({"arch": probe.arch, "n_classes": probe.n_classes,
                         "in_dim": probe.in_dim}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(PROBE_MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(header)))
        f.write(header)
        _write_tensors(f, probe.params)


def load_probe(path: str):
    from .probe import ProbeClassifier

    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != PROBE_MAGIC:
        raise ValueError(f"{path}: bad magic {data[:4]!r}, not a VQPR probe checkpoint")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported probe checkpoint version {version}")
    (hlen,) = struct.unpack_from("<I", data, 8)
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    params, _ = _read_tensors(data, 12 + hlen, path)
    return ProbeClassifier(header["arch"], header["n_classes"], header["in_dim"], params)
