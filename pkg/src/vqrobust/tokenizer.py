"""Discrete image tokenizer: patch-MLP encoder, nearest-code vector quantizer
(single or multi-codebook), mirrored decoder, and the VQ pre-training loop.

The encoder maps (B, C, S, S) images to (B, T, d) pre-quantization embeddings,
one per patch. The quantizer snaps each embedding (or each of its M chunks) to
the nearest codebook row, ties broken toward the lowest index. Training learns
encoder, codebook, and decoder jointly with straight-through gradients plus
the usual codebook-pull and commitment terms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor
from .datasets import DatasetHandle
from .rng import Stream


@dataclass
class TokenizerConfig:
    image_side: int = 32
    channels: int = 3
    patch_side: int = 8
    d: int = 16
    K: int = 64
    M: int = 1
    encoder_width: int = 64
    encoder_depth: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.image_side % self.patch_side != 0:
            raise ValueError(f"patch_side {self.patch_side} must divide image_side {self.image_side}")
        if self.K < 2 or self.d < 1:
            raise ValueError(f"need K >= 2 and d >= 1, got K={self.K} d={self.d}")
        if self.M < 1 or self.d % self.M != 0:
            raise ValueError(f"M={self.M} must divide d={self.d}")

    @property
    def T(self) -> int:
        return (self.image_side // self.patch_side) ** 2

    @property
    def patch_dim(self) -> int:
        return self.channels * self.patch_side ** 2

    @property
    def sub_dim(self) -> int:
        return self.d // self.M


@dataclass
class TokenizationOutput:
    embeddings: np.ndarray  # (B, T, d) pre-quantization
    quantized: np.ndarray  # (B, T, d) snapped to codebook rows
    indices: np.ndarray  # (B, T) int64, or (B, T, M) for multi-codebook


def _linear_init(rng: Stream, fan_in: int, fan_out: int, gain: float) -> np.ndarray:
    return (rng.normal((fan_in, fan_out)) * gain / np.sqrt(fan_in)).astype(np.float32)


def _mlp_stack(rng: Stream, prefix: str, width: int, depth: int, params: dict) -> None:
    for i in range(depth):
        blk = rng.child(f"blk{i}")
        params[f"{prefix}.blk{i}.fc1.w"] = Tensor(_linear_init(blk.child("w1"), width, width, np.sqrt(2.0)), requires_grad=True)
        params[f"{prefix}.blk{i}.fc1.b"] = Tensor(np.zeros(width, dtype=np.float32), requires_grad=True)
        params[f"{prefix}.blk{i}.fc2.w"] = Tensor(_linear_init(blk.child("w2"), width, width, 1.0), requires_grad=True)
        params[f"{prefix}.blk{i}.fc2.b"] = Tensor(np.zeros(width, dtype=np.float32), requires_grad=True)


def init_params(config: TokenizerConfig) -> dict[str, Tensor]:
    """Fresh parameter set; codebook rows come from a normal draw until
    pretrain replaces them with data-dependent rows."""
    rng = Stream(config.seed, "init")
    w, d, p = config.encoder_width, config.d, config.patch_dim
    params: dict[str, Tensor] = {}
    params["enc.patch.w"] = Tensor(_linear_init(rng.child("enc.patch"), p, w, np.sqrt(2.0)), requires_grad=True)
    params["enc.patch.b"] = Tensor(np.zeros(w, dtype=np.float32), requires_grad=True)
    _mlp_stack(rng.child("enc"), "enc", w, config.encoder_depth, params)
    params["enc.proj.w"] = Tensor(_linear_init(rng.child("enc.proj"), w, d, 1.0), requires_grad=True)
    params["enc.proj.b"] = Tensor(np.zeros(d, dtype=np.float32), requires_grad=True)
    params["codebook"] = Tensor(
        rng.child("codebook").normal((config.M, config.K, config.sub_dim)).astype(np.float32),
        requires_grad=True,
    )
    params["dec.proj.w"] = Tensor(_linear_init(rng.child("dec.proj"), d, w, np.sqrt(2.0)), requires_grad=True)
    params["dec.proj.b"] = Tensor(np.zeros(w, dtype=np.float32), requires_grad=True)
    _mlp_stack(rng.child("dec"), "dec", w, config.encoder_depth, params)
    params["dec.out.w"] = Tensor(_linear_init(rng.child("dec.out"), w, p, 1.0), requires_grad=True)
    params["dec.out.b"] = Tensor(np.zeros(p, dtype=np.float32), requires_grad=True)
    return params


def _check_geometry(config: TokenizerConfig, x: Tensor) -> None:
    want = (config.channels, config.image_side, config.image_side)
    if x.data.ndim != 4 or x.shape[1:] != want:
        raise ValueError(f"image batch shape {x.shape} does not match (B, {', '.join(map(str, want))})")


@dataclass
class Tokenizer:
    """Config + parameters, with encode / quantize / decode as methods."""

    config: TokenizerConfig
    params: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def init(cls, config: TokenizerConfig) -> "Tokenizer":
        return cls(config, init_params(config))

    def astype(self, dtype) -> "Tokenizer":
        cast = {n: Tensor(p.data.astype(dtype), requires_grad=p.requires_grad) for n, p in self.params.items()}
        return Tokenizer(self.config, cast)

    def copy(self) -> "Tokenizer":
        return Tokenizer(self.config, {n: Tensor(p.data.copy(), requires_grad=p.requires_grad)
                                       for n, p in self.params.items()})

    def frozen(self) -> "Tokenizer":
        """Read-only view sharing parameter buffers, with gradients disabled."""
        return Tokenizer(self.config, {n: Tensor(p.data) for n, p in self.params.items()})

    def param_names(self, prefix: str = "") -> list[str]:
        return [n for n in self.params if n.startswith(prefix)]

    # -- encoder / decoder ---------------------------------------------------

    def _patchify(self, x: Tensor) -> Tensor:
        c, s, p = self.config.channels, self.config.image_side, self.config.patch_side
        n = s // p
        b = x.shape[0]
        t = ad.reshape(x, (b, c, n, p, n, p))
        t = ad.transpose(t, (0, 2, 4, 1, 3, 5))
        return ad.reshape(t, (b, self.config.T, self.config.patch_dim))

    def _unpatchify(self, t: Tensor) -> Tensor:
        c, s, p = self.config.channels, self.config.image_side, self.config.patch_side
        n = s // p
        b = t.shape[0]
        t = ad.reshape(t, (b, n, n, c, p, p))
        t = ad.transpose(t, (0, 3, 1, 4, 2, 5))
        return ad.reshape(t, (b, c, s, s))

    def _blocks(self, t: Tensor, prefix: str) -> Tensor:
        for i in range(self.config.encoder_depth):
            h = ad.layer_norm(t)
            h = ad.add(ad.matmul(h, self.params[f"{prefix}.blk{i}.fc1.w"]), self.params[f"{prefix}.blk{i}.fc1.b"])
            h = ad.relu(h)
            h = ad.add(ad.matmul(h, self.params[f"{prefix}.blk{i}.fc2.w"]), self.params[f"{prefix}.blk{i}.fc2.b"])
            t = ad.add(t, h)
        return t

    def encode(self, batch) -> Tensor:
        """Images (B, C, S, S) in [0,1] -> pre-quantization embeddings (B, T, d).

        Embeddings are layer-normalized per token, keeping them on a common
        scale so quantization cells stay populated and embedding-space
        distances are comparable across tokens."""
        x = batch if isinstance(batch, Tensor) else Tensor(batch)
        _check_geometry(self.config, x)
        t = self._patchify(x)
        t = ad.add(ad.matmul(t, self.params["enc.patch.w"]), self.params["enc.patch.b"])
        t = self._blocks(t, "enc")
        return ad.layer_norm(ad.add(ad.matmul(t, self.params["enc.proj.w"]), self.params["enc.proj.b"]))

    def decode(self, quantized: Tensor) -> Tensor:
        """Token vectors (B, T, d) -> reconstruction (B, C, S, S) in [0,1]."""
        if quantized.shape[1:] != (self.config.T, self.config.d):
            raise ValueError(
                f"decode input shape {quantized.shape} does not match (B, {self.config.T}, {self.config.d})"
            )
        t = ad.add(ad.matmul(quantized, self.params["dec.proj.w"]), self.params["dec.proj.b"])
        t = self._blocks(t, "dec")
        t = ad.add(ad.matmul(t, self.params["dec.out.w"]), self.params["dec.out.b"])
        return self._unpatchify(ad.sigmoid(t))

    # -- quantizer -----------------------------------------------------------

    def quantize(self, h: np.ndarray) -> TokenizationOutput:
        """Nearest-code assignment (squared euclidean, lowest index on ties)."""
        h = np.asarray(h)
        cfg = self.config
        if h.shape[-1] != cfg.d:
            raise ValueError(f"embedding dim {h.shape[-1]} does not match codebook dim {cfg.d}")
        cb = self.params["codebook"].data
        dm = cfg.sub_dim
        idx = np.empty(h.shape[:-1] + (cfg.M,), dtype=np.int64)
        quant = np.empty_like(h)
        for m in range(cfg.M):
            chunk = h[..., m * dm:(m + 1) * dm]
            diff = chunk[..., None, :] - cb[m]
            dist = np.sum(diff * diff, axis=-1)
            idx[..., m] = np.argmin(dist, axis=-1)
            quant[..., m * dm:(m + 1) * dm] = cb[m][idx[..., m]]
        return TokenizationOutput(h, quant, idx[..., 0] if cfg.M == 1 else idx)

    def quantize_st(self, h: Tensor) -> tuple[Tensor, TokenizationOutput]:
        """Quantize with a straight-through backward: forward values are the
        quantized vectors, gradient passes to `h` unchanged, codebook gets none."""
        out = self.quantize(h.data)
        return ad.st_identity(h, out.quantized), out

    def tokenize(self, batch: np.ndarray) -> TokenizationOutput:
        """Grad-free encode + quantize convenience."""
        return self.quantize(self.encode(np.asarray(batch)).data)

    def codebook_2d(self, m: int) -> Tensor:
        """Sub-codebook m as a differentiable (K, d/M) view."""
        cfg = self.config
        sl = ad.slice_axis(self.params["codebook"], 0, m, m + 1)
        return ad.reshape(sl, (cfg.K, cfg.sub_dim))

    def gather_codes(self, indices: np.ndarray) -> Tensor:
        """Differentiable (B, T, d) code lookup for codebook-side loss terms."""
        cfg = self.config
        idx = indices[..., None] if cfg.M == 1 else indices
        chunks = [ad.gather_rows(self.codebook_2d(m), idx[..., m]) for m in range(cfg.M)]
        return chunks[0] if cfg.M == 1 else ad.concat(chunks, axis=-1)


# ---------------------------------------------------------------------------
# pre-training


@dataclass
class PretrainLog:
    epoch_loss: list[float] = field(default_factory=list)
    epoch_recon: list[float] = field(default_factory=list)


def _init_codebook_from_data(tok: Tokenizer, batch: np.ndarray) -> None:
    """Seed codebook rows from the first batch's embeddings plus tiny jitter."""
    cfg = tok.config
    h = tok.encode(batch).data.reshape(-1, cfg.d)
    rng = Stream(cfg.seed, "init").child("codebook-data")
    rows = np.empty((cfg.M, cfg.K, cfg.sub_dim), dtype=np.float32)
    for m in range(cfg.M):
        chunk = h[:, m * cfg.sub_dim:(m + 1) * cfg.sub_dim]
        if len(chunk) >= cfg.K:
            pick = rng.child(f"perm{m}").permutation(len(chunk))[:cfg.K]
        else:
            pick = rng.child(f"perm{m}").integers(cfg.K, 0, len(chunk))
        jitter = rng.child(f"jit{m}").normal((cfg.K, cfg.sub_dim), std=1e-3)
        rows[m] = chunk[pick] + jitter.astype(np.float32)
    for m in range(cfg.M):
        if len(np.unique(rows[m], axis=0)) != cfg.K:
            raise RuntimeError("duplicate codebook rows after data-dependent init")
    tok.params["codebook"].data = rows


def vq_loss(tok: Tokenizer, x: Tensor, beta_commit: float) -> tuple[Tensor, Tensor]:
    """Reconstruction + codebook-pull + commitment; returns (loss, recon_mse)."""
    h = tok.encode(x)
    st, out = tok.quantize_st(h)
    xhat = tok.decode(st)
    e_q = tok.gather_codes(out.indices)
    recon = ad.mse(xhat, x)
    pull = ad.tmean(ad.sq_l2(ad.sub(ad.stop_gradient(h), e_q)))
    commit = ad.tmean(ad.sq_l2(ad.sub(h, ad.stop_gradient(e_q))))
    return ad.add(ad.add(recon, pull), beta_commit * commit), recon


def pretrain(config: TokenizerConfig, dataset: DatasetHandle, epochs: int,
             lr: float = 1e-3, beta_commit: float = 0.25,
             batch_size: int = 32) -> tuple[Tokenizer, PretrainLog]:
    """Train encoder, codebook, and decoder jointly; deterministic in seed."""
    if len(dataset) == 0:
        raise ValueError("pretrain needs a nonempty dataset")
    tok = Tokenizer.init(config)
    log = PretrainLog()
    if epochs == 0:
        return tok, log
    _init_codebook_from_data(tok, dataset.images[:batch_size])
    state = AdamState.init(tok.params, lr)
    for epoch in range(epochs):
        losses, recons = [], []
        for step, (xb, _) in enumerate(dataset.batches(batch_size)):
            try:
                loss, recon = vq_loss(tok, Tensor(xb), beta_commit)
                ad.zero_grads(tok.params)
                loss.backward()
            except FloatingPointError as err:
                raise RuntimeError(f"pretraining diverged at epoch {epoch} step {step}: {err}") from err
            grads = {n: p.grad for n, p in tok.params.items() if p.grad is not None}
            ad.adam_step(tok.params, grads, state)
            losses.append(loss.item())
            recons.append(recon.item())
        log.epoch_loss.append(float(np.mean(losses)))
        log.epoch_recon.append(float(np.mean(recons)))
    return tok, log


def codebook_usage(tok: Tokenizer, dataset: DatasetHandle, batch_size: int = 64):
    """Histogram of code index frequencies over a dataset.

    Returns (hist, dead_fraction); hist is (K,) for M=1 else (M, K).
    """
    cfg = tok.config
    hist = np.zeros((cfg.M, cfg.K), dtype=np.int64)
    for xb, _ in dataset.batches(batch_size):
        out = tok.tokenize(xb)
        idx = out.indices[..., None] if cfg.M == 1 else out.indices
        for m in range(cfg.M):
            hist[m] += np.bincount(idx[..., m].reshape(-1), minlength=cfg.K)
    dead = float((hist == 0).sum()) / hist.size
    return (hist[0] if cfg.M == 1 else hist), dead
