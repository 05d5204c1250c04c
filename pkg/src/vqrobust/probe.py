"""Downstream probe classifiers trained on frozen, quantized tokenizer
features (linear or one-hidden-layer MLP over the flattened T x d tokens)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor
from .datasets import DatasetHandle
from .rng import Stream
from .tokenizer import Tokenizer

PROBE_ARCHS = ("linear", "mlp")


@dataclass
class ProbeClassifier:
    arch: str
    n_classes: int
    in_dim: int  # T * d
    params: dict[str, Tensor] = field(default_factory=dict)

    @classmethod
    def init(cls, arch: str, in_dim: int, n_classes: int, hidden: int = 64,
             seed: int = 0) -> "ProbeClassifier":
        if arch not in PROBE_ARCHS:
            raise ValueError(f"probe arch must be one of {PROBE_ARCHS}, got {arch!r}")
        rng = Stream(seed, "probe-init")
        params: dict[str, Tensor] = {}
        if arch == "linear":
            w = (rng.child("w").normal((in_dim, n_classes)) / np.sqrt(in_dim)).astype(np.float32)
            params["w"] = Tensor(w, requires_grad=True)
            params["b"] = Tensor(np.zeros(n_classes, dtype=np.float32), requires_grad=True)
        else:
            w1 = (rng.child("w1").normal((in_dim, hidden)) * np.sqrt(2.0 / in_dim)).astype(np.float32)
            w2 = (rng.child("w2").normal((hidden, n_classes)) / np.sqrt(hidden)).astype(np.float32)
            params["w1"] = Tensor(w1, requires_grad=True)
            params["b1"] = Tensor(np.zeros(hidden, dtype=np.float32), requires_grad=True)
            params["w2"] = Tensor(w2, requires_grad=True)
            params["b2"] = Tensor(np.zeros(n_classes, dtype=np.float32), requires_grad=True)
        return cls(arch, n_classes, in_dim, params)

    def astype(self, dtype) -> "ProbeClassifier":
        cast = {n: Tensor(p.data.astype(dtype), requires_grad=p.requires_grad)
                for n, p in self.params.items()}
        return ProbeClassifier(self.arch, self.n_classes, self.in_dim, cast)

    def frozen(self) -> "ProbeClassifier":
        view = {n: Tensor(p.data) for n, p in self.params.items()}
        return ProbeClassifier(self.arch, self.n_classes, self.in_dim, view)

    def copy(self) -> "ProbeClassifier":
        dup = {n: Tensor(p.data.copy(), requires_grad=p.requires_grad)
               for n, p in self.params.items()}
        return ProbeClassifier(self.arch, self.n_classes, self.in_dim, dup)

    def logits(self, feats: Tensor) -> Tensor:
        """Quantized features (B, T, d) -> class logits (B, n_classes)."""
        b = feats.shape[0]
        flat = ad.reshape(feats, (b, self.in_dim))
        if self.arch == "linear":
            return ad.add(ad.matmul(flat, self.params["w"]), self.params["b"])
        h = ad.relu(ad.add(ad.matmul(flat, self.params["w1"]), self.params["b1"]))
        return ad.add(ad.matmul(h, self.params["w2"]), self.params["b2"])

    def logits_np(self, feats: np.ndarray) -> np.ndarray:
        return self.logits(Tensor(feats.astype(np.float32))).data

    def predict_features(self, feats: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits_np(feats), axis=-1).astype(np.int64)

    def predict(self, tokenizer: Tokenizer, images: np.ndarray) -> np.ndarray:
        """Class prediction on raw images through the frozen tokenizer."""
        out = tokenizer.tokenize(np.asarray(images))
        return self.predict_features(out.quantized)


def extract_features(tokenizer: Tokenizer, images: np.ndarray, batch_size: int = 128) -> np.ndarray:
    """Quantized features for a full image set (grad-free)."""
    chunks = [tokenizer.tokenize(images[lo:lo + batch_size]).quantized
              for lo in range(0, len(images), batch_size)]
    return np.concatenate(chunks)


def fit_probe(feats: np.ndarray, labels: np.ndarray, n_classes: int, arch: str = "linear",
              epochs: int = 40, lr: float = 1e-2, batch_size: int = 64,
              hidden: int = 64, seed: int = 0) -> tuple[ProbeClassifier, list[float]]:
    """Cross-entropy training on a fixed (N, T, d) feature set."""
    in_dim = int(np.prod(feats.shape[1:]))
    probe = ProbeClassifier.init(arch, in_dim, n_classes, hidden=hidden, seed=seed)
    state = AdamState.init(probe.params, lr)
    losses = []
    for epoch in range(epochs):
        epoch_losses = []
        for lo in range(0, len(labels), batch_size):
            fb = Tensor(feats[lo:lo + batch_size])
            yb = labels[lo:lo + batch_size]
            try:
                loss = ad.tmean(ad.cross_entropy_with_logits(probe.logits(fb), yb))
                ad.zero_grads(probe.params)
                loss.backward()
            except FloatingPointError as err:
                raise RuntimeError(f"probe training diverged at epoch {epoch}: {err}") from err
            ad.adam_step(probe.params, {n: p.grad for n, p in probe.params.items()}, state)
            epoch_losses.append(loss.item())
        losses.append(float(np.mean(epoch_losses)))
    return probe, losses


def train_probe(tokenizer: Tokenizer, dataset: DatasetHandle, arch: str = "linear",
                epochs: int = 40, lr: float = 1e-2, batch_size: int = 64,
                hidden: int = 64, seed: int = 0) -> tuple[ProbeClassifier, list[float]]:
    """Fit a probe on the frozen tokenizer's quantized features; the
    tokenizer is hash-verified untouched."""
    from .checkpoint import hash_params

    tok_hash = hash_params(tokenizer.params)
    feats = extract_features(tokenizer, dataset.images)
    probe, losses = fit_probe(feats, dataset.labels, dataset.n_classes, arch=arch,
                              epochs=epochs, lr=lr, batch_size=batch_size,
                              hidden=hidden, seed=seed)
    if hash_params(tokenizer.params) != tok_hash:
        raise RuntimeError("tokenizer parameters changed during probe training")
    return probe, losses


def accuracy(probe: ProbeClassifier, tokenizer: Tokenizer, images: np.ndarray,
             labels: np.ndarray) -> float:
    return float((probe.predict(tokenizer, images) == np.asarray(labels)).mean())
