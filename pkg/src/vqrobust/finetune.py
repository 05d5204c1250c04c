"""Unsupervised adversarial fine-tuning of the tokenizer encoder, the
end-to-end supervised adversarial-training baseline, and the training-cost
probe comparing the two.

The unsupervised defense minimizes, over encoder parameters only,
    mean_x  max_{|delta| <= eps}  sum_i || h_i(x + delta) - h_i_orig(x) ||^2
where h_orig comes from a frozen snapshot of the original tokenizer. The
inner maximization runs a fixed number of APGD steps without random start;
codebook, decoder, and any downstream heads stay bitwise untouched
(hash-verified)."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor
from .attack import ApgdConfig, AttackObjective, Budget, CompiledObjective, run_compiled
from .checkpoint import hash_params
from .datasets import DatasetHandle
from .probe import ProbeClassifier
from .tokenizer import Tokenizer


@dataclass
class FinetuneConfig:
    train_radius: float = 8.0 / 255.0
    inner_steps: int = 10
    epochs: int = 1
    lr: float = 1e-4
    batch_size: int = 8
    warmup_frac: float = 0.05
    eval_slice: int = 128  # images used for the epoch-boundary loss evals
    # the inner objective is stationary at delta = 0 while the encoder still
    # matches the reference, so the inner attack needs a (deterministic,
    # counter-seeded) random start to produce any training signal
    inner_random_start: bool = True
    seed: int = 0
    dataset_id: str = ""

    def __post_init__(self):
        if self.train_radius < 0:
            raise ValueError(f"train_radius must be >= 0, got {self.train_radius}")
        if self.inner_steps < 0 or self.epochs < 0:
            raise ValueError("inner_steps and epochs must be >= 0")


@dataclass
class FrozenReference:
    """Read-only snapshot of the original tokenizer, hash-verified."""

    tokenizer: Tokenizer
    param_hash: str = ""

    def __post_init__(self):
        self.tokenizer = self.tokenizer.copy()
        for p in self.tokenizer.params.values():
            p.requires_grad = False
        self.param_hash = hash_params(self.tokenizer.params)

    def verify(self) -> None:
        if hash_params(self.tokenizer.params) != self.param_hash:
            raise RuntimeError("frozen reference tokenizer was mutated")


@dataclass
class FinetuneLog:
    batch_inner_loss: list[float] = field(default_factory=list)
    epoch_mean_inner_loss: list[float] = field(default_factory=list)
    epoch_eval_loss: list[float] = field(default_factory=list)  # before training + per epoch end


def _inner_cfg(config: FinetuneConfig, step: int = 0) -> ApgdConfig:
    return ApgdConfig(n_iters=config.inner_steps, n_restarts=1,
                      random_start=config.inner_random_start,
                      seed=config.seed * 1_000_003 + step)


def _embed_gap_loss(tok: Tokenizer, x_adv: np.ndarray, h_ref: np.ndarray) -> Tensor:
    """Batch-mean of the summed per-token squared embedding distances."""
    h = tok.encode(Tensor(x_adv))
    gap = ad.sq_l2(ad.sub(h, Tensor(h_ref.astype(h.data.dtype))))
    return ad.tmean(ad.tsum(gap, axis=1))


def _attack_to_reference(tok: Tokenizer, reference: Tokenizer, xb: np.ndarray,
                         budget: Budget, cfg: ApgdConfig):
    """Inner maximization of the embedding gap against the CURRENT encoder."""
    h_ref = reference.encode(xb).data
    compiled = CompiledObjective(AttackObjective("unsup_hh"), tok, h_ref=h_ref)
    x_adv, f_best, _, _ = run_compiled(compiled, budget, cfg, xb)
    return x_adv, h_ref, f_best


def eval_inner_loss(tok: Tokenizer, reference: Tokenizer, images: np.ndarray,
                    config: FinetuneConfig, batch_size: int = 64) -> float:
    """Mean inner-max loss of the fine-tuning objective over an image set."""
    budget = Budget(epsilon=config.train_radius)
    cfg = _inner_cfg(config)
    vals = []
    for lo in range(0, len(images), batch_size):
        xb = images[lo:lo + batch_size]
        _, _, f_best = _attack_to_reference(tok, reference, xb, budget, cfg)
        vals.extend(f_best.tolist())
    return float(np.mean(vals))


def unsup_adv_finetune(tok: Tokenizer, reference: FrozenReference, config: FinetuneConfig,
                       dataset: DatasetHandle, probe: ProbeClassifier | None = None
                       ) -> tuple[Tokenizer, FinetuneLog]:
    """Encoder-only adversarial fine-tuning toward the reference's clean
    embeddings. Codebook, decoder, and the optional probe are hash-verified
    unchanged; a violation is a hard error."""
    out = tok.copy()
    ref_tok = reference.tokenizer
    frozen_before = {
        "codebook": hash_params(out.params, prefix="codebook"),
        "decoder": hash_params(out.params, prefix="dec."),
        "probe": hash_params(probe.params) if probe is not None else "",
    }
    enc_names = out.param_names("enc.")
    enc_params = {n: out.params[n] for n in enc_names}
    state = AdamState.init(enc_params, config.lr)
    log = FinetuneLog()

    eval_imgs = dataset.images[:min(config.eval_slice, len(dataset))]
    log.epoch_eval_loss.append(eval_inner_loss(out, ref_tok, eval_imgs, config))

    budget = Budget(epsilon=config.train_radius)
    steps_per_epoch = max(1, -(-len(dataset) // config.batch_size))
    total_steps = config.epochs * steps_per_epoch
    warmup_steps = max(1, round(config.warmup_frac * total_steps))
    step = 0
    for epoch in range(config.epochs):
        epoch_losses = []
        for xb, _ in dataset.batches(config.batch_size):
            inner = _inner_cfg(config, step + 1)
            x_adv, h_ref, f_best = _attack_to_reference(out, ref_tok, xb, budget, inner)
            loss = _embed_gap_loss(out, x_adv, h_ref)
            ad.zero_grads(enc_params)
            loss.backward()
            lr = config.lr * min(1.0, (step + 1) / warmup_steps)
            grads = {n: p.grad for n, p in enc_params.items() if p.grad is not None}
            ad.adam_step(enc_params, grads, state, lr=lr)
            step += 1
            epoch_losses.append(float(np.mean(f_best)))
        log.batch_inner_loss.extend(epoch_losses)
        log.epoch_mean_inner_loss.append(float(np.mean(epoch_losses)))
        log.epoch_eval_loss.append(eval_inner_loss(out, ref_tok, eval_imgs, config))

    reference.verify()
    after = {
        "codebook": hash_params(out.params, prefix="codebook"),
        "decoder": hash_params(out.params, prefix="dec."),
        "probe": hash_params(probe.params) if probe is not None else "",
    }
    for name, h in frozen_before.items():
        if after[name] != h:
            raise RuntimeError(f"frozen component '{name}' was mutated during unsupervised fine-tuning")
    return out, log


# ---------------------------------------------------------------------------
# end-to-end supervised adversarial training (comparison baseline)


def _dual_path_quantized(tok: Tokenizer, h: Tensor) -> Tensor:
    """Quantized tokens whose backward reaches BOTH the encoder (straight
    through) and the selected codebook rows, so end-to-end training updates
    the codebook as well."""
    idx = tok.quantize(h.data).indices
    e_q = tok.gather_codes(idx)
    return ad.add(e_q, ad.sub(h, ad.stop_gradient(h)))


def _e2e_loss(tok: Tokenizer, probe: ProbeClassifier, x_adv: np.ndarray,
              labels: np.ndarray) -> Tensor:
    h = tok.encode(Tensor(x_adv))
    q = _dual_path_quantized(tok, h)
    return ad.tmean(ad.cross_entropy_with_logits(probe.logits(q), labels))


def end2end_adv_train(tok: Tokenizer, probe: ProbeClassifier, config: FinetuneConfig,
                      dataset: DatasetHandle) -> tuple[Tokenizer, ProbeClassifier, FinetuneLog]:
    """Standard supervised adversarial training of encoder + codebook + probe
    (decoder untouched)."""
    out = tok.copy()
    new_probe = probe.copy()
    trained = {f"tok.{n}": out.params[n] for n in out.param_names("enc.") + ["codebook"]}
    trained.update({f"probe.{n}": p for n, p in new_probe.params.items()})
    state = AdamState.init(trained, config.lr)
    log = FinetuneLog()
    budget = Budget(epsilon=config.train_radius)
    steps_per_epoch = max(1, -(-len(dataset) // config.batch_size))
    warmup_steps = max(1, round(config.warmup_frac * config.epochs * steps_per_epoch))
    step = 0
    for epoch in range(config.epochs):
        epoch_losses = []
        for xb, yb in dataset.batches(config.batch_size):
            compiled = CompiledObjective(AttackObjective("sup_ce", labels=yb), out, new_probe, xb)
            x_adv, f_best, _, _ = run_compiled(compiled, budget, _inner_cfg(config, step + 1), xb)
            loss = _e2e_loss(out, new_probe, x_adv, yb)
            for p in trained.values():
                p.zero_grad()
            loss.backward()
            lr = config.lr * min(1.0, (step + 1) / warmup_steps)
            grads = {n: p.grad for n, p in trained.items() if p.grad is not None}
            ad.adam_step(trained, grads, state, lr=lr)
            step += 1
            epoch_losses.append(float(np.mean(f_best)))
        log.batch_inner_loss.extend(epoch_losses)
        log.epoch_mean_inner_loss.append(float(np.mean(epoch_losses)))
    return out, new_probe, log


# ---------------------------------------------------------------------------
# training-cost probe


def training_cost_probe(mode: str, tok: Tokenizer, probe: ProbeClassifier,
                        config: FinetuneConfig, dataset: DatasetHandle,
                        n_batches: int = 50, warmup: int = 5) -> dict:
    """Wall-clock seconds per sample of one full training step (inner attack
    plus outer update), averaged over `n_batches` after `warmup` batches."""
    if mode not in ("unsup", "end2end"):
        raise ValueError(f"mode must be 'unsup' or 'end2end', got {mode!r}")
    work = tok.copy()
    work_probe = probe.copy()
    reference = FrozenReference(tok)
    budget = Budget(epsilon=config.train_radius)
    if mode == "unsup":
        enc = {n: work.params[n] for n in work.param_names("enc.")}
        state = AdamState.init(enc, config.lr)
    else:
        trained = {f"tok.{n}": work.params[n] for n in work.param_names("enc.") + ["codebook"]}
        trained.update({f"probe.{n}": p for n, p in work_probe.params.items()})
        state = AdamState.init(trained, config.lr)

    def one_step(xb, yb, step):
        inner = _inner_cfg(config, step + 1)
        if mode == "unsup":
            x_adv, h_ref, _ = _attack_to_reference(work, reference.tokenizer, xb, budget, inner)
            loss = _embed_gap_loss(work, x_adv, h_ref)
            ad.zero_grads(enc)
            loss.backward()
            ad.adam_step(enc, {n: p.grad for n, p in enc.items() if p.grad is not None}, state)
        else:
            compiled = CompiledObjective(AttackObjective("sup_ce", labels=yb), work, work_probe, xb)
            x_adv, _, _, _ = run_compiled(compiled, budget, inner, xb)
            loss = _e2e_loss(work, work_probe, x_adv, yb)
            for p in trained.values():
                p.zero_grad()
            loss.backward()
            ad.adam_step(trained, {n: p.grad for n, p in trained.items() if p.grad is not None}, state)

    batches = []
    while len(batches) < n_batches + warmup:  # cycle the dataset if short
        for xb, yb in dataset.batches(config.batch_size):
            batches.append((xb, yb))
            if len(batches) >= n_batches + warmup:
                break
    n_samples = 0
    elapsed = 0.0
    for i, (xb, yb) in enumerate(batches):
        t0 = time.perf_counter()
        one_step(xb, yb, i)
        dt = time.perf_counter() - t0
        if i >= warmup:
            elapsed += dt
            n_samples += len(xb)
    return {"mode": mode, "seconds_per_sample": elapsed / n_samples,
            "n_batches": n_batches, "batch_size": config.batch_size,
            "inner_steps": config.inner_steps}
