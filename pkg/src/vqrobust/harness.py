"""Measurement pipelines: clean/robust accuracy grids, the objective-variant
ablation, adversarial-reconstruction exports, and targeted-attack demos.

Robust accuracy follows the standard convention: only points the probe
classifies correctly are attacked, and survivors are counted over the full
test slice, so robust <= clean per row by construction."""

from __future__ import annotations

import os
import time
from dataclasses import dataclass, field

import numpy as np

from .attack import ApgdConfig, AttackObjective, Budget, UNSUP_KINDS, apgd
from .autodiff import Tensor
from .checkpoint import hash_params
from .ppm import image_grid, write_ppm
from .probe import ProbeClassifier
from .tokenizer import Tokenizer


@dataclass
class EvalRow:
    objective: str
    epsilon: float
    clean_accuracy: float
    robust_accuracy: float
    n_points: int
    n_attacked: int
    n_success: int
    changed_success_mean: float  # nan when no successful attacks
    changed_unsuccess_mean: float  # nan when no unsuccessful attacks
    seconds: float


@dataclass
class EvalReport:
    tokenizer_hash: str
    probe_hash: str
    rows: list[EvalRow] = field(default_factory=list)

    def row(self, objective: str, epsilon: float) -> EvalRow:
        for r in self.rows:
            if r.objective == objective and r.epsilon == epsilon:
                return r
        raise KeyError(f"no row for ({objective}, {epsilon})")


def _attack_row(tok: Tokenizer, probe: ProbeClassifier, objective_kind: str,
                budget: Budget, config: ApgdConfig, images: np.ndarray,
                labels: np.ndarray, correct: np.ndarray, clean_acc: float) -> EvalRow:
    n = len(labels)
    t0 = time.perf_counter()
    if budget.epsilon == 0.0 or not correct.any():
        return EvalRow(objective_kind, budget.epsilon, clean_acc, clean_acc, n,
                       int(correct.sum()), 0, float("nan"), float("nan"),
                       time.perf_counter() - t0)
    idx = np.nonzero(correct)[0]
    obj = AttackObjective(objective_kind,
                          labels=labels[idx] if objective_kind == "sup_ce" else None)
    # success for accuracy purposes is always "probe prediction flips"
    res = apgd(obj, budget, config, images[idx], tok, probe=probe,
               success_fn=lambda x, i=idx: probe.predict(tok, x) != labels[i])
    n_success = int(res.success.sum())
    robust = float((len(idx) - n_success) / n)
    ch = res.changed_token_count
    ch_s = float(ch[res.success].mean()) if n_success else float("nan")
    ch_u = float(ch[~res.success].mean()) if n_success < len(idx) else float("nan")
    return EvalRow(objective_kind, budget.epsilon, clean_acc, robust, n, len(idx),
                   n_success, ch_s, ch_u, time.perf_counter() - t0)


def evaluate_robustness(tok: Tokenizer, probe: ProbeClassifier, objectives: list[str],
                        budgets: list[Budget], images: np.ndarray, labels: np.ndarray,
                        config: ApgdConfig) -> EvalReport:
    """Fill the (objective x epsilon) grid of clean/robust accuracy and
    token-churn statistics."""
    labels = np.asarray(labels)
    preds = probe.predict(tok, images)
    correct = preds == labels
    clean_acc = float(correct.mean())
    report = EvalReport(hash_params(tok.params), hash_params(probe.params))
    for kind in objectives:
        for budget in budgets:
            report.rows.append(_attack_row(tok, probe, kind, budget, config,
                                           images, labels, correct, clean_acc))
    return report


def objective_ablation(tok: Tokenizer, probe: ProbeClassifier, budgets: list[Budget],
                       images: np.ndarray, labels: np.ndarray,
                       config: ApgdConfig) -> tuple[EvalReport, dict]:
    """All four unsupervised variants per radius, plus a soft (reported, not
    enforced) check that the pre/pre variant is strongest."""
    report = evaluate_robustness(tok, probe, list(UNSUP_KINDS), budgets, images, labels, config)
    soft = {}
    for budget in budgets:
        if budget.epsilon == 0.0:
            continue
        accs = {k: report.row(k, budget.epsilon).robust_accuracy for k in UNSUP_KINDS}
        soft[budget.epsilon] = accs["unsup_hh"] <= min(accs.values()) + 1e-12
    return report, soft


@dataclass
class ReconstructionStats:
    epsilon: float
    mean_abs_recon_shift: float  # mean |recon(adv) - recon(clean)|
    clean_recon_mse: float  # MSE(recon(clean), clean)
    adv_recon_mse: float  # MSE(recon(adv), clean)
    grid_path: str = ""


def _reconstruct(tok: Tokenizer, images: np.ndarray) -> np.ndarray:
    out = tok.tokenize(images)
    return tok.decode(Tensor(out.quantized)).data


def reconstruct_adversarial(tok: Tokenizer, images: np.ndarray, budgets: list[Budget],
                            iters: int = 500, out_dir: str | None = None,
                            seed: int = 0) -> list[ReconstructionStats]:
    """Per radius: attack with the embedding-distortion objective, decode both
    clean and adversarial batches, export clean | recon | adv | adv-recon
    grids, and report drift statistics."""
    recon_clean = _reconstruct(tok, images)
    stats = []
    for budget in budgets:
        if budget.epsilon == 0.0:
            x_adv = images.astype(np.float32)
        else:
            cfg = ApgdConfig(n_iters=iters, seed=seed)
            x_adv = apgd(AttackObjective("unsup_hh"), budget, cfg, images, tok).x_adv
        recon_adv = _reconstruct(tok, x_adv)
        row = ReconstructionStats(
            epsilon=budget.epsilon,
            mean_abs_recon_shift=float(np.abs(recon_adv - recon_clean).mean()),
            clean_recon_mse=float(((recon_clean - images) ** 2).mean()),
            adv_recon_mse=float(((recon_adv - images) ** 2).mean()),
        )
        if out_dir is not None:
            panels = [[images[i], recon_clean[i], x_adv[i], recon_adv[i]]
                      for i in range(len(images))]
            path = os.path.join(out_dir, f"recon_eps_{_eps_tag(budget.epsilon)}.ppm")
            write_ppm(path, image_grid(panels))
            row.grid_path = path
        stats.append(row)
    return stats


def _eps_tag(epsilon: float) -> str:
    """Stable filename tag: multiples of 1/255 render as 'N_255'."""
    scaled = epsilon * 255.0
    if abs(scaled - round(scaled)) < 1e-9:
        return f"{int(round(scaled))}_255"
    return repr(epsilon).replace(".", "p")


@dataclass
class TargetedDemoStats:
    n_pairs: int
    # embedding-targeted (image target)
    embed_adv_flipped: float  # adv image classified as the target's class
    embed_recon_flipped: float  # reconstruction of adv classified as target's class
    # class-targeted (supervised)
    class_adv_flipped: float  # adv image classified as the target class
    class_recon_kept: float  # among flips: recon still classified as source class
    grid_path: str = ""


def targeted_demo(tok: Tokenizer, probe: ProbeClassifier, x_src: np.ndarray,
                  x_tgt: np.ndarray, budget: Budget, iters: int = 100,
                  out_dir: str | None = None, seed: int = 0) -> TargetedDemoStats:
    """Run both targeted attacks on source/target pairs and measure the
    dichotomy: embedding-targeted flips the reconstruction's class too,
    class-targeted flips only the adversarial image's class."""
    cfg = ApgdConfig(n_iters=iters, seed=seed)
    src_pred = probe.predict(tok, x_src)
    tgt_pred = probe.predict(tok, x_tgt)

    emb = apgd(AttackObjective("targeted_embed", target_images=x_tgt), budget, cfg,
               x_src, tok, probe=probe)
    emb_recon = _reconstruct(tok, emb.x_adv)
    emb_adv_pred = probe.predict(tok, emb.x_adv)
    emb_recon_pred = probe.predict(tok, emb_recon)

    cls = apgd(AttackObjective("targeted_class", target_class=tgt_pred), budget, cfg,
               x_src, tok, probe=probe)
    cls_recon = _reconstruct(tok, cls.x_adv)
    cls_adv_pred = probe.predict(tok, cls.x_adv)
    cls_recon_pred = probe.predict(tok, cls_recon)
    flipped = cls_adv_pred == tgt_pred
    kept = float((cls_recon_pred[flipped] == src_pred[flipped]).mean()) if flipped.any() else float("nan")

    stats = TargetedDemoStats(
        n_pairs=len(x_src),
        embed_adv_flipped=float((emb_adv_pred == tgt_pred).mean()),
        embed_recon_flipped=float((emb_recon_pred == tgt_pred).mean()),
        class_adv_flipped=float(flipped.mean()),
        class_recon_kept=kept,
    )
    if out_dir is not None:
        panels = [[x_src[i], emb.x_adv[i], emb_recon[i], cls.x_adv[i], cls_recon[i], x_tgt[i]]
                  for i in range(len(x_src))]
        path = os.path.join(out_dir, f"targeted_eps_{_eps_tag(budget.epsilon)}.ppm")
        write_ppm(path, image_grid(panels))
        stats.grid_path = path
    return stats
