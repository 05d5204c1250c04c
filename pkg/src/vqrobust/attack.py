"""APGD under l-inf / l2 constraints with pluggable objectives.

Objectives cover the four unsupervised embedding-distortion variants
(pre/post-quantization on either side), supervised cross-entropy against a
probe, and targeted attacks (match a target image's embeddings, or force a
target class). Post-quantization variants are evaluated with a straight-
through estimator: the loss VALUE uses quantized vectors while the gradient
is exactly the corresponding pre-quantization variant's gradient.

The optimizer is the momentum + adaptive-step-halving projected ascent:
  z_{t+1} = P(x_t + eta_t * sign(grad))
  x_{t+1} = P(x_t + alpha (z_{t+1} - x_t) + (1 - alpha)(x_t - x_{t-1}))
with checkpoints at ceil(p_j * n_iters), p_0 = 0, p_1 = 0.22,
p_{j+1} = p_j + max(p_j - p_{j-1} - 0.03, 0.06). The step halves at a
checkpoint when too few iterations improved the objective, or when neither a
halving nor a best-loss improvement happened since the last checkpoint; after
halving the search restarts from the best point found.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import Stream
from .tokenizer import Tokenizer

UNSUP_KINDS = ("unsup_hh", "unsup_hq", "unsup_qh", "unsup_qq")
ALL_KINDS = UNSUP_KINDS + ("sup_ce", "targeted_embed", "targeted_class")


@dataclass
class Budget:
    """Perturbation constraint on the [0,1] pixel scale."""

    norm: str = "linf"
    epsilon: float = 8.0 / 255.0
    box_lo: float = 0.0
    box_hi: float = 1.0

    def __post_init__(self):
        if self.norm not in ("linf", "l2"):
            raise ValueError(f"norm must be 'linf' or 'l2', got {self.norm!r}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.box_lo >= self.box_hi:
            raise ValueError(f"need box_lo < box_hi, got [{self.box_lo}, {self.box_hi}]")


def checkpoint_iters(n_iters: int) -> list[int]:
    """Strictly increasing halving checkpoints, last <= n_iters.

    The fraction sequence is exact in hundredths (0.22 start, decrement 0.03,
    floor 0.06), so it is evaluated in integer arithmetic."""
    p, inc = 22, 22  # hundredths
    out = []
    while p <= 100:
        w = min(-(-p * n_iters // 100), n_iters)  # ceil(p * n / 100)
        if w >= 1 and (not out or w > out[-1]):
            out.append(int(w))
        inc = max(inc - 3, 6)
        p += inc
    return out


@dataclass
class ApgdConfig:
    n_iters: int = 100
    n_restarts: int = 1
    alpha: float = 0.75
    step_fraction: float = 1.0  # step_0 = fraction * 2 * epsilon
    decay: float = 0.5
    rho: float = 0.75
    random_start: bool = True
    early_stop: bool = False
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"decay must be in (0, 1), got {self.decay}")
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must be in (0, 1), got {self.rho}")

    @property
    def checkpoints(self) -> list[int]:
        return checkpoint_iters(self.n_iters)


@dataclass
class AttackObjective:
    """Attack kind plus whatever payload the kind needs."""

    kind: str
    labels: np.ndarray | None = None  # sup_ce
    target_images: np.ndarray | None = None  # targeted_embed
    target_class: int | np.ndarray | None = None  # targeted_class (scalar or per-example)

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}, expected one of {ALL_KINDS}")

    @property
    def direction(self) -> str:
        return "min" if self.kind.startswith("targeted") else "max"

    @property
    def needs_probe(self) -> bool:
        return self.kind in ("sup_ce", "targeted_class")


class CompiledObjective:
    """Objective with clean-side constants folded in; maps a perturbed batch
    tensor to a per-example loss vector.

    `h_ref` overrides the reference embeddings (the adversarial-training
    inner loop compares against a different, frozen tokenizer's embeddings).
    """

    def __init__(self, objective: AttackObjective, tokenizer: Tokenizer,
                 probe=None, x_clean: np.ndarray | None = None,
                 h_ref: np.ndarray | None = None):
        self.objective = objective
        kind = objective.kind
        if objective.needs_probe and probe is None:
            raise ValueError(f"objective {kind} requires a probe classifier")
        if kind == "sup_ce" and objective.labels is None:
            raise ValueError("sup_ce requires true labels")
        if kind == "targeted_embed" and objective.target_images is None:
            raise ValueError("targeted_embed requires target images")
        if kind == "targeted_class" and objective.target_class is None:
            raise ValueError("targeted_class requires a target class")
        self.tok = tokenizer.frozen()
        self.probe = probe.frozen() if (probe is not None and hasattr(probe, "frozen")) else probe

        self.h_ref = h_ref
        if h_ref is None:
            if kind in ("unsup_hh", "unsup_qh"):
                self.h_ref = self.tok.encode(x_clean).data
            elif kind in ("unsup_hq", "unsup_qq"):
                self.h_ref = self.tok.tokenize(x_clean).quantized
            elif kind == "targeted_embed":
                self.h_ref = self.tok.encode(objective.target_images).data

    def per_example(self, x_adv: Tensor) -> Tensor:
        """Loss vector (B,); summed over tokens, per example."""
        kind = self.objective.kind
        if kind in ("sup_ce", "targeted_class"):
            h = self.tok.encode(x_adv)
            st, _ = self.tok.quantize_st(h)
            logits = self.probe.logits(st)
            if kind == "sup_ce":
                labels = self.objective.labels
            else:
                labels = np.broadcast_to(np.asarray(self.objective.target_class, dtype=np.int64),
                                         (x_adv.shape[0],))
            return ad.cross_entropy_with_logits(logits, labels)

        h = self.tok.encode(x_adv)
        ref = Tensor(self.h_ref.astype(h.data.dtype))
        smooth = ad.tsum(ad.sq_l2(ad.sub(h, ref)), axis=1)
        if kind in ("unsup_hh", "unsup_hq", "targeted_embed"):
            return smooth
        # unsup_qh / unsup_qq: straight-through at the loss level, so the
        # value uses the quantized perturbed embeddings while the gradient is
        # the matching pre-quantization variant's
        q_adv = self.tok.quantize(h.data).quantized
        value = np.sum((q_adv - self.h_ref.astype(q_adv.dtype)) ** 2, axis=(1, 2))
        return ad.st_identity(smooth, value)

    def eval_mean(self, x_adv) -> Tensor:
        x = x_adv if isinstance(x_adv, Tensor) else Tensor(x_adv)
        return ad.tmean(self.per_example(x))


def objective_eval(kind: str, tokenizer: Tokenizer, probe, x_adv, x_clean,
                   labels=None, target_images=None, target_class=None) -> Tensor:
    """Scalar (batch-mean) differentiable loss for one objective kind."""
    obj = AttackObjective(kind, labels=labels, target_images=target_images, target_class=target_class)
    compiled = CompiledObjective(obj, tokenizer, probe, np.asarray(x_clean))
    return compiled.eval_mean(x_adv)


# ---------------------------------------------------------------------------
# APGD core


@dataclass
class AttackResult:
    delta: np.ndarray
    x_adv: np.ndarray
    best_loss: np.ndarray  # (B,), in the caller's direction
    best_loss_trace: np.ndarray  # (n_marks, B), monotone in the improving direction
    trace_iters: list[int]
    success: np.ndarray  # (B,) bool
    changed_token_count: np.ndarray  # (B,) int


def _project(delta: np.ndarray, x: np.ndarray, budget: Budget) -> np.ndarray:
    if budget.norm == "linf":
        delta = np.clip(delta, -budget.epsilon, budget.epsilon)
    else:
        flat = delta.reshape(len(delta), -1)
        norms = np.sqrt((flat * flat).sum(axis=1))
        scale = np.minimum(1.0, budget.epsilon / np.maximum(norms, 1e-12))
        delta = delta * scale.reshape(-1, *([1] * (delta.ndim - 1)))
    return np.clip(x + delta, budget.box_lo, budget.box_hi) - x


def _check_feasible(delta: np.ndarray, x: np.ndarray, budget: Budget, it: int) -> None:
    if budget.norm == "linf":
        worst = np.abs(delta).max() if delta.size else 0.0
    else:
        worst = np.sqrt((delta.reshape(len(delta), -1) ** 2).sum(axis=1)).max() if delta.size else 0.0
    if worst > budget.epsilon + 1e-6:
        raise RuntimeError(f"APGD feasibility violated at iteration {it}: |delta| = {worst}")
    xa = x + delta
    if xa.min() < budget.box_lo - 1e-9 or xa.max() > budget.box_hi + 1e-9:
        raise RuntimeError(f"APGD box constraint violated at iteration {it}")


def _random_init(shape: tuple, budget: Budget, rng: Stream) -> np.ndarray:
    if budget.norm == "linf":
        return rng.uniform(shape, -budget.epsilon, budget.epsilon).astype(np.float32)
    z = rng.normal(shape).astype(np.float32)
    flat = z.reshape(shape[0], -1)
    norms = np.maximum(np.sqrt((flat * flat).sum(axis=1)), 1e-12)
    n = flat.shape[1]
    radii = budget.epsilon * rng.uniform((shape[0],)) ** (1.0 / n)
    return (z * (radii / norms).reshape(-1, *([1] * (len(shape) - 1)))).astype(np.float32)


def _grad_and_loss(compiled: CompiledObjective, x_np: np.ndarray, sign: float, it: int):
    x = Tensor(x_np, requires_grad=True)
    try:
        vec = compiled.per_example(x)
        ad.tsum(vec).backward()
    except FloatingPointError as err:
        raise RuntimeError(f"non-finite gradient at APGD iteration {it}: {err}") from err
    g = np.zeros_like(x_np) if x.grad is None else x.grad
    return sign * vec.data.astype(np.float64), sign * g


def _step_dir(g: np.ndarray, budget: Budget) -> np.ndarray:
    if budget.norm == "linf":
        return np.sign(g)
    flat = g.reshape(len(g), -1)
    norms = np.maximum(np.sqrt((flat * flat).sum(axis=1)), 1e-12)
    return g / norms.reshape(-1, *([1] * (g.ndim - 1)))


def _single_run(compiled: CompiledObjective, budget: Budget, config: ApgdConfig,
                x0: np.ndarray, sign: float, rng: Stream, success_fn=None):
    b = x0.shape[0]
    eps = budget.epsilon
    delta0 = _random_init(x0.shape, budget, rng) if (config.random_start and eps > 0) else np.zeros_like(x0)
    x = x0 + _project(delta0, x0, budget)
    _check_feasible(x - x0, x0, budget, 0)

    f, g = _grad_and_loss(compiled, x, sign, 0)
    x_best, f_best, g_best = x.copy(), f.copy(), g.copy()
    trace = [f_best.copy()]
    trace_iters = [0]

    eta = np.full(b, config.step_fraction * 2.0 * eps, dtype=np.float64)
    x_prev = x.copy()
    halved_last = np.zeros(b, dtype=bool)
    f_best_last_ckpt = f_best.copy()
    n_improve = np.zeros(b, dtype=np.int64)
    done = np.zeros(b, dtype=bool)
    ckpts = config.checkpoints
    prev_ckpt = 0

    for t in range(1, config.n_iters + 1):
        eta_b = eta.reshape(-1, *([1] * (x.ndim - 1)))
        z = x0 + _project(x + eta_b.astype(np.float32) * _step_dir(g, budget) - x0, x0, budget)
        a = 1.0 if t == 1 else config.alpha
        x_new = x0 + _project(x + a * (z - x) + (1.0 - a) * (x - x_prev) - x0, x0, budget)
        if config.early_stop and done.any():
            x_new[done] = x[done]
        _check_feasible(x_new - x0, x0, budget, t)
        x_prev, x = x, x_new

        f_new, g_new = _grad_and_loss(compiled, x, sign, t)
        live = ~done if config.early_stop else np.ones(b, dtype=bool)
        n_improve += live & (f_new > f)
        f, g = f_new, g_new
        improved = live & (f > f_best)
        x_best[improved] = x[improved]
        f_best[improved] = f[improved]
        g_best[improved] = g[improved]

        if config.early_stop and success_fn is not None:
            done |= np.asarray(success_fn(x), dtype=bool)

        if t in ckpts:
            window = t - prev_ckpt
            cond1 = n_improve < config.rho * window
            cond2 = (~halved_last) & (f_best <= f_best_last_ckpt)
            halve = (cond1 | cond2) & live
            eta[halve] *= config.decay
            # restart from the best point found so far
            x[halve] = x_best[halve]
            g[halve] = g_best[halve]
            x_prev[halve] = x_best[halve]
            f[halve] = f_best[halve]
            halved_last = halve
            f_best_last_ckpt = f_best.copy()
            n_improve[:] = 0
            prev_ckpt = t
            trace.append(f_best.copy())
            trace_iters.append(t)

    if trace_iters[-1] != config.n_iters:
        trace.append(f_best.copy())
        trace_iters.append(config.n_iters)
    return x_best, f_best, np.stack(trace), trace_iters


def run_compiled(compiled: CompiledObjective, budget: Budget, config: ApgdConfig,
                 x0: np.ndarray, success_fn=None):
    """Restart loop over `_single_run`; returns (x_best, f_best, trace,
    trace_iters) with losses still in the internal maximize convention."""
    sign = 1.0 if compiled.objective.direction == "max" else -1.0
    root = Stream(config.seed, "attack")
    x_best = f_best = None
    trace_all: list[np.ndarray] = []
    trace_iters_all: list[int] = []
    for r in range(max(1, config.n_restarts)):
        xb, fb, trace, titers = _single_run(compiled, budget, config, x0, sign,
                                            root.child(f"restart{r}"), success_fn)
        if x_best is None:
            x_best, f_best = xb, fb
            trace_all = [row for row in trace]
            trace_iters_all = list(titers)
        else:
            better = fb > f_best  # strict: earlier restart wins ties
            x_best[better] = xb[better]
            f_best[better] = fb[better]
            floor = trace_all[-1]
            for row in trace:
                floor = np.maximum(floor, row)
                trace_all.append(floor.copy())
            trace_iters_all.extend(titers)
    return x_best, f_best, np.stack(trace_all), trace_iters_all


def apgd(objective: AttackObjective, budget: Budget, config: ApgdConfig,
         batch: np.ndarray, tokenizer: Tokenizer, probe=None,
         success_fn=None) -> AttackResult:
    """Run APGD on a clean batch; returns the best point per example over all
    iterations and restarts (ties across restarts go to the earlier restart)."""
    x0 = np.asarray(batch, dtype=np.float32)
    if x0.min() < budget.box_lo or x0.max() > budget.box_hi:
        raise ValueError("clean batch violates the pixel box")
    compiled = CompiledObjective(objective, tokenizer, probe, x0)
    sign = 1.0 if objective.direction == "max" else -1.0
    if success_fn is None:
        success_fn = default_success_fn(objective, tokenizer, probe, x0)

    x_best, f_best, trace, trace_iters = run_compiled(compiled, budget, config, x0, success_fn)
    delta = x_best - x0
    _check_feasible(delta, x0, budget, config.n_iters)
    success = np.asarray(success_fn(x_best), dtype=bool)
    changed = count_changed_tokens(tokenizer, x0, x_best)
    return AttackResult(
        delta=delta,
        x_adv=x_best,
        best_loss=sign * f_best,
        best_loss_trace=sign * trace,
        trace_iters=trace_iters,
        success=success,
        changed_token_count=changed,
    )


def default_success_fn(objective: AttackObjective, tokenizer: Tokenizer, probe,
                       x_clean: np.ndarray):
    """Probe misclassification for classification attacks, any-token-changed
    for pure-tokenizer attacks, target hit for targeted ones."""
    kind = objective.kind
    if kind == "sup_ce":
        labels = np.asarray(objective.labels)
        return lambda x: probe.predict(tokenizer, x) != labels
    if kind == "targeted_class":
        target = np.asarray(objective.target_class, dtype=np.int64)
        return lambda x: probe.predict(tokenizer, x) == target
    if kind == "targeted_embed" and probe is not None:
        target_pred = probe.predict(tokenizer, objective.target_images)
        return lambda x: probe.predict(tokenizer, x) == target_pred
    return lambda x: count_changed_tokens(tokenizer, x_clean, x) > 0


def count_changed_tokens(tokenizer: Tokenizer, x_clean: np.ndarray, x_adv: np.ndarray) -> np.ndarray:
    """Hamming distance between the token index maps of two batches."""
    ia = tokenizer.tokenize(np.asarray(x_clean)).indices
    ib = tokenizer.tokenize(np.asarray(x_adv)).indices
    diff = ia != ib
    return diff.reshape(len(diff), -1).sum(axis=1).astype(np.int64)


# ---------------------------------------------------------------------------
# epsilon sweep


@dataclass
class SweepRow:
    epsilon: float
    robust_accuracy: float
    n_broken: int


def epsilon_sweep(objective_kind: str, budgets: list[Budget], config: ApgdConfig,
                  images: np.ndarray, labels: np.ndarray, tokenizer: Tokenizer,
                  probe) -> tuple[float, list[SweepRow]]:
    """Accuracy under attack per radius; points broken at a smaller radius
    stay broken (their adversarial examples remain feasible), so the curve is
    non-increasing by construction."""
    budgets = sorted(budgets, key=lambda b: b.epsilon)
    preds = probe.predict(tokenizer, images)
    correct = preds == labels
    n = len(labels)
    broken = np.zeros(n, dtype=bool)
    rows = []
    for budget in budgets:
        attackable = correct & ~broken
        if budget.epsilon > 0 and attackable.any():
            idx = np.nonzero(attackable)[0]
            obj = AttackObjective(objective_kind,
                                  labels=labels[idx] if objective_kind == "sup_ce" else None)
            res = apgd(obj, budget, config, images[idx], tokenizer, probe,
                       success_fn=None if objective_kind == "sup_ce"
                       else (lambda x, i=idx: probe.predict(tokenizer, x) != labels[i]))
            broken[idx[res.success]] = True
        rows.append(SweepRow(budget.epsilon, float((correct & ~broken).mean()), int(broken.sum())))
    return float(correct.mean()), rows
