"""Command-line front end.

Every subcommand reads a config file (--config), applies --set overrides,
writes artifacts under --out, drops a manifest (config snapshot + input
hashes) sufficient to re-run bit-identically, and prints a one-line JSON
summary to stdout. Exit codes: 0 success, 1 validation/runtime failure,
2 usage error."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .attack import ApgdConfig, AttackObjective, Budget, apgd
from .checkpoint import (
    hash_file,
    hash_params,
    load_checkpoint,
    load_probe,
    save_checkpoint,
    save_probe,
)
from .config import ConfigError, RunConfig, load_config
from .datasets import DatasetHandle, gen_shapes, load_cifar10
from .finetune import (
    FinetuneConfig,
    FrozenReference,
    end2end_adv_train,
    training_cost_probe,
    unsup_adv_finetune,
)
from .harness import (
    evaluate_robustness,
    objective_ablation,
    reconstruct_adversarial,
    targeted_demo,
)
from .probe import accuracy, train_probe
from .reports import (
    attack_csv,
    attack_summary,
    emit_report,
    eval_report_csv,
    eval_report_json,
    load_eval_report,
)
from .tokenizer import TokenizerConfig, pretrain

COMMANDS = ("pretrain", "train-probe", "attack", "advtrain", "advtrain-e2e", "eval",
            "ablate-objective", "reconstruct", "targeted-demo", "bench-cost", "report")


def _tok_config(cfg: RunConfig) -> TokenizerConfig:
    seed = cfg.get("tokenizer", "seed")
    return TokenizerConfig(
        image_side=cfg.get("data", "image_side"),
        channels=cfg.get("data", "channels"),
        patch_side=cfg.get("tokenizer", "patch_side"),
        d=cfg.get("tokenizer", "d"),
        K=cfg.get("tokenizer", "K"),
        M=cfg.get("tokenizer", "M"),
        encoder_width=cfg.get("tokenizer", "encoder_width"),
        encoder_depth=cfg.get("tokenizer", "encoder_depth"),
        seed=cfg.get("run", "seed") if seed < 0 else seed,
    )


def _apgd_config(cfg: RunConfig, n_iters: int | None = None) -> ApgdConfig:
    return ApgdConfig(
        n_iters=cfg.get("apgd", "n_iters") if n_iters is None else n_iters,
        n_restarts=cfg.get("apgd", "n_restarts"),
        alpha=cfg.get("apgd", "alpha"),
        step_fraction=cfg.get("apgd", "step_fraction"),
        decay=cfg.get("apgd", "decay"),
        rho=cfg.get("apgd", "rho"),
        random_start=cfg.get("apgd", "random_start"),
        early_stop=cfg.get("apgd", "early_stop"),
        seed=cfg.get("run", "seed"),
    )


def _finetune_config(cfg: RunConfig) -> FinetuneConfig:
    return FinetuneConfig(
        train_radius=cfg.get("finetune", "radius"),
        inner_steps=cfg.get("finetune", "inner_steps"),
        epochs=cfg.get("finetune", "epochs"),
        lr=cfg.get("finetune", "lr"),
        batch_size=cfg.get("finetune", "batch_size"),
        warmup_frac=cfg.get("finetune", "warmup_frac"),
        eval_slice=cfg.get("finetune", "eval_slice"),
        inner_random_start=cfg.get("finetune", "inner_random_start"),
        seed=cfg.get("run", "seed"),
        dataset_id=cfg.get("data", "source"),
    )


def _dataset(cfg: RunConfig, split: str) -> DatasetHandle:
    source = cfg.get("data", "source")
    sizes = {"train": cfg.get("data", "n_train"), "test": cfg.get("data", "n_test"),
             "finetune": cfg.get("data", "n_finetune")}
    if source == "shapes_synthetic":
        return gen_shapes(seed=cfg.get("run", "seed"), n=sizes[split],
                          image_side=cfg.get("data", "image_side"),
                          classes=cfg.get("data", "classes"),
                          channels=cfg.get("data", "channels"), split=split)
    if source == "cifar10_binary":
        ds = load_cifar10(cfg.get("data", "cifar_dir"), "train" if split != "test" else "test")
        return ds.take(sizes[split])
    raise ConfigError(f"unknown data.source {source!r}")


def _need(cfg: RunConfig, key: str) -> str:
    path = cfg.get("paths", key)
    if not path:
        raise ConfigError(f"paths.{key} is required for this command")
    if not os.path.exists(path):
        raise ConfigError(f"paths.{key}: no such file {path!r}")
    return path


def _manifest(out_dir: str, command: str, cfg: RunConfig, inputs: list[str]) -> None:
    payload = {
        "command": command,
        "config": cfg.serialize(),
        "inputs": {p: hash_file(p) for p in sorted(inputs)},
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(payload, f, sort_keys=True, indent=1)


def _budgets(epsilons: list[float], norm: str) -> list[Budget]:
    return [Budget(norm=norm, epsilon=e) for e in epsilons]


# ---------------------------------------------------------------------------
# subcommand bodies; each returns the stdout summary dict


def _cmd_pretrain(cfg: RunConfig, out: str) -> dict:
    tok_cfg = _tok_config(cfg)
    train = _dataset(cfg, "train")
    tok, log = pretrain(tok_cfg, train, epochs=cfg.get("pretrain", "epochs"),
                        lr=cfg.get("pretrain", "lr"),
                        beta_commit=cfg.get("pretrain", "beta_commit"),
                        batch_size=cfg.get("pretrain", "batch_size"))
    path = os.path.join(out, "tokenizer.vqrb")
    save_checkpoint(path, tok)
    return {"checkpoint": path, "hash": hash_params(tok.params),
            "first_loss": log.epoch_loss[0] if log.epoch_loss else None,
            "final_loss": log.epoch_loss[-1] if log.epoch_loss else None}


def _cmd_train_probe(cfg: RunConfig, out: str) -> dict:
    tok, _ = load_checkpoint(_need(cfg, "tokenizer"))
    train = _dataset(cfg, "train")
    test = _dataset(cfg, "test")
    probe, losses = train_probe(tok, train, arch=cfg.get("probe", "arch"),
                                epochs=cfg.get("probe", "epochs"),
                                lr=cfg.get("probe", "lr"),
                                batch_size=cfg.get("probe", "batch_size"),
                                hidden=cfg.get("probe", "hidden"),
                                seed=cfg.get("run", "seed"))
    path = os.path.join(out, "probe.vqpr")
    save_probe(path, probe)
    return {"checkpoint": path, "hash": hash_params(probe.params),
            "train_accuracy": accuracy(probe, tok, train.images, train.labels),
            "test_accuracy": accuracy(probe, tok, test.images, test.labels)}


def _cmd_attack(cfg: RunConfig, out: str) -> dict:
    tok, _ = load_checkpoint(_need(cfg, "tokenizer"))
    kind = cfg.get("attack", "objective")
    budget = Budget(norm=cfg.get("budget", "norm"), epsilon=cfg.get("budget", "epsilon"))
    test = _dataset(cfg, "test").take(cfg.get("attack", "n_images"))
    probe = None
    clean_pred = adv_pred = None
    obj = AttackObjective(kind, labels=test.labels if kind == "sup_ce" else None,
                          target_images=np.roll(test.images, 1, axis=0)
                          if kind == "targeted_embed" else None,
                          target_class=0 if kind == "targeted_class" else None)
    if obj.needs_probe or cfg.get("paths", "probe"):
        probe = load_probe(_need(cfg, "probe"))
    res = apgd(obj, budget, _apgd_config(cfg), test.images, tok, probe=probe)
    if probe is not None:
        clean_pred = probe.predict(tok, test.images)
        adv_pred = probe.predict(tok, res.x_adv)
    csv_path = os.path.join(out, "attack.csv")
    with open(csv_path, "w") as f:
        f.write(attack_csv(res, budget.epsilon, kind, clean_pred, adv_pred))
    summary = attack_summary(res, budget.epsilon, kind)
    with open(os.path.join(out, "attack_summary.json"), "w") as f:
        json.dump(summary, f, sort_keys=True, indent=1)
    summary["csv"] = csv_path
    return summary


def _cmd_advtrain(cfg: RunConfig, out: str) -> dict:
    tok_path = _need(cfg, "tokenizer")
    tok, _ = load_checkpoint(tok_path)
    ft_cfg = _finetune_config(cfg)
    pool = _dataset(cfg, "finetune")
    robust, log = unsup_adv_finetune(tok, FrozenReference(tok), ft_cfg, pool)
    path = os.path.join(out, "tokenizer_robust.vqrb")
    save_checkpoint(path, robust, meta={
        "train_radius": ft_cfg.train_radius, "inner_steps": ft_cfg.inner_steps,
        "epochs": ft_cfg.epochs, "dataset": ft_cfg.dataset_id,
        "parent": hash_file(tok_path)})
    return {"checkpoint": path, "hash": hash_params(robust.params),
            "inner_loss_before": log.epoch_eval_loss[0],
            "inner_loss_after": log.epoch_eval_loss[-1]}


def _cmd_advtrain_e2e(cfg: RunConfig, out: str) -> dict:
    tok, _ = load_checkpoint(_need(cfg, "tokenizer"))
    probe = load_probe(_need(cfg, "probe"))
    ft_cfg = _finetune_config(cfg)
    train = _dataset(cfg, "train")
    new_tok, new_probe, log = end2end_adv_train(tok, probe, ft_cfg, train)
    tok_path = os.path.join(out, "tokenizer_e2e.vqrb")
    probe_path = os.path.join(out, "probe_e2e.vqpr")
    save_checkpoint(tok_path, new_tok, meta={
        "train_radius": ft_cfg.train_radius, "inner_steps": ft_cfg.inner_steps,
        "epochs": ft_cfg.epochs, "dataset": ft_cfg.dataset_id, "mode": "end2end"})
    save_probe(probe_path, new_probe)
    return {"tokenizer": tok_path, "probe": probe_path,
            "inner_loss_trace": log.epoch_mean_inner_loss}


def _cmd_eval(cfg: RunConfig, out: str) -> dict:
    tok, _ = load_checkpoint(_need(cfg, "tokenizer"))
    probe = load_probe(_need(cfg, "probe"))
    test = _dataset(cfg, "test").take(cfg.get("eval", "test_slice"))
    budgets = _budgets(cfg.get("eval", "epsilons"), cfg.get("budget", "norm"))
    report = evaluate_robustness(tok, probe, cfg.get("eval", "objectives"), budgets,
                                 test.images, test.labels,
                                 _apgd_config(cfg, n_iters=cfg.get("eval", "iters")))
    csv_path = os.path.join(out, "eval.csv")
    json_path = os.path.join(out, "eval.json")
    with open(csv_path, "w") as f:
        f.write(eval_report_csv(report))
    with open(json_path, "w") as f:
        f.write(eval_report_json(report))
    return {"csv": csv_path, "json": json_path, "rows": len(report.rows),
            "clean_accuracy": report.rows[0].clean_accuracy if report.rows else None}


def _cmd_ablate(cfg: RunConfig, out: str) -> dict:
    tok, _ = load_checkpoint(_need(cfg, "tokenizer"))
    probe = load_probe(_need(cfg, "probe"))
    test = _dataset(cfg, "test").take(cfg.get("eval", "test_slice"))
    budgets = [b for b in _budgets(cfg.get("eval", "epsilons"), cfg.get("budget", "norm"))
               if b.epsilon > 0]
    report, soft = objective_ablation(tok, probe, budgets, test.images, test.labels,
                                      _apgd_config(cfg, n_iters=cfg.get("eval", "iters")))
    csv_path = os.path.join(out, "ablation.csv")
    with open(csv_path, "w") as f:
        f.write(eval_report_csv(report))
    with open(os.path.join(out, "ablation.json"), "w") as f:
        f.write(eval_report_json(report))
    return {"csv": csv_path, "hh_best_or_tied": {repr(k): bool(v) for k, v in soft.items()}}


def _cmd_reconstruct(cfg: RunConfig, out: str) -> dict:
    tok, _ = load_checkpoint(_need(cfg, "tokenizer"))
    test = _dataset(cfg, "test").take(cfg.get("reconstruct", "n_images"))
    budgets = _budgets(cfg.get("reconstruct", "epsilons"), cfg.get("budget", "norm"))
    stats = reconstruct_adversarial(tok, test.images, budgets,
                                    iters=cfg.get("reconstruct", "iters"),
                                    out_dir=out, seed=cfg.get("run", "seed"))
    return {"grids": [s.grid_path for s in stats],
            "recon_shift": {repr(s.epsilon): s.mean_abs_recon_shift for s in stats}}


def _cmd_targeted(cfg: RunConfig, out: str) -> dict:
    tok, _ = load_checkpoint(_need(cfg, "tokenizer"))
    probe = load_probe(_need(cfg, "probe"))
    test = _dataset(cfg, "test")
    n = cfg.get("targeted", "n_pairs")
    src, tgt = _different_class_pairs(test, n)
    stats = targeted_demo(tok, probe, src, tgt,
                          Budget(norm=cfg.get("budget", "norm"),
                                 epsilon=cfg.get("targeted", "epsilon")),
                          iters=cfg.get("targeted", "iters"), out_dir=out,
                          seed=cfg.get("run", "seed"))
    return {"n_pairs": stats.n_pairs, "embed_adv_flipped": stats.embed_adv_flipped,
            "embed_recon_flipped": stats.embed_recon_flipped,
            "class_adv_flipped": stats.class_adv_flipped,
            "class_recon_kept": stats.class_recon_kept, "grid": stats.grid_path}


def _different_class_pairs(test: DatasetHandle, n: int):
    """First n (source, target) pairs with different labels; sources come from
    the first half of the set, targets from the second half, in dataset order."""
    half = len(test) // 2
    src_idx, tgt_idx = [], []
    used = set()
    for i in range(half):
        for j in range(half, len(test)):
            if j not in used and test.labels[j] != test.labels[i]:
                src_idx.append(i)
                tgt_idx.append(j)
                used.add(j)
                break
        if len(src_idx) == n:
            break
    if len(src_idx) < n:
        raise ConfigError(f"could not assemble {n} different-class pairs from {len(test)} images")
    return test.images[src_idx], test.images[tgt_idx]


def _cmd_bench(cfg: RunConfig, out: str) -> dict:
    tok, _ = load_checkpoint(_need(cfg, "tokenizer"))
    probe = load_probe(_need(cfg, "probe"))
    pool = _dataset(cfg, "finetune")
    bench_cfg = FinetuneConfig(train_radius=cfg.get("bench", "radius"),
                               inner_steps=cfg.get("bench", "inner_steps"),
                               batch_size=cfg.get("bench", "batch_size"),
                               seed=cfg.get("run", "seed"))
    unsup = training_cost_probe("unsup", tok, probe, bench_cfg, pool,
                                n_batches=cfg.get("bench", "batches"),
                                warmup=cfg.get("bench", "warmup"))
    e2e = training_cost_probe("end2end", tok, probe, bench_cfg, pool,
                              n_batches=cfg.get("bench", "batches"),
                              warmup=cfg.get("bench", "warmup"))
    summary = {"unsup_s_per_sample": unsup["seconds_per_sample"],
               "e2e_s_per_sample": e2e["seconds_per_sample"],
               "ratio": e2e["seconds_per_sample"] / unsup["seconds_per_sample"]}
    with open(os.path.join(out, "bench_cost.json"), "w") as f:
        json.dump(summary, f, sort_keys=True, indent=1)
    return summary


def _cmd_report(cfg: RunConfig, out: str) -> dict:
    inputs = cfg.get("report", "inputs")
    if not inputs:
        raise ConfigError("report.inputs must list at least one eval JSON")
    reports = [load_eval_report(p) for p in inputs]
    return emit_report(reports, out)


_BODIES = {
    "pretrain": _cmd_pretrain,
    "train-probe": _cmd_train_probe,
    "attack": _cmd_attack,
    "advtrain": _cmd_advtrain,
    "advtrain-e2e": _cmd_advtrain_e2e,
    "eval": _cmd_eval,
    "ablate-objective": _cmd_ablate,
    "reconstruct": _cmd_reconstruct,
    "targeted-demo": _cmd_targeted,
    "bench-cost": _cmd_bench,
    "report": _cmd_report,
}


def _input_paths(cfg: RunConfig, command: str) -> list[str]:
    paths = [cfg.get("paths", k) for k in ("tokenizer", "probe")]
    if command == "report":
        paths.extend(cfg.get("report", "inputs"))
    return [p for p in paths if p and os.path.exists(p)]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vqrobust",
                                     description="discrete-tokenizer robustness toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="config file (section.key = value)")
        p.add_argument("--set", action="append", default=[], metavar="section.key=value",
                       help="override one config value")
        p.add_argument("--out", default=None, help="output directory (default: run.out)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        for item in args.set:
            if "=" not in item:
                raise ConfigError(f"--set wants section.key=value, got {item!r}")
            dotted, _, value = item.partition("=")
            if dotted.count(".") != 1:
                raise ConfigError(f"--set key must be section.key, got {dotted!r}")
            section, key = dotted.split(".")
            cfg.set(section.strip(), key.strip(), value)
        out = args.out or cfg.get("run", "out")
        os.makedirs(out, exist_ok=True)
        _manifest(out, args.command, cfg, _input_paths(cfg, args.command))
        summary = _BODIES[args.command](cfg, out)
    except (ConfigError, ValueError, RuntimeError, OSError) as err:
        print(json.dumps({"error": f"{type(err).__name__}: {err}"}), file=sys.stderr)
        return 1
    print(json.dumps({"command": args.command, **summary}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
