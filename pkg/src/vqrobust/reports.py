"""Deterministic CSV / JSON / text emission for attack and evaluation results.

Files that the determinism contract covers (CSVs, PPMs, checkpoints) never
contain wall-clock values; timing lives only in JSON summaries."""

from __future__ import annotations

import csv
import io
import json
import os

import numpy as np

from .attack import AttackResult
from .harness import EvalReport

ATTACK_CSV_COLUMNS = ("example_id", "epsilon", "objective_kind", "clean_pred",
                      "adv_pred", "success", "changed_tokens", "best_loss")

EVAL_CSV_COLUMNS = ("tokenizer_hash", "probe_hash", "objective", "epsilon",
                    "clean_accuracy", "robust_accuracy", "n_points", "n_attacked",
                    "n_success", "changed_success_mean", "changed_unsuccess_mean")


def _fmt(x: float, spec: str = ".6f") -> str:
    if isinstance(x, float) and np.isnan(x):
        return ""
    return format(x, spec)


def attack_csv(result: AttackResult, epsilon: float, objective_kind: str,
               clean_pred: np.ndarray | None = None,
               adv_pred: np.ndarray | None = None) -> str:
    """Per-example attack report; predictions are -1 when no probe was used."""
    n = len(result.x_adv)
    clean_pred = np.full(n, -1) if clean_pred is None else clean_pred
    adv_pred = np.full(n, -1) if adv_pred is None else adv_pred
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ATTACK_CSV_COLUMNS)
    for i in range(n):
        w.writerow([i, repr(float(epsilon)), objective_kind, int(clean_pred[i]),
                    int(adv_pred[i]), int(result.success[i]),
                    int(result.changed_token_count[i]),
                    _fmt(float(result.best_loss[i]), ".6g")])
    return buf.getvalue()


def attack_summary(result: AttackResult, epsilon: float, objective_kind: str) -> dict:
    return {
        "objective": objective_kind,
        "epsilon": float(epsilon),
        "n_examples": int(len(result.x_adv)),
        "n_success": int(result.success.sum()),
        "mean_changed_tokens": float(result.changed_token_count.mean()),
        "mean_best_loss": float(result.best_loss.mean()),
    }


def eval_report_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVAL_CSV_COLUMNS)
    for r in report.rows:
        w.writerow([report.tokenizer_hash, report.probe_hash, r.objective,
                    repr(float(r.epsilon)), _fmt(r.clean_accuracy), _fmt(r.robust_accuracy),
                    r.n_points, r.n_attacked, r.n_success,
                    _fmt(r.changed_success_mean, ".4f"), _fmt(r.changed_unsuccess_mean, ".4f")])
    return buf.getvalue()


def eval_report_json(report: EvalReport) -> str:
    payload = {
        "tokenizer_hash": report.tokenizer_hash,
        "probe_hash": report.probe_hash,
        "rows": [
            {
                "objective": r.objective,
                "epsilon": r.epsilon,
                "clean_accuracy": r.clean_accuracy,
                "robust_accuracy": r.robust_accuracy,
                "n_points": r.n_points,
                "n_attacked": r.n_attacked,
                "n_success": r.n_success,
                "changed_success_mean": None if np.isnan(r.changed_success_mean) else r.changed_success_mean,
                "changed_unsuccess_mean": None if np.isnan(r.changed_unsuccess_mean) else r.changed_unsuccess_mean,
                "seconds": r.seconds,
            }
            for r in report.rows
        ],
    }
    return json.dumps(payload, sort_keys=True, indent=1)


def load_eval_report(path: str) -> EvalReport:
    from .harness import EvalRow

    with open(path) as f:
        payload = json.load(f)
    rows = [EvalRow(r["objective"], r["epsilon"], r["clean_accuracy"], r["robust_accuracy"],
                    r["n_points"], r["n_attacked"], r["n_success"],
                    float("nan") if r["changed_success_mean"] is None else r["changed_success_mean"],
                    float("nan") if r["changed_unsuccess_mean"] is None else r["changed_unsuccess_mean"],
                    r["seconds"])
            for r in payload["rows"]]
    return EvalReport(payload["tokenizer_hash"], payload["probe_hash"], rows)


def emit_report(reports: list[EvalReport], out_dir: str) -> dict:
    """Merged accuracy-vs-epsilon table across tokenizers, as text and CSV.

    Columns are keyed by (short) tokenizer checkpoint hash; re-running on the
    same inputs produces byte-identical files."""
    if not reports:
        raise ValueError("emit_report needs at least one EvalReport")
    os.makedirs(out_dir, exist_ok=True)
    merged_csv = os.path.join(out_dir, "report.csv")
    with open(merged_csv, "w") as f:
        header = ",".join(EVAL_CSV_COLUMNS) + "\n"
        f.write(header)
        for rep in reports:
            body = eval_report_csv(rep)
            f.write(body.split("\n", 1)[1])

    objectives = sorted({r.objective for rep in reports for r in rep.rows})
    epsilons = sorted({r.epsilon for rep in reports for r in rep.rows})
    lines = []
    for obj in objectives:
        lines.append(f"== {obj} ==")
        head = "tokenizer".ljust(14) + "".join(f"{'eps=' + _short_eps(e):>16}" for e in epsilons)
        lines.append(head)
        for rep in reports:
            cells = []
            for e in epsilons:
                try:
                    cells.append(f"{rep.row(obj, e).robust_accuracy:>16.4f}")
                except KeyError:
                    cells.append(f"{'-':>16}")
            lines.append(rep.tokenizer_hash[:12].ljust(14) + "".join(cells))
        lines.append("")
    text = "\n".join(lines)
    txt_path = os.path.join(out_dir, "report.txt")
    with open(txt_path, "w") as f:
        f.write(text)
    return {"csv": merged_csv, "txt": txt_path,
            "n_reports": len(reports), "objectives": objectives,
            "epsilons": [float(e) for e in epsilons]}


def _short_eps(epsilon: float) -> str:
    scaled = epsilon * 255.0
    if abs(scaled - round(scaled)) < 1e-9:
        return f"{int(round(scaled))}/255"
    return f"{epsilon:.4f}"
