"""Evaluation harness: report grid, ablation, reconstruction, targeted demo."""

import numpy as np
import pytest

from vqrobust.attack import ApgdConfig, Budget
from vqrobust.harness import (
    evaluate_robustness,
    objective_ablation,
    reconstruct_adversarial,
    targeted_demo,
)
from vqrobust.ppm import read_ppm
from vqrobust.reports import (
    attack_csv,
    emit_report,
    eval_report_csv,
    eval_report_json,
    load_eval_report,
)


@pytest.fixture(scope="module")
def small_report(tiny_tok, tiny_probe, tiny_test):
    tok, _ = tiny_tok
    budgets = [Budget(epsilon=0.0), Budget(epsilon=4 / 255)]
    return evaluate_robustness(tok, tiny_probe, ["sup_ce", "unsup_hh"], budgets,
                               tiny_test.images[:24], tiny_test.labels[:24],
                               ApgdConfig(n_iters=10, seed=0))


def test_eval_grid_shape_and_clean_row(small_report):
    assert len(small_report.rows) == 4
    row0 = small_report.row("sup_ce", 0.0)
    assert row0.robust_accuracy == row0.clean_accuracy


def test_robust_never_exceeds_clean(small_report):
    for r in small_report.rows:
        assert r.robust_accuracy <= r.clean_accuracy + 1e-12


def test_eval_deterministic(tiny_tok, tiny_probe, tiny_test):
    tok, _ = tiny_tok
    budgets = [Budget(epsilon=4 / 255)]
    kwargs = dict(objectives=["unsup_hh"], budgets=budgets,
                  images=tiny_test.images[:12], labels=tiny_test.labels[:12],
                  config=ApgdConfig(n_iters=8, seed=5))
    a = evaluate_robustness(tok, tiny_probe, **kwargs)
    b = evaluate_robustness(tok, tiny_probe, **kwargs)
    assert eval_report_csv(a) == eval_report_csv(b)


def test_objective_ablation_reports_all_variants(tiny_tok, tiny_probe, tiny_test):
    tok, _ = tiny_tok
    report, soft = objective_ablation(tok, tiny_probe, [Budget(epsilon=8 / 255)],
                                      tiny_test.images[:16], tiny_test.labels[:16],
                                      ApgdConfig(n_iters=10, seed=0))
    kinds = {r.objective for r in report.rows}
    assert kinds == {"unsup_hh", "unsup_hq", "unsup_qh", "unsup_qq"}
    assert set(soft) == {8 / 255}
    assert isinstance(soft[8 / 255], (bool, np.bool_))


def test_reconstruct_zero_eps_identical_and_grid(tmp_path, tiny_tok, tiny_test):
    tok, _ = tiny_tok
    x = tiny_test.images[:3]
    stats = reconstruct_adversarial(tok, x, [Budget(epsilon=0.0), Budget(epsilon=8 / 255)],
                                    iters=10, out_dir=str(tmp_path))
    assert stats[0].mean_abs_recon_shift == 0.0
    assert stats[1].mean_abs_recon_shift >= stats[0].mean_abs_recon_shift
    grid = read_ppm(stats[1].grid_path)
    side = tok.config.image_side
    assert grid.shape == (3 * side + 2 * 2, 4 * side + 3 * 2, 3)


def test_recon_shift_nondecreasing_in_eps(tiny_tok, tiny_test):
    tok, _ = tiny_tok
    x = tiny_test.images[:4]
    budgets = [Budget(epsilon=e) for e in (0.0, 4 / 255, 16 / 255)]
    stats = reconstruct_adversarial(tok, x, budgets, iters=15)
    shifts = [s.mean_abs_recon_shift for s in stats]
    assert shifts == sorted(shifts), shifts


def test_targeted_demo_runs_and_reports(tmp_path, tiny_tok, tiny_probe, tiny_test):
    tok, _ = tiny_tok
    src = tiny_test.images[:4]
    tgt = tiny_test.images[4:8]
    stats = targeted_demo(tok, tiny_probe, src, tgt, Budget(epsilon=8 / 255),
                          iters=15, out_dir=str(tmp_path))
    assert stats.n_pairs == 4
    for v in (stats.embed_adv_flipped, stats.embed_recon_flipped, stats.class_adv_flipped):
        assert 0.0 <= v <= 1.0
    assert stats.grid_path


def test_targeted_identical_pair_is_noop(tiny_tok, tiny_probe, tiny_test):
    from vqrobust.attack import AttackObjective, apgd

    tok, _ = tiny_tok
    x = tiny_test.images[:2]
    res = apgd(AttackObjective("targeted_embed", target_images=x),
               Budget(epsilon=8 / 255), ApgdConfig(n_iters=10, random_start=False, seed=0),
               x, tok)
    # loss starts at the global minimum (0): nothing can improve
    assert np.all(res.best_loss == 0.0)
    np.testing.assert_array_equal(res.x_adv, x)


# ---------------------------------------------------------------------------
# report emission


def test_attack_csv_columns(tiny_tok, tiny_test):
    from vqrobust.attack import AttackObjective, apgd

    tok, _ = tiny_tok
    res = apgd(AttackObjective("unsup_hh"), Budget(epsilon=4 / 255),
               ApgdConfig(n_iters=5, seed=0), tiny_test.images[:3], tok)
    text = attack_csv(res, 4 / 255, "unsup_hh")
    lines = text.strip().split("\n")
    assert lines[0] == "example_id,epsilon,objective_kind,clean_pred,adv_pred,success,changed_tokens,best_loss"
    assert len(lines) == 4


def test_eval_report_json_round_trip(tmp_path, small_report):
    p = tmp_path / "r.json"
    p.write_text(eval_report_json(small_report))
    back = load_eval_report(str(p))
    assert eval_report_csv(back) == eval_report_csv(small_report)


def test_emit_report_two_tokenizers_byte_identical(tmp_path, small_report):
    import dataclasses

    other = dataclasses.replace(small_report, tokenizer_hash="f" * 64)
    d1, d2 = tmp_path / "a", tmp_path / "b"
    out1 = emit_report([small_report, other], str(d1))
    out2 = emit_report([small_report, other], str(d2))
    assert open(out1["csv"], "rb").read() == open(out2["csv"], "rb").read()
    assert open(out1["txt"], "rb").read() == open(out2["txt"], "rb").read()
    text = open(out1["txt"]).read()
    assert small_report.tokenizer_hash[:12] in text and "f" * 12 in text
