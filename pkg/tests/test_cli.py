"""CLI plumbing: subcommands, overrides, exit codes, manifests, determinism."""

import json
import os

import pytest

from vqrobust.cli import main

TINY = """
run.seed = 3
data.image_side = 16
data.channels = 1
data.classes = 2
data.n_train = 64
data.n_test = 32
data.n_finetune = 64
tokenizer.patch_side = 4
tokenizer.d = 8
tokenizer.K = 16
tokenizer.encoder_width = 32
tokenizer.encoder_depth = 1
pretrain.epochs = 8
pretrain.batch_size = 16
probe.epochs = 10
eval.test_slice = 16
eval.iters = 5
eval.epsilons = 0, 4/255
finetune.epochs = 1
finetune.inner_steps = 3
finetune.eval_slice = 8
attack.n_images = 8
apgd.n_iters = 5
bench.batches = 3
bench.warmup = 1
targeted.n_pairs = 4
targeted.iters = 5
reconstruct.n_images = 2
reconstruct.iters = 5
"""


@pytest.fixture(scope="module")
def cfg_file(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "tiny.cfg"
    p.write_text(TINY)
    return str(p)


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def pretrained(cfg_file, tmp_path_factory, request):
    out = str(tmp_path_factory.mktemp("pretrain"))
    code = main(["pretrain", "--config", cfg_file, "--out", out])
    assert code == 0
    return os.path.join(out, "tokenizer.vqrb")


@pytest.fixture(scope="module")
def probed(cfg_file, pretrained, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("probe"))
    code = main(["train-probe", "--config", cfg_file, "--out", out,
                 "--set", f"paths.tokenizer={pretrained}"])
    assert code == 0
    return os.path.join(out, "probe.vqpr")


def test_pretrain_emits_checkpoint_and_summary(capsys, cfg_file, tmp_path):
    out = str(tmp_path / "o")
    code, stdout, _ = _run(capsys, "pretrain", "--config", cfg_file, "--out", out)
    assert code == 0
    summary = json.loads(stdout.strip().splitlines()[-1])
    assert summary["command"] == "pretrain"
    assert os.path.exists(summary["checkpoint"])
    assert os.path.exists(os.path.join(out, "manifest.json"))


def test_pretrain_byte_identical_reruns(cfg_file, tmp_path):
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    assert main(["pretrain", "--config", cfg_file, "--out", out1]) == 0
    assert main(["pretrain", "--config", cfg_file, "--out", out2]) == 0
    ck1 = open(os.path.join(out1, "tokenizer.vqrb"), "rb").read()
    ck2 = open(os.path.join(out2, "tokenizer.vqrb"), "rb").read()
    assert ck1 == ck2
    m1 = open(os.path.join(out1, "manifest.json"), "rb").read()
    m2 = open(os.path.join(out2, "manifest.json"), "rb").read()
    assert m1 == m2


def test_attack_with_override_writes_csv(capsys, cfg_file, pretrained, tmp_path):
    out = str(tmp_path / "atk")
    code, stdout, _ = _run(capsys, "attack", "--config", cfg_file, "--out", out,
                           "--set", f"paths.tokenizer={pretrained}",
                           "--set", "budget.epsilon=8/255")
    assert code == 0
    summary = json.loads(stdout.strip().splitlines()[-1])
    assert summary["epsilon"] == 8 / 255
    header = open(os.path.join(out, "attack.csv")).readline().strip()
    assert header == "example_id,epsilon,objective_kind,clean_pred,adv_pred,success,changed_tokens,best_loss"
    assert os.path.exists(os.path.join(out, "attack_summary.json"))


def test_attack_csv_deterministic(cfg_file, pretrained, tmp_path):
    outs = [str(tmp_path / n) for n in ("x", "y")]
    for out in outs:
        assert main(["attack", "--config", cfg_file, "--out", out,
                     "--set", f"paths.tokenizer={pretrained}"]) == 0
    a = open(os.path.join(outs[0], "attack.csv"), "rb").read()
    b = open(os.path.join(outs[1], "attack.csv"), "rb").read()
    assert a == b


def test_eval_grid_rows(capsys, cfg_file, pretrained, probed, tmp_path):
    out = str(tmp_path / "ev")
    code, stdout, _ = _run(capsys, "eval", "--config", cfg_file, "--out", out,
                           "--set", f"paths.tokenizer={pretrained}",
                           "--set", f"paths.probe={probed}")
    assert code == 0
    summary = json.loads(stdout.strip().splitlines()[-1])
    assert summary["rows"] == 4  # 2 objectives x 2 epsilons
    lines = open(os.path.join(out, "eval.csv")).read().strip().splitlines()
    assert len(lines) == 5


def test_advtrain_checkpoint_metadata(cfg_file, pretrained, tmp_path):
    from vqrobust.checkpoint import load_checkpoint

    out = str(tmp_path / "adv")
    assert main(["advtrain", "--config", cfg_file, "--out", out,
                 "--set", f"paths.tokenizer={pretrained}"]) == 0
    tok, meta = load_checkpoint(os.path.join(out, "tokenizer_robust.vqrb"))
    assert meta["inner_steps"] == 3
    assert meta["dataset"] == "shapes_synthetic"
    assert len(meta["parent"]) == 64


def test_reconstruct_writes_ppm_grids(cfg_file, pretrained, tmp_path):
    out = str(tmp_path / "rec")
    assert main(["reconstruct", "--config", cfg_file, "--out", out,
                 "--set", f"paths.tokenizer={pretrained}"]) == 0
    ppms = [f for f in os.listdir(out) if f.endswith(".ppm")]
    assert sorted(ppms) == ["recon_eps_4_255.ppm", "recon_eps_8_255.ppm"]


def test_targeted_demo_summary(capsys, cfg_file, pretrained, probed, tmp_path):
    out = str(tmp_path / "tg")
    code, stdout, _ = _run(capsys, "targeted-demo", "--config", cfg_file, "--out", out,
                           "--set", f"paths.tokenizer={pretrained}",
                           "--set", f"paths.probe={probed}")
    assert code == 0
    summary = json.loads(stdout.strip().splitlines()[-1])
    assert summary["n_pairs"] == 4
    assert os.path.exists(summary["grid"])


def test_bench_cost_ratio(capsys, cfg_file, pretrained, probed, tmp_path):
    out = str(tmp_path / "bc")
    code, stdout, _ = _run(capsys, "bench-cost", "--config", cfg_file, "--out", out,
                           "--set", f"paths.tokenizer={pretrained}",
                           "--set", f"paths.probe={probed}")
    assert code == 0
    summary = json.loads(stdout.strip().splitlines()[-1])
    assert summary["ratio"] > 0
    assert os.path.exists(os.path.join(out, "bench_cost.json"))


def test_report_merges_eval_jsons(capsys, cfg_file, pretrained, probed, tmp_path):
    ev = str(tmp_path / "ev")
    assert main(["eval", "--config", cfg_file, "--out", ev,
                 "--set", f"paths.tokenizer={pretrained}",
                 "--set", f"paths.probe={probed}"]) == 0
    out = str(tmp_path / "rep")
    code, stdout, _ = _run(capsys, "report", "--config", cfg_file, "--out", out,
                           "--set", f"report.inputs={ev}/eval.json")
    assert code == 0
    assert os.path.exists(os.path.join(out, "report.csv"))
    assert os.path.exists(os.path.join(out, "report.txt"))


def test_unknown_subcommand_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["pretrain", "--bogus"])
    assert exc.value.code == 2


def test_validation_failure_exits_1(capsys, cfg_file, tmp_path):
    code, _, err = _run(capsys, "eval", "--config", cfg_file, "--out", str(tmp_path / "v"))
    assert code == 1
    parsed = json.loads(err.strip().splitlines()[-1])
    assert "paths.tokenizer" in parsed["error"]


def test_bad_set_value_exits_1(capsys, cfg_file, tmp_path):
    code, _, err = _run(capsys, "pretrain", "--config", cfg_file,
                        "--out", str(tmp_path / "w"), "--set", "run.seed=abc")
    assert code == 1
    assert "error" in json.loads(err.strip().splitlines()[-1])
