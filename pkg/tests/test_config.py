"""Config parsing: fractions, round trips, defaults, errors."""

import pytest

from vqrobust.config import ConfigError, RunConfig, parse_config, parse_fraction


def test_fraction_and_decimal_agree_to_full_precision():
    assert parse_fraction("8/255") == parse_fraction("0.03137254901960784")
    assert parse_fraction("8/255") == 8.0 / 255.0


def test_fraction_errors():
    with pytest.raises(ConfigError):
        parse_fraction("8/0")
    with pytest.raises(ConfigError):
        parse_fraction("abc")


def test_empty_config_is_valid_defaults():
    cfg = parse_config("")
    assert cfg == RunConfig()
    assert cfg.get("apgd", "n_iters") == 100
    assert cfg.get("budget", "epsilon") == 8.0 / 255.0


def test_round_trip_identity():
    cfg = RunConfig()
    cfg.set("budget", "epsilon", "12/255")
    cfg.set("eval", "epsilons", "0,2/255,4/255")
    cfg.set("apgd", "random_start", "false")
    cfg.set("data", "source", "cifar10_binary")
    text = cfg.serialize()
    again = parse_config(text)
    assert again == cfg
    assert again.serialize() == text


def test_comments_and_blanks_ignored():
    cfg = parse_config("# a comment\n\nrun.seed = 7  # trailing\n")
    assert cfg.get("run", "seed") == 7


def test_unknown_key_rejected():
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config("run.bogus = 1")
    with pytest.raises(ConfigError, match="unknown config key"):
        parse_config("nosuch.seed = 1")


def test_malformed_line_rejected():
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("run.seed 3")
    with pytest.raises(ConfigError, match="section.key"):
        parse_config("run.seed.extra = 3")


def test_typed_values():
    cfg = parse_config(
        "apgd.random_start = false\n"
        "eval.objectives = sup_ce, unsup_qq\n"
        "eval.epsilons = 0, 8/255\n"
    )
    assert cfg.get("apgd", "random_start") is False
    assert cfg.get("eval", "objectives") == ["sup_ce", "unsup_qq"]
    assert cfg.get("eval", "epsilons") == [0.0, 8.0 / 255.0]
