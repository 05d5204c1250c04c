"""Line-oriented run configuration: `section.key = value` with `#` comments.

Every key has a default, so an empty file is a valid, fully reproducible
config. Epsilon-like fields accept both "k/255" notation and decimals; both
parse to the same float. Parse -> serialize -> parse is the identity."""

from __future__ import annotations

import copy

# (default, type); type is one of int, float, bool, str, "floatlist", "strlist".
# float fields accept "a/b" fractions.
SCHEMA: dict[str, dict[str, tuple]] = {
    "run": {
        "seed": (0, int),
        "out": ("out", str),
        "threads": (1, int),
    },
    "data": {
        "source": ("shapes_synthetic", str),
        "image_side": (32, int),
        "channels": (3, int),
        "classes": (4, int),
        "n_train": (512, int),
        "n_test": (512, int),
        "n_finetune": (2048, int),
        "cifar_dir": ("", str),
    },
    "tokenizer": {
        "patch_side": (8, int),
        "d": (16, int),
        "K": (64, int),
        "M": (1, int),
        "encoder_width": (64, int),
        "encoder_depth": (2, int),
        "seed": (-1, int),  # -1: use run.seed
    },
    "pretrain": {
        "epochs": (40, int),
        "lr": (5e-4, float),
        "beta_commit": (0.25, float),
        "batch_size": (32, int),
    },
    "probe": {
        "arch": ("linear", str),
        "epochs": (60, int),
        "lr": (1e-2, float),
        "batch_size": (64, int),
        "hidden": (64, int),
    },
    "apgd": {
        "n_iters": (100, int),
        "n_restarts": (1, int),
        "alpha": (0.75, float),
        "step_fraction": (1.0, float),
        "decay": (0.5, float),
        "rho": (0.75, float),
        "random_start": (True, bool),
        "early_stop": (False, bool),
    },
    "budget": {
        "norm": ("linf", str),
        "epsilon": (8.0 / 255.0, float),
    },
    "attack": {
        "objective": ("unsup_hh", str),
        "n_images": (64, int),
    },
    "finetune": {
        "radius": (8.0 / 255.0, float),
        "inner_steps": (10, int),
        "epochs": (1, int),
        "lr": (1e-3, float),
        "batch_size": (8, int),
        "warmup_frac": (0.05, float),
        "eval_slice": (128, int),
        "inner_random_start": (True, bool),
    },
    "eval": {
        "epsilons": ([0.0, 2.0 / 255.0, 4.0 / 255.0], "floatlist"),
        "objectives": (["sup_ce", "unsup_hh"], "strlist"),
        "iters": (100, int),
        "test_slice": (500, int),
    },
    "reconstruct": {
        "epsilons": ([4.0 / 255.0, 8.0 / 255.0], "floatlist"),
        "iters": (500, int),
        "n_images": (8, int),
    },
    "targeted": {
        "epsilon": (8.0 / 255.0, float),
        "iters": (100, int),
        "n_pairs": (50, int),
    },
    "bench": {
        "batches": (50, int),
        "warmup": (5, int),
        "batch_size": (8, int),
        "inner_steps": (10, int),
        "radius": (4.0 / 255.0, float),
    },
    "paths": {
        "tokenizer": ("", str),
        "probe": ("", str),
    },
    "report": {
        "inputs": ([], "strlist"),
    },
}


class ConfigError(ValueError):
    pass


def parse_fraction(text: str) -> float:
    """Parse "a/b" or a decimal literal to a float."""
    text = text.strip()
    if "/" in text:
        num, _, den = text.partition("/")
        try:
            return float(num) / float(den)
        except (ValueError, ZeroDivisionError) as err:
            raise ConfigError(f"bad fraction {text!r}: {err}") from None
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"bad float literal {text!r}") from None


def _parse_value(section: str, key: str, raw: str):
    try:
        _, typ = SCHEMA[section][key]
    except KeyError:
        raise ConfigError(f"unknown config key {section}.{key}") from None
    raw = raw.strip()
    if typ is int:
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{section}.{key}: bad int {raw!r}") from None
    if typ is float:
        return parse_fraction(raw)
    if typ is bool:
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ConfigError(f"{section}.{key}: bad bool {raw!r}")
    if typ == "floatlist":
        return [parse_fraction(v) for v in raw.split(",") if v.strip()] if raw else []
    if typ == "strlist":
        return [v.strip() for v in raw.split(",") if v.strip()] if raw else []
    return raw


class RunConfig:
    """Nested dict of sections with schema-typed values."""

    def __init__(self, values: dict | None = None):
        self.values = {s: {k: copy.deepcopy(d) for k, (d, _) in keys.items()}
                       for s, keys in SCHEMA.items()}
        for sect, keys in (values or {}).items():
            for k, v in keys.items():
                self.set(sect, k, v, raw=False)

    def get(self, section: str, key: str):
        try:
            return self.values[section][key]
        except KeyError:
            raise ConfigError(f"unknown config key {section}.{key}") from None

    def set(self, section: str, key: str, value, raw: bool = True) -> None:
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key {section}.{key}")
        self.values[section][key] = _parse_value(section, key, value) if raw else value

    def __eq__(self, other) -> bool:
        return isinstance(other, RunConfig) and self.values == other.values

    def serialize(self) -> str:
        lines = []
        for section in sorted(self.values):
            for key in sorted(self.values[section]):
                v = self.values[section][key]
                _, typ = SCHEMA[section][key]
                if typ == "floatlist":
                    text = ",".join(repr(float(x)) for x in v)
                elif typ == "strlist":
                    text = ",".join(v)
                elif typ is float:
                    text = repr(float(v))
                elif typ is bool:
                    text = "true" if v else "false"
                else:
                    text = str(v)
                lines.append(f"{section}.{key} = {text}")
        return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'section.key = value', got {line!r}")
        lhs, _, rhs = stripped.partition("=")
        dotted = lhs.strip()
        if dotted.count(".") != 1:
            raise ConfigError(f"line {lineno}: key must be 'section.key', got {dotted!r}")
        section, key = dotted.split(".")
        cfg.set(section.strip(), key.strip(), rhs)
    return cfg


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return RunConfig()
    with open(path) as f:
        return parse_config(f.read())
