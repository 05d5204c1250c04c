"""Shared tiny fixtures: a small shapes corpus and a pretrained tokenizer."""

import pytest

from vqrobust.datasets import gen_shapes
from vqrobust.tokenizer import TokenizerConfig, pretrain


@pytest.fixture(scope="session")
def tiny_cfg():
    return TokenizerConfig(image_side=16, channels=1, patch_side=4, d=8, K=16, M=1,
                           encoder_width=32, encoder_depth=1, seed=0)


@pytest.fixture(scope="session")
def tiny_train():
    return gen_shapes(seed=0, n=96, image_side=16, classes=2, channels=1, split="train")


@pytest.fixture(scope="session")
def tiny_test():
    return gen_shapes(seed=0, n=48, image_side=16, classes=2, channels=1, split="test")


@pytest.fixture(scope="session")
def tiny_pool():
    # unlabeled-style pool for adversarial fine-tuning
    return gen_shapes(seed=1, n=384, image_side=16, classes=2, channels=1, split="finetune")


@pytest.fixture(scope="session")
def tiny_tok(tiny_cfg, tiny_train):
    tok, log = pretrain(tiny_cfg, tiny_train, epochs=40, lr=2e-3, batch_size=16)
    return tok, log


@pytest.fixture(scope="session")
def tiny_probe(tiny_tok, tiny_train):
    from vqrobust.probe import train_probe

    tok, _ = tiny_tok
    probe, _ = train_probe(tok, tiny_train, arch="linear", epochs=60, lr=1e-2)
    return probe