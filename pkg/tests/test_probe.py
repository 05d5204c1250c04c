"""Probe classifiers on frozen quantized features."""

import numpy as np
import pytest

from vqrobust.checkpoint import hash_params
from vqrobust.probe import ProbeClassifier, accuracy, fit_probe, train_probe


def test_separable_features_reach_full_train_accuracy():
    rng = np.random.default_rng(0)
    n = 60
    labels = np.arange(n, dtype=np.int64) % 2
    feats = rng.normal(size=(n, 4, 3)).astype(np.float32) * 0.1
    feats[labels == 0, 0, 0] -= 2.0
    feats[labels == 1, 0, 0] += 2.0
    probe, losses = fit_probe(feats, labels, n_classes=2, arch="linear",
                              epochs=100, batch_size=16)
    assert (probe.predict_features(feats) == labels).mean() == 1.0
    assert losses[-1] < losses[0]


def test_mlp_probe_trains():
    rng = np.random.default_rng(1)
    labels = np.arange(40, dtype=np.int64) % 2
    feats = rng.normal(size=(40, 2, 2)).astype(np.float32)
    feats[labels == 1] += 1.5
    probe, _ = fit_probe(feats, labels, n_classes=2, arch="mlp", hidden=8, epochs=30)
    assert (probe.predict_features(feats) == labels).mean() >= 0.9


def test_unknown_arch_rejected():
    with pytest.raises(ValueError, match="arch"):
        ProbeClassifier.init("conv", 16, 2)


def test_tokenizer_untouched_by_probe_training(tiny_tok, tiny_train):
    tok, _ = tiny_tok
    before = hash_params(tok.params)
    train_probe(tok, tiny_train, epochs=3)
    assert hash_params(tok.params) == before


def test_probe_accuracy_on_tiny_shapes(tiny_tok, tiny_probe, tiny_test):
    tok, _ = tiny_tok
    acc = accuracy(tiny_probe, tok, tiny_test.images, tiny_test.labels)
    assert acc >= 0.8, f"tiny probe accuracy {acc}"


def test_probe_deterministic(tiny_tok, tiny_train):
    tok, _ = tiny_tok
    a, _ = train_probe(tok, tiny_train, epochs=3)
    b, _ = train_probe(tok, tiny_train, epochs=3)
    for n in a.params:
        assert a.params[n].data.tobytes() == b.params[n].data.tobytes()
