"""Shapes corpus determinism/learnability and CIFAR-10 binary reader."""

import numpy as np
import pytest

from vqrobust.datasets import DatasetHandle, gen_shapes, load_cifar10


def test_shapes_deterministic_byte_stream():
    a = gen_shapes(seed=42, n=100, image_side=16, classes=4)
    b = gen_shapes(seed=42, n=100, image_side=16, classes=4)
    assert a.images.tobytes() == b.images.tobytes()
    np.testing.assert_array_equal(a.labels, b.labels)


def test_shapes_seed_changes_images():
    a = gen_shapes(seed=1, n=10, image_side=16, classes=2)
    b = gen_shapes(seed=2, n=10, image_side=16, classes=2)
    assert a.images.tobytes() != b.images.tobytes()


def test_shapes_class_balance_within_one():
    ds = gen_shapes(seed=0, n=103, image_side=16, classes=4)
    counts = np.bincount(ds.labels, minlength=4)
    assert counts.max() - counts.min() <= 1


def test_shapes_pixel_range_and_geometry():
    ds = gen_shapes(seed=0, n=8, image_side=32, classes=8)
    assert ds.images.shape == (8, 3, 32, 32)
    assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0
    assert ds.images.dtype == np.float32


def test_shapes_linear_probe_on_raw_pixels():
    # learnability gate: 2-class corpus is nearly linearly separable from pixels
    train = gen_shapes(seed=0, n=1600, image_side=32, classes=2, split="train")
    test = gen_shapes(seed=0, n=200, image_side=32, classes=2, split="test")

    def flat(ds):
        return ds.images.reshape(len(ds), -1).astype(np.float64)

    x, y = flat(train), train.labels
    # ridge-regularized least squares onto +-1 targets, solved in the dual
    t = 2.0 * y - 1.0
    xm = np.concatenate([x, np.ones((len(x), 1))], axis=1)
    alpha = np.linalg.solve(xm @ xm.T + 1e-3 * np.eye(len(xm)), t)
    xt = np.concatenate([flat(test), np.ones((len(test), 1))], axis=1)
    pred = (xt @ (xm.T @ alpha) > 0).astype(np.int64)
    acc = (pred == test.labels).mean()
    assert acc >= 0.95, f"raw-pixel linear probe accuracy {acc:.3f}"


def test_batches_fixed_order():
    ds = gen_shapes(seed=3, n=10, image_side=8, classes=2)
    got = np.concatenate([b[0] for b in ds.batches(3)])
    np.testing.assert_array_equal(got, ds.images)


# ---------------------------------------------------------------------------
# CIFAR-10 binary reader (synthetic files)


def _write_cifar(path, n, first_label=7):
    rng = np.random.default_rng(0)
    rec = np.zeros((n, 3073), dtype=np.uint8)
    rec[:, 0] = rng.integers(0, 10, size=n, dtype=np.uint8)
    rec[0, 0] = first_label
    rec[0, 1] = 255
    path.write_bytes(rec.tobytes())
    return rec


def test_cifar_record_count_and_first_label(tmp_path):
    f = tmp_path / "test_batch.bin"
    _write_cifar(f, 10000)
    ds = load_cifar10(str(tmp_path), "test")
    assert len(ds) == 10000
    assert ds.labels[0] == 7
    # pixel byte 255 decodes to exactly 1.0
    assert ds.images[0, 0, 0, 0] == 1.0


def test_cifar_truncated_file_rejected(tmp_path):
    f = tmp_path / "test_batch.bin"
    f.write_bytes(b"\x00" * 5000)
    with pytest.raises(ValueError, match="truncated"):
        load_cifar10(str(tmp_path), "test")


def test_cifar_bad_label_rejected_with_offset(tmp_path):
    f = tmp_path / "solo.bin"
    rec = _write_cifar(f, 3)
    rec[1, 0] = 12
    f.write_bytes(rec.tobytes())
    with pytest.raises(ValueError, match="offset 3073"):
        load_cifar10(str(f), "test")


def test_cifar_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_cifar10(str(tmp_path), "train")
