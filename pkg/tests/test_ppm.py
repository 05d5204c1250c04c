"""PPM P6 export: bit-exact round trip and grid assembly."""

import numpy as np
import pytest

from vqrobust.ppm import image_grid, read_ppm, to_uint8, write_ppm


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    rgb = rng.integers(0, 256, size=(13, 9, 3), dtype=np.uint8)
    p = str(tmp_path / "x.ppm")
    write_ppm(p, rgb)
    back = read_ppm(p)
    assert back.tobytes() == rgb.tobytes()


def test_header_layout(tmp_path):
    rgb = np.zeros((2, 3, 3), dtype=np.uint8)
    p = tmp_path / "h.ppm"
    write_ppm(str(p), rgb)
    assert p.read_bytes().startswith(b"P6\n3 2\n255\n")


def test_to_uint8_rounding_and_range():
    img = np.array([[[0.0, 1.0], [0.5, 2.0]]], dtype=np.float32)  # (1, 2, 2), clips 2.0
    out = to_uint8(img)
    assert out.shape == (2, 2, 3)
    assert out[0, 0, 0] == 0 and out[0, 1, 0] == 255
    assert out[1, 0, 0] == 128  # 0.5 * 255 = 127.5 rounds to even
    assert out[1, 1, 0] == 255


def test_to_uint8_rejects_bad_channels():
    with pytest.raises(ValueError, match="channels"):
        to_uint8(np.zeros((2, 4, 4)))


def test_grid_dimensions_and_separators():
    imgs = [np.zeros((3, 4, 4), dtype=np.float32) for _ in range(4)]
    grid = image_grid([[imgs[0], imgs[1]], [imgs[2], imgs[3]]], gap=2)
    assert grid.shape == (4 + 2 + 4, 4 + 2 + 4, 3)
    assert (grid[:, 4:6] == 255).all()  # vertical separator is white
    assert (grid[4:6, :] == 255).all()  # horizontal separator is white


def test_write_ppm_deterministic(tmp_path):
    img = np.linspace(0, 1, 3 * 5 * 5, dtype=np.float32).reshape(3, 5, 5)
    p1, p2 = str(tmp_path / "a.ppm"), str(tmp_path / "b.ppm")
    write_ppm(p1, to_uint8(img))
    write_ppm(p2, to_uint8(img))
    assert open(p1, "rb").read() == open(p2, "rb").read()
