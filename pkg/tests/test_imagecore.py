"""Raster types, mask logic, and file round trips."""

import numpy as np
import pytest

from kist.imagecore import (GrayImage, Mask, RasterError, ResidualMap,
                            binarize, load_gray_png, load_mask_png,
                            load_residual, mask_count, mask_logic,
                            save_gray_png, save_mask_png, save_residual)


def test_gray_image_range_and_shape():
    img = GrayImage(np.full((4, 5), 0.5))
    assert img.height == 4 and img.width == 5
    assert img.data.dtype == np.float64
    with pytest.raises(RasterError):
        GrayImage(np.full((4, 4), 1.5))
    with pytest.raises(RasterError):
        GrayImage(np.full((4, 4), -0.1))
    with pytest.raises(RasterError):
        GrayImage(np.zeros((4, 4, 3)))


def test_rasters_are_readonly():
    img = GrayImage(np.zeros((3, 3)))
    m = Mask(np.zeros((3, 3), dtype=np.uint8))
    r = ResidualMap(np.zeros((3, 3)))
    for obj in (img, m, r):
        with pytest.raises(ValueError):
            obj.data[0, 0] = 1


def test_mask_values_strictly_binary():
    Mask(np.array([[0, 1], [1, 0]]))
    with pytest.raises(RasterError):
        Mask(np.array([[0, 2], [1, 0]]))


def test_residual_map_rejects_negative():
    ResidualMap(np.array([[0.0, 1.0]]))
    with pytest.raises(RasterError):
        ResidualMap(np.array([[-1e-9, 1.0]]))


def test_binarize_is_strictly_greater_than():
    r = ResidualMap(np.array([[0.1, 0.2, 0.3]]))
    m = binarize(r, 0.2)
    assert m.data.tolist() == [[0, 0, 1]]
    with pytest.raises(RasterError):
        binarize(r, float("nan"))


def test_mask_count_and_logic():
    a = Mask(np.array([[1, 1], [0, 0]]))
    b = Mask(np.array([[1, 0], [1, 0]]))
    assert mask_count(a) == 2
    assert mask_logic(a, b, "and").data.tolist() == [[1, 0], [0, 0]]
    assert mask_logic(a, b, "or").data.tolist() == [[1, 1], [1, 0]]
    with pytest.raises(RasterError):
        mask_logic(a, Mask(np.zeros((3, 3), dtype=np.uint8)), "and")
    with pytest.raises(RasterError):
        mask_logic(a, b, "xor")


def test_gray_png_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    # values on the 8-bit grid survive the round trip exactly
    quantized = np.round(rng.uniform(size=(16, 16)) * 255) / 255.0
    img = GrayImage(quantized)
    path = tmp_path / "img.png"
    save_gray_png(img, path)
    back = load_gray_png(path)
    np.testing.assert_array_equal(back.data, img.data)


def test_mask_png_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    m = Mask((rng.uniform(size=(16, 16)) > 0.5).astype(np.uint8))
    path = tmp_path / "mask.png"
    save_mask_png(m, path)
    back = load_mask_png(path)
    np.testing.assert_array_equal(back.data, m.data)


def test_residual_sidecar_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    data = rng.uniform(size=(12, 9)).astype(np.float32).astype(np.float64)
    r = ResidualMap(data)
    png = tmp_path / "res.png"
    save_residual(r, png)
    back = load_residual(tmp_path / "res.png.f32")
    # float32 payload; the source already sits on the float32 grid
    np.testing.assert_array_equal(back.data, data)
    assert png.exists()


def test_residual_sidecar_explicit_path_and_bad_magic(tmp_path):
    r = ResidualMap(np.ones((2, 2)))
    save_residual(r, tmp_path / "a.png", tmp_path / "a.raw")
    assert load_residual(tmp_path / "a.raw").data.shape == (2, 2)
    bad = tmp_path / "bad.raw"
    bad.write_bytes(b"NOTAMAP!" + b"\x00" * 24)
    with pytest.raises(RasterError):
        load_residual(bad)
