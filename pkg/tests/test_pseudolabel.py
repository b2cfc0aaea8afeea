"""Residual statistics, threshold enumeration, and pseudo-label production."""

import numpy as np
import pytest

from kist.fuzzy import load_builtin_rules
from kist.imagecore import GrayImage, RasterError, ResidualMap
from kist.model import ModelConfig, init_params
from kist.model import residual as model_residual
from kist.pseudolabel import (LabelingConfig, ResidualStats, grade_regions,
                              produce_pseudo_label, residual_stats,
                              threshold_set)

TINY = ModelConfig(input_size=8, channels=(2, 4), seed=4)


def test_residual_stats_match_direct_computation():
    rng = np.random.default_rng(41)
    params = init_params(TINY)
    normals = [GrayImage(rng.uniform(size=(8, 8))) for _ in range(3)]
    stats = residual_stats(params, normals)
    flat = np.concatenate([model_residual(params, im).data.ravel()
                           for im in normals])
    assert stats.mu == pytest.approx(float(flat.mean()), rel=1e-12)
    assert stats.sigma == pytest.approx(float(flat.std()), rel=1e-12)
    with pytest.raises(RasterError):
        residual_stats(params, [])


def test_threshold_set_enumeration_is_exact():
    stats = ResidualStats(mu=0.4, sigma=0.05)
    expected = {
        1.0: range(1, 4),
        0.5: range(2, 7),
        0.3: range(4, 11),
        0.25: range(4, 13),
    }
    for s, ns in expected.items():
        got = threshold_set(stats, s)
        want = [stats.mu + n * s * stats.sigma for n in ns]
        assert got == want
    assert len(threshold_set(stats, 0.3)) == 7


def test_threshold_set_edge_cases():
    stats = ResidualStats(mu=1.0, sigma=0.0)
    assert threshold_set(stats, 1.0) == [1.0, 1.0, 1.0]
    with pytest.raises(RasterError):
        threshold_set(stats, 0.0)
    with pytest.raises(RasterError):
        threshold_set(stats, 4.0)  # ceil(1/4) > floor(3/4)


def test_labeling_config_validation():
    LabelingConfig(s=1.0, alpha=0.0)
    with pytest.raises(RasterError):
        LabelingConfig(s=0.0)
    with pytest.raises(RasterError):
        LabelingConfig(s=1.5)
    with pytest.raises(RasterError):
        LabelingConfig(alpha=1.1)


def test_residual_stats_reject_negative_sigma():
    with pytest.raises(RasterError):
        ResidualStats(mu=0.0, sigma=-1.0)


def _dark_square_case():
    """Image with one dark compact patch; residual high exactly there."""
    img = np.full((16, 16), 0.6)
    img[4:6, 4:6] = 0.1
    e = np.zeros((16, 16))
    e[4:6, 4:6] = 1.0
    return GrayImage(img), ResidualMap(e)


def test_grade_regions_and_union_label():
    kb = load_builtin_rules("kole_mvtec")
    img, e = _dark_square_case()
    graded = grade_regions(e, img, 0.5, kb)
    assert len(graded) == 1
    reg, g = graded[0]
    assert reg.size == 4
    # dark patch in the "high" area band: the first rule fires fully
    assert g >= 0.8
    label = produce_pseudo_label(img, e, kb, [0.5], alpha=0.8)
    want = np.zeros((16, 16), dtype=np.uint8)
    want[4:6, 4:6] = 1
    np.testing.assert_array_equal(label.data, want)


def test_produce_pseudo_label_unions_across_thresholds():
    kb = load_builtin_rules("kole_mvtec")
    img = np.full((16, 16), 0.6)
    img[2:4, 2:4] = 0.1
    img[10:12, 10:12] = 0.1
    e = np.zeros((16, 16))
    e[2:4, 2:4] = 0.4    # only above the lower threshold
    e[10:12, 10:12] = 0.9
    gi = GrayImage(img)
    low = produce_pseudo_label(gi, ResidualMap(e), kb, [0.3], 0.8)
    high = produce_pseudo_label(gi, ResidualMap(e), kb, [0.6], 0.8)
    both = produce_pseudo_label(gi, ResidualMap(e), kb, [0.3, 0.6], 0.8)
    np.testing.assert_array_equal(
        both.data, np.maximum(low.data, high.data))
    assert low.data.sum() == 8 and high.data.sum() == 4


def test_produce_pseudo_label_requires_thresholds():
    kb = load_builtin_rules("kole_mvtec")
    img, e = _dark_square_case()
    with pytest.raises(RasterError):
        produce_pseudo_label(img, e, kb, [], 0.8)


def test_grade_regions_shape_mismatch():
    kb = load_builtin_rules("kole_mvtec")
    with pytest.raises(RasterError):
        grade_regions(ResidualMap(np.zeros((4, 4))),
                      GrayImage(np.zeros((5, 5))), 0.5, kb)


def test_raising_alpha_shrinks_labels():
    kb = load_builtin_rules("kole_mvtec")
    rng = np.random.default_rng(42)
    for _ in range(25):
        img = GrayImage(rng.uniform(size=(12, 12)))
        e = ResidualMap(rng.uniform(size=(12, 12)))
        ts = [0.4, 0.6, 0.8]
        lo = produce_pseudo_label(img, e, kb, ts, alpha=0.4)
        hi = produce_pseudo_label(img, e, kb, ts, alpha=0.8)
        assert np.all(hi.data <= lo.data)
