"""Self-training loop orchestration on a tiny in-memory dataset."""

import numpy as np
import pytest

from kist.data import Dataset
from kist.fuzzy import load_builtin_rules
from kist.imagecore import GrayImage
from kist.model import ModelConfig, TrainConfig, init_params
from kist.pseudolabel import LabelingConfig
from kist.selftrain import KistConfig, kist, produce_labels
from kist.pseudolabel import residual_stats

TINY = ModelConfig(input_size=16, channels=(2, 4), seed=2)


def _tiny_dataset(seed=0, n_normal=6, n_anomalous=2):
    rng = np.random.default_rng(seed)

    def image(dark_patch):
        img = 0.5 + 0.05 * rng.standard_normal((16, 16))
        if dark_patch:
            top, left = rng.integers(2, 12, size=2)
            img[top:top + 2, left:left + 2] = 0.05
        return GrayImage(np.clip(img, 0.0, 1.0))

    normal = tuple(image(False) for _ in range(n_normal))
    anomalous = tuple(image(True) for _ in range(n_anomalous))
    return Dataset(normal, anomalous, ())


def _config(iterations, epochs=2):
    return KistConfig(
        iterations=iterations,
        labeling=LabelingConfig(s=0.5, alpha=0.8),
        pretrain=TrainConfig(epochs=epochs, batch_size=4, seed=1),
        train=TrainConfig(epochs=epochs, batch_size=4, lam=1.0, seed=2))


def test_zero_iterations_is_pretraining_only():
    ds = _tiny_dataset()
    kb = load_builtin_rules("kole_mvtec")
    params, trace, reports = kist(ds, kb, _config(0), init_params(TINY))
    assert reports == []
    assert len(trace) == 2
    assert params.step > 0


def test_evaluate_called_after_pretrain_and_each_iteration():
    ds = _tiny_dataset()
    kb = load_builtin_rules("kole_mvtec")
    calls = []

    def evaluate(p):
        calls.append(p.step)
        return {"auroc": 0.5}

    _params, _trace, reports = kist(ds, kb, _config(2), init_params(TINY),
                                    evaluate=evaluate)
    assert len(calls) == 3          # baseline plus two iterations
    assert calls == sorted(calls)   # training advances the step counter
    assert len(reports) == 2
    for i, rep in enumerate(reports, start=1):
        assert rep.iteration == i
        assert rep.metrics == {"auroc": 0.5}


def test_reports_carry_thresholds_and_label_counts():
    ds = _tiny_dataset()
    kb = load_builtin_rules("kole_mvtec")
    _params, _trace, reports = kist(ds, kb, _config(1), init_params(TINY))
    rep = reports[0]
    # s = 0.5 spans n = 2..6
    assert len(rep.thresholds) == 5
    assert list(rep.thresholds) == sorted(rep.thresholds)
    assert len(rep.label_pixel_counts) == len(ds.anomalous)
    assert rep.stats.sigma >= 0
    assert len(rep.loss_trace) == 2


def test_full_loop_is_deterministic():
    kb = load_builtin_rules("kole_mvtec")
    out = []
    for _ in range(2):
        ds = _tiny_dataset()
        params, trace, reports = kist(ds, kb, _config(2), init_params(TINY))
        out.append((params, trace, reports))
    (p1, t1, r1), (p2, t2, r2) = out
    assert t1 == t2
    for a, b in zip(p1.weights, p2.weights):
        np.testing.assert_array_equal(a, b)
    for ra, rb in zip(r1, r2):
        assert ra.thresholds == rb.thresholds
        assert ra.label_pixel_counts == rb.label_pixel_counts


def test_produce_labels_matches_dataset_order():
    ds = _tiny_dataset()
    kb = load_builtin_rules("kole_mvtec")
    params = init_params(TINY)
    stats = residual_stats(params, ds.normal)
    labels = produce_labels(params, ds, kb, stats,
                            LabelingConfig(s=0.5, alpha=0.8))
    assert len(labels) == len(ds.anomalous)
    for m, img in zip(labels, ds.anomalous):
        assert m.data.shape == img.data.shape


def test_config_validation_and_empty_normals():
    with pytest.raises(ValueError):
        KistConfig(iterations=-1)
    kb = load_builtin_rules("kole_mvtec")
    empty = Dataset((), (), ())
    with pytest.raises(ValueError):
        kist(empty, kb, _config(1), init_params(TINY))
