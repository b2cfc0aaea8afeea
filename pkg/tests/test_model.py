"""Encoder-decoder forward pass, losses, analytic gradients, training
determinism, and checkpoint serialization."""

import numpy as np
import pytest

from kist.imagecore import GrayImage, Mask
from kist.model import (LossSpec, ModelConfig, ModelError, ModelParams,
                        TrainConfig, contrastive_loss, forward, forward_batch,
                        gradients, init_loss, init_params, load_checkpoint,
                        residual, save_checkpoint, train)

TINY = ModelConfig(input_size=8, channels=(2, 4), seed=3)


def _rand_images(rng, n, size):
    return [GrayImage(rng.uniform(size=(size, size))) for _ in range(n)]


def _rand_pairs(rng, n, size):
    out = []
    for _ in range(n):
        img = GrayImage(rng.uniform(size=(size, size)))
        m = (rng.uniform(size=(size, size)) < 0.3).astype(np.uint8)
        out.append((img, Mask(m)))
    return out


# ---------------------------------------------------------------------------
# Naive forward oracle

def _conv_naive(x, w, bias, stride):
    c_in, h, width = x.shape
    c_out = w.shape[0]
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    oh, ow = h // stride if stride == 2 else h, width // stride if stride == 2 else width
    out = np.zeros((c_out, oh, ow))
    for o in range(c_out):
        for i in range(oh):
            for j in range(ow):
                patch = xp[:, i * stride:i * stride + 3,
                           j * stride:j * stride + 3]
                out[o, i, j] = (patch * w[o]).sum() + bias[o]
    return out


def _forward_naive(params, img):
    cfg = params.config
    n_enc = len(cfg.channels)
    a = img[None, :, :]
    for i in range(n_enc):
        y = _conv_naive(a, params.weights[i], params.biases[i], 2)
        a = np.where(y > 0, y, cfg.leak * y)
    for j in range(n_enc):
        i = n_enc + j
        up = a.repeat(2, axis=1).repeat(2, axis=2)
        y = _conv_naive(up, params.weights[i], params.biases[i], 1)
        if j < n_enc - 1:
            a = np.where(y > 0, y, cfg.leak * y)
        else:
            a = 1.0 / (1.0 + np.exp(-y))
    return a[0]


def test_init_params_shapes_and_determinism():
    p = init_params(TINY)
    assert p.layer_shapes() == [(2, 1, 3, 3), (4, 2, 3, 3),
                                (2, 4, 3, 3), (1, 2, 3, 3)]
    q = init_params(TINY)
    for a, b in zip(p.weights, q.weights):
        np.testing.assert_array_equal(a, b)
    with pytest.raises(ModelError):
        ModelConfig(input_size=10, channels=(2, 4))
    with pytest.raises(ModelError):
        ModelConfig(input_size=8, channels=())


def test_forward_matches_naive_convolution_oracle():
    rng = np.random.default_rng(31)
    params = init_params(TINY)
    for _ in range(3):
        img = rng.uniform(size=(8, 8))
        got = forward(params, GrayImage(img)).data
        want = _forward_naive(params, img)
        np.testing.assert_allclose(got, want, atol=1e-12)
    assert got.min() >= 0.0 and got.max() <= 1.0


def test_forward_rejects_wrong_size():
    params = init_params(TINY)
    with pytest.raises(ModelError):
        forward(params, GrayImage(np.zeros((4, 4))))


def test_residual_is_squared_error():
    rng = np.random.default_rng(32)
    params = init_params(TINY)
    img = GrayImage(rng.uniform(size=(8, 8)))
    e = residual(params, img)
    xhat = forward(params, img)
    np.testing.assert_allclose(e.data, (xhat.data - img.data) ** 2,
                               atol=1e-15)


def test_init_loss_matches_loop_oracle():
    rng = np.random.default_rng(33)
    params = init_params(TINY)
    normals = _rand_images(rng, 4, 8)
    want = np.mean([np.sum((forward(params, im).data - im.data) ** 2)
                    for im in normals])
    assert init_loss(params, normals) == pytest.approx(want, rel=1e-12)
    with pytest.raises(ModelError):
        init_loss(params, [])


def test_contrastive_loss_matches_loop_oracle():
    rng = np.random.default_rng(34)
    params = init_params(TINY)
    normals = _rand_images(rng, 3, 8)
    pairs = _rand_pairs(rng, 2, 8)
    lam = 2.5
    n = 8 * 8
    normal_term = np.mean(
        [np.sum((forward(params, im).data - im.data) ** 2) / n
         for im in normals])
    num = 0.0
    count = 0
    for im, pl in pairs:
        diff2 = (forward(params, im).data - im.data) ** 2
        num += float((pl.data * diff2).sum())
        count += int(pl.data.sum())
    want = normal_term - lam * num / count
    got = contrastive_loss(params, normals, pairs, lam)
    assert got == pytest.approx(want, rel=1e-12)


def test_contrastive_loss_empty_labels_drop_suppression_term():
    rng = np.random.default_rng(35)
    params = init_params(TINY)
    normals = _rand_images(rng, 2, 8)
    pairs = [(normals[0], Mask(np.zeros((8, 8), dtype=np.uint8)))]
    with_term = contrastive_loss(params, normals, pairs, 5.0)
    without = contrastive_loss(params, normals, [], 5.0)
    assert with_term == pytest.approx(without, rel=1e-12)


def test_gradients_match_finite_differences_smoke():
    rng = np.random.default_rng(36)
    params = init_params(TINY)
    normals = _rand_images(rng, 2, 8)
    pairs = _rand_pairs(rng, 1, 8)
    spec = LossSpec("contrastive", lam=1.5)
    _, gw, _gb = gradients(params, spec, normals, pairs)
    h = 1e-5
    for _ in range(5):
        li = int(rng.integers(len(params.weights)))
        flat = int(rng.integers(params.weights[li].size))
        idx = np.unravel_index(flat, params.weights[li].shape)

        def loss_at(delta):
            ws = [w.copy() for w in params.weights]
            ws[li][idx] += delta
            p = ModelParams(params.config, tuple(ws), params.biases)
            return contrastive_loss(p, normals, pairs, spec.lam)

        numeric = (loss_at(h) - loss_at(-h)) / (2 * h)
        analytic = gw[li][idx]
        denom = max(abs(numeric), abs(analytic), 1e-8)
        assert abs(numeric - analytic) / denom < 1e-3


def test_train_is_deterministic_and_advances_step():
    rng = np.random.default_rng(37)
    params = init_params(TINY)
    normals = _rand_images(rng, 4, 8)
    cfg = TrainConfig(epochs=2, batch_size=2, learning_rate=1e-2, seed=5)
    out1, trace1 = train(params, cfg, LossSpec("init"), normals)
    out2, trace2 = train(params, cfg, LossSpec("init"), normals)
    assert trace1 == trace2
    for a, b in zip(out1.weights, out2.weights):
        np.testing.assert_array_equal(a, b)
    assert out1.step == params.step + 2 * 2  # 2 epochs x 2 batches
    assert len(trace1) == 2


def test_train_reduces_reconstruction_loss():
    rng = np.random.default_rng(38)
    params = init_params(TINY)
    normals = _rand_images(rng, 6, 8)
    cfg = TrainConfig(epochs=10, batch_size=6, learning_rate=1e-2, seed=5)
    before = init_loss(params, normals)
    after_params, _ = train(params, cfg, LossSpec("init"), normals)
    assert init_loss(after_params, normals) < before


def test_train_validation_errors():
    params = init_params(TINY)
    with pytest.raises(ModelError):
        train(params, TrainConfig(epochs=1), LossSpec("init"), [])
    with pytest.raises(ModelError):
        TrainConfig(epochs=-1)
    with pytest.raises(ModelError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ModelError):
        LossSpec("other")


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    params = init_params(ModelConfig(input_size=8, channels=(2, 4), seed=9))
    p1 = tmp_path / "a.ckpt"
    p2 = tmp_path / "b.ckpt"
    save_checkpoint(params, p1)
    loaded = load_checkpoint(p1)
    save_checkpoint(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert loaded.config == params.config
    for a, b in zip(loaded.weights, params.weights):
        np.testing.assert_array_equal(a, b.astype("<f4").astype(np.float64))


def test_checkpoint_rejects_foreign_file(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"GARBAGE!" + b"\x00" * 32)
    with pytest.raises(ModelError):
        load_checkpoint(bad)


def test_batch_forward_consistency():
    rng = np.random.default_rng(39)
    params = init_params(TINY)
    imgs = _rand_images(rng, 3, 8)
    batch = np.stack([im.data for im in imgs])[:, None]
    out = forward_batch(params, batch)
    for i, im in enumerate(imgs):
        np.testing.assert_allclose(out[i, 0], forward(params, im).data,
                                   atol=1e-12)
