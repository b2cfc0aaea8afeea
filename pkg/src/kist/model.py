"""Reconstruction model: a small convolutional encoder-decoder with manual
forward/backward passes, the two training losses, and plain mini-batch
gradient descent.

The encoder is a stack of stride-2 3x3 convolutions with leaky-rectifier
activations; the decoder mirrors it with nearest-neighbor x2 upsampling
followed by 3x3 convolutions, ending in a 1-channel sigmoid layer. Parameters
are held in float64; losses and gradients are accumulated in float64.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .imagecore import GrayImage, Mask, RasterError, ResidualMap


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    """input_size must be divisible by 2**len(channels); the last channel
    width is the latent width at the bottleneck."""

    input_size: int = 64
    channels: tuple[int, ...] = (16, 32, 64)
    leak: float = 0.2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if not self.channels:
            raise ModelError("need at least one encoder stage")
        if self.input_size % (2 ** len(self.channels)) != 0:
            raise ModelError(
                f"input_size {self.input_size} not divisible by "
                f"2^{len(self.channels)}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 1e-3
    lam: float = 1.0
    augment: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ModelError("invalid training configuration")
        if self.lam < 0:
            raise ModelError("contrastive weight must be >= 0")


@dataclass(frozen=True)
class ModelParams:
    """Per-layer kernels/biases plus the optimizer step counter.

    ``weights[i]`` has shape (out_ch, in_ch, 3, 3); ``biases[i]`` (out_ch,).
    Layers 0..n-1 are the encoder stages, layers n..2n-1 the decoder.
    """

    config: ModelConfig
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    step: int = 0

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(self.weights))
        object.__setattr__(self, "biases", tuple(self.biases))
        for w, b in zip(self.weights, self.biases):
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise ModelError("non-finite parameter values")

    def layer_shapes(self):
        return [w.shape for w in self.weights]


def _layer_channel_plan(cfg: ModelConfig):
    """(in_ch, out_ch) per conv layer: encoder stages then mirrored decoder."""
    enc_in = (1,) + cfg.channels[:-1]
    plan = list(zip(enc_in, cfg.channels))
    dec = list(cfg.channels[::-1])
    dec_out = dec[1:] + [1]
    plan += list(zip(dec, dec_out))
    return plan


def init_params(cfg: ModelConfig) -> ModelParams:
    """Seeded uniform fan-in initialization; biases start at zero."""
    rng = np.random.default_rng(cfg.seed)
    weights, biases = [], []
    for in_ch, out_ch in _layer_channel_plan(cfg):
        bound = 1.0 / np.sqrt(in_ch * 9)
        weights.append(rng.uniform(-bound, bound, size=(out_ch, in_ch, 3, 3)))
        biases.append(np.zeros(out_ch))
    return ModelParams(cfg, tuple(weights), tuple(biases))


# ---------------------------------------------------------------------------
# Layer primitives (batch layout: (B, C, H, W), float64)

def _im2col(x: np.ndarray, stride: int) -> np.ndarray:
    """3x3 patches with padding 1 -> (B, oh*ow, C*9)."""
    b, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    win = sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b, oh * ow, c * 9)
    return np.ascontiguousarray(cols), (oh, ow)


def _conv_forward(x, w, bias, stride):
    b = x.shape[0]
    out_ch = w.shape[0]
    cols, (oh, ow) = _im2col(x, stride)
    wmat = w.reshape(out_ch, -1)
    y = cols @ wmat.T + bias
    y = y.transpose(0, 2, 1).reshape(b, out_ch, oh, ow)
    return y, cols


def _conv_backward(dy, x_shape, cols, w, stride):
    b, c, h, w_in = x_shape
    out_ch = w.shape[0]
    oh, ow = dy.shape[2], dy.shape[3]
    dy_mat = dy.reshape(b, out_ch, oh * ow).transpose(0, 2, 1)
    wmat = w.reshape(out_ch, -1)

    dw = np.einsum("bpo,bpk->ok", dy_mat, cols).reshape(w.shape)
    db = dy_mat.sum(axis=(0, 1))

    dcols = dy_mat @ wmat  # (B, P, C*9)
    dcols = dcols.reshape(b, oh, ow, c, 3, 3)
    dxp = np.zeros((b, c, h + 2, w_in + 2))
    for ki in range(3):
        for kj in range(3):
            dxp[:, :, ki:ki + stride * oh:stride,
                kj:kj + stride * ow:stride] += \
                dcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
    return dxp[:, :, 1:-1, 1:-1], dw, db


def _upsample2(x):
    return x.repeat(2, axis=2).repeat(2, axis=3)


def _upsample2_backward(dy):
    b, c, h, w = dy.shape
    return dy.reshape(b, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def _check_finite(a, layer_name):
    if not np.isfinite(a).all():
        raise ModelError(f"non-finite values after layer {layer_name}")


def forward_batch(params: ModelParams, x: np.ndarray, want_cache=False):
    """Reconstruct a batch (B, 1, H, W) -> (B, 1, H, W) in [0, 1]."""
    cfg = params.config
    n_enc = len(cfg.channels)
    cache = []
    a = np.asarray(x, dtype=np.float64)
    for i in range(n_enc):
        y, cols = _conv_forward(a, params.weights[i], params.biases[i], 2)
        _check_finite(y, f"enc{i}")
        act = np.where(y > 0, y, cfg.leak * y)
        cache.append(("enc", a.shape, cols, y))
        a = act
    for j in range(n_enc):
        i = n_enc + j
        up = _upsample2(a)
        y, cols = _conv_forward(up, params.weights[i], params.biases[i], 1)
        _check_finite(y, f"dec{j}")
        if j < n_enc - 1:
            act = np.where(y > 0, y, cfg.leak * y)
        else:
            # numerically stable sigmoid
            act = np.where(y >= 0, 1.0 / (1.0 + np.exp(-np.abs(y))),
                           np.exp(-np.abs(y)) / (1.0 + np.exp(-np.abs(y))))
        cache.append(("dec", up.shape, cols, y, act))
        a = act
    return (a, cache) if want_cache else a


def backward_batch(params: ModelParams, cache, d_out: np.ndarray):
    """Backpropagate d(loss)/d(reconstruction) through the cached forward
    pass; returns per-layer (dW, db) gradients in layer order."""
    cfg = params.config
    n_enc = len(cfg.channels)
    grads_w = [None] * len(params.weights)
    grads_b = [None] * len(params.biases)
    da = d_out
    for j in reversed(range(n_enc)):
        i = n_enc + j
        _, up_shape, cols, y, act = cache[i]
        if j < n_enc - 1:
            dy = da * np.where(y > 0, 1.0, cfg.leak)
        else:
            dy = da * act * (1.0 - act)
        dup, dw, db = _conv_backward(dy, up_shape, cols, params.weights[i], 1)
        grads_w[i], grads_b[i] = dw, db
        da = _upsample2_backward(dup)
    for i in reversed(range(n_enc)):
        _, x_shape, cols, y = cache[i]
        dy = da * np.where(y > 0, 1.0, cfg.leak)
        da, dw, db = _conv_backward(dy, x_shape, cols, params.weights[i], 2)
        grads_w[i], grads_b[i] = dw, db
    return grads_w, grads_b


# ---------------------------------------------------------------------------
# Public single-image operations

def _to_batch(imgs):
    return np.stack([im.data for im in imgs])[:, None, :, :]


def _check_dims(params: ModelParams, img: GrayImage):
    n = params.config.input_size
    if img.data.shape != (n, n):
        raise ModelError(
            f"image shape {img.data.shape} does not match model input "
            f"size {n}x{n}")


def forward(params: ModelParams, x: GrayImage) -> GrayImage:
    """Reconstruction of a single image."""
    _check_dims(params, x)
    out = forward_batch(params, _to_batch([x]))
    return GrayImage(out[0, 0])


def residual(params: ModelParams, x: GrayImage) -> ResidualMap:
    """Per-pixel squared reconstruction error."""
    xhat = forward(params, x)
    return ResidualMap((xhat.data - x.data) ** 2)


# ---------------------------------------------------------------------------
# Losses

@dataclass(frozen=True)
class LossSpec:
    kind: str  # "init" or "contrastive"
    lam: float = 1.0

    def __post_init__(self):
        if self.kind not in ("init", "contrastive"):
            raise ModelError(f"unknown loss kind {self.kind!r}")


def init_loss(params: ModelParams, normals) -> float:
    """Mean over images of the summed squared residual."""
    normals = list(normals)
    if not normals:
        raise ModelError("empty normal batch")
    for im in normals:
        _check_dims(params, im)
    x = _to_batch(normals)
    xhat = forward_batch(params, x)
    return float(np.sum((xhat - x) ** 2) / len(normals))


def init_loss_per_pixel(params: ModelParams, normals) -> float:
    """Per-pixel-normalized variant of the initial loss, for logging."""
    normals = list(normals)
    n = params.config.input_size
    return init_loss(params, normals) / (n * n)


def contrastive_loss(params: ModelParams, normals, anomalous, lam: float) -> float:
    """Contrastive-reconstruction loss.

    ``anomalous`` is a list of (GrayImage, Mask pseudo-label) pairs. The
    first term is the per-pixel mean squared residual over the normal batch;
    the second subtracts lam times the mean squared residual over all
    pseudo-labeled pixels (zero when no pixel is labeled).
    """
    normals = list(normals)
    anomalous = list(anomalous)
    n = params.config.input_size
    total = 0.0
    if normals:
        x = _to_batch(normals)
        xhat = forward_batch(params, x)
        total += float(np.sum((xhat - x) ** 2) / (len(normals) * n * n))
    if anomalous:
        for im, pl in anomalous:
            _check_dims(params, im)
            if pl.data.shape != im.data.shape:
                raise ModelError("pseudo-label/image dimension mismatch")
        x = _to_batch([im for im, _ in anomalous])
        pls = np.stack([pl.data for _, pl in anomalous])[:, None].astype(float)
        label_count = pls.sum()
        if label_count > 0:
            xhat = forward_batch(params, x)
            total -= lam * float(np.sum(pls * (xhat - x) ** 2) / label_count)
    return total


def _loss_and_grads(params: ModelParams, spec: LossSpec,
                    x_norm: np.ndarray | None,
                    x_anom: np.ndarray | None, pl_anom: np.ndarray | None):
    """Loss value and parameter gradients for one mini-batch.

    For the init loss only ``x_norm`` is used (normalizer: batch size).
    For the contrastive loss both pools use batch-local normalizers.
    """
    n = params.config.input_size
    grads_w = [np.zeros_like(w) for w in params.weights]
    grads_b = [np.zeros_like(b) for b in params.biases]
    loss = 0.0

    if x_norm is not None and x_norm.shape[0] > 0:
        xhat, cache = forward_batch(params, x_norm, want_cache=True)
        diff = xhat - x_norm
        if spec.kind == "init":
            denom = x_norm.shape[0]
        else:
            denom = x_norm.shape[0] * n * n
        loss += float(np.sum(diff ** 2) / denom)
        gw, gb = backward_batch(params, cache, 2.0 * diff / denom)
        for i in range(len(grads_w)):
            grads_w[i] += gw[i]
            grads_b[i] += gb[i]

    if spec.kind == "contrastive" and x_anom is not None and x_anom.shape[0] > 0:
        label_count = pl_anom.sum()
        if label_count > 0:
            xhat, cache = forward_batch(params, x_anom, want_cache=True)
            diff = xhat - x_anom
            loss -= spec.lam * float(np.sum(pl_anom * diff ** 2) / label_count)
            d_out = -2.0 * spec.lam * pl_anom * diff / label_count
            gw, gb = backward_batch(params, cache, d_out)
            for i in range(len(grads_w)):
                grads_w[i] += gw[i]
                grads_b[i] += gb[i]

    for i, (gw, gb) in enumerate(zip(grads_w, grads_b)):
        if not (np.isfinite(gw).all() and np.isfinite(gb).all()):
            raise ModelError(f"non-finite gradient at layer {i}")
    return loss, grads_w, grads_b


def gradients(params: ModelParams, spec: LossSpec, normals=(),
              anomalous=()):
    """Analytic gradient of the selected loss over the given batches,
    returned as (loss, weight gradients, bias gradients)."""
    x_norm = _to_batch(list(normals)) if normals else None
    anomalous = list(anomalous)
    if anomalous:
        x_anom = _to_batch([im for im, _ in anomalous])
        pl = np.stack([m.data for _, m in anomalous])[:, None].astype(float)
    else:
        x_anom, pl = None, None
    return _loss_and_grads(params, spec, x_norm, x_anom, pl)


# ---------------------------------------------------------------------------
# Training

def _augment_batch(x, pl, rng):
    """Random flips and 90-degree rotations, applied identically to each
    image and its mask."""
    out_x = x.copy()
    out_pl = pl.copy() if pl is not None else None
    for i in range(x.shape[0]):
        k = int(rng.integers(4))
        fh = bool(rng.integers(2))
        fv = bool(rng.integers(2))
        def tf(a):
            a = np.rot90(a, k, axes=(-2, -1))
            if fh:
                a = a[..., ::-1]
            if fv:
                a = a[..., ::-1, :]
            return a
        out_x[i] = tf(x[i])
        if out_pl is not None:
            out_pl[i] = tf(pl[i])
    return out_x, out_pl


def train(params: ModelParams, cfg: TrainConfig, spec: LossSpec,
          normals, anomalous=()):
    """Mini-batch gradient descent on the selected loss.

    Batches draw from the normal and anomalous pools jointly (shuffled
    together each epoch, so each batch holds both in proportion). Returns
    the updated parameters and the per-epoch mean batch loss trace.
    """
    normals = list(normals)
    anomalous = list(anomalous)
    for im in normals:
        _check_dims(params, im)
    pool_n = _to_batch(normals) if normals else np.zeros(
        (0, 1, params.config.input_size, params.config.input_size))
    if anomalous:
        pool_a = _to_batch([im for im, _ in anomalous])
        pool_pl = np.stack([m.data for _, m in anomalous])[:, None].astype(float)
    else:
        pool_a = np.zeros_like(pool_n[:0])
        pool_pl = np.zeros_like(pool_n[:0])

    n_total = pool_n.shape[0] + pool_a.shape[0]
    if n_total == 0:
        raise ModelError("no training samples")
    rng = np.random.default_rng(cfg.seed)
    weights = [w.copy() for w in params.weights]
    biases = [b.copy() for b in params.biases]
    step = params.step
    trace = []

    for _epoch in range(cfg.epochs):
        order = rng.permutation(n_total)
        epoch_losses = []
        for start in range(0, n_total, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            ni = idx[idx < pool_n.shape[0]]
            ai = idx[idx >= pool_n.shape[0]] - pool_n.shape[0]
            xb_n = pool_n[ni]
            xb_a = pool_a[ai]
            pl_a = pool_pl[ai]
            if cfg.augment:
                xb_n, _ = _augment_batch(xb_n, None, rng)
                xb_a, pl_a = _augment_batch(xb_a, pl_a, rng)
            cur = ModelParams(params.config, tuple(weights), tuple(biases),
                              step)
            loss, gw, gb = _loss_and_grads(
                cur, spec, xb_n if xb_n.shape[0] else None,
                xb_a if xb_a.shape[0] else None, pl_a)
            for i in range(len(weights)):
                weights[i] -= cfg.learning_rate * gw[i]
                biases[i] -= cfg.learning_rate * gb[i]
            step += 1
            epoch_losses.append(loss)
        trace.append(float(np.mean(epoch_losses)))

    out = ModelParams(params.config, tuple(w.copy() for w in weights),
                      tuple(b.copy() for b in biases), step)
    return out, trace


# ---------------------------------------------------------------------------
# Checkpoint I/O (versioned header + little-endian float32 blobs)

_CKPT_MAGIC = b"KISTCKP\x01"


def save_checkpoint(params: ModelParams, path) -> None:
    header = {
        "version": 1,
        "input_size": params.config.input_size,
        "channels": list(params.config.channels),
        "leak": params.config.leak,
        "seed": params.config.seed,
        "step": params.step,
    }
    hjson = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", len(hjson)))
        f.write(hjson)
        for w, b in zip(params.weights, params.biases):
            f.write(w.astype("<f4").tobytes())
            f.write(b.astype("<f4").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as f:
        if f.read(8) != _CKPT_MAGIC:
            raise ModelError(f"{path}: not a model checkpoint")
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode("utf-8"))
        if header.get("version") != 1:
            raise ModelError(f"unsupported checkpoint version: "
                             f"{header.get('version')}")
        cfg = ModelConfig(input_size=header["input_size"],
                          channels=tuple(header["channels"]),
                          leak=header["leak"], seed=header["seed"])
        weights, biases = [], []
        for in_ch, out_ch in _layer_channel_plan(cfg):
            w = np.frombuffer(f.read(4 * out_ch * in_ch * 9), dtype="<f4")
            weights.append(w.reshape(out_ch, in_ch, 3, 3).astype(np.float64))
            b = np.frombuffer(f.read(4 * out_ch), dtype="<f4")
            biases.append(b.astype(np.float64))
    return ModelParams(cfg, tuple(weights), tuple(biases), header["step"])
