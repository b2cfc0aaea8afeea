"""Fundamental raster types (gray images, binary masks, residual maps) and
elementary pixel-wise operations shared by the rest of the pipeline.

Intensities are stored unit-normalized in [0, 1]; 8-bit PNG inputs are divided
by 255 at load time. All arrays are 2-D row-major and treated as immutable
after construction.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image


class RasterError(ValueError):
    """Raised when a raster violates its invariants or dimensions mismatch."""


def _as_readonly(a: np.ndarray, dtype) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(a, dtype=dtype))
    if out.ndim != 2:
        raise RasterError(f"expected a 2-D array, got shape {out.shape}")
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GrayImage:
    """Single-channel image with intensities in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        d = _as_readonly(self.data, np.float64)
        if d.size and (d.min() < 0.0 or d.max() > 1.0):
            raise RasterError("gray intensities must lie in [0, 1]")
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class Mask:
    """Binary pixel mask; values are exactly 0 or 1 (stored as uint8)."""

    data: np.ndarray

    def __post_init__(self):
        d = _as_readonly(self.data, np.uint8)
        if d.size and not np.isin(d, (0, 1)).all():
            raise RasterError("mask values must be exactly 0 or 1")
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class ResidualMap:
    """Per-pixel non-negative residual values, same grid as its source image."""

    data: np.ndarray

    def __post_init__(self):
        d = _as_readonly(self.data, np.float64)
        if d.size and d.min() < 0.0:
            raise RasterError("residual values must be non-negative")
        object.__setattr__(self, "data", d)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def binarize(r: ResidualMap, t: float) -> Mask:
    """Threshold a residual map with a strict greater-than comparison."""
    if not np.isfinite(t):
        raise RasterError("threshold must be finite")
    return Mask((r.data > t).astype(np.uint8))


def mask_count(m: Mask) -> int:
    """Number of 1-pixels in the mask."""
    return int(m.data.sum())


def mask_logic(a: Mask, b: Mask, op: str) -> Mask:
    """Element-wise AND (min) or OR (max) of two equally sized masks."""
    if a.data.shape != b.data.shape:
        raise RasterError(
            f"mask dimension mismatch: {a.data.shape} vs {b.data.shape}")
    if op == "and":
        return Mask(np.minimum(a.data, b.data))
    if op == "or":
        return Mask(np.maximum(a.data, b.data))
    raise RasterError(f"unknown mask operation {op!r}")


# ---------------------------------------------------------------------------
# File I/O

def load_gray_png(path) -> GrayImage:
    """Load an 8-bit grayscale PNG, normalizing intensities to [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    return GrayImage(arr)


def save_gray_png(img: GrayImage, path) -> None:
    arr = np.round(img.data * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def load_mask_png(path) -> Mask:
    """Load a binary mask PNG (0 -> 0, any non-zero -> 1)."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return Mask((arr > 0).astype(np.uint8))


def save_mask_png(m: Mask, path) -> None:
    Image.fromarray(m.data * np.uint8(255), mode="L").save(path)


_RESID_MAGIC = b"RMAPF32\x00"


def save_residual(r: ResidualMap, png_path, raw_path=None) -> None:
    """Save a residual map as a 16-bit preview PNG (scaled by its max) plus an
    exact little-endian float32 sidecar.

    The sidecar defaults to the PNG path with an added ``.f32`` suffix.
    """
    png_path = Path(png_path)
    if raw_path is None:
        raw_path = png_path.with_suffix(png_path.suffix + ".f32")
    peak = float(r.data.max()) if r.data.size else 0.0
    scale = 65535.0 / peak if peak > 0 else 0.0
    vis = np.round(r.data * scale).astype(np.uint16)
    im = Image.fromarray(vis)
    im.info["residual_max"] = peak
    im.save(png_path)
    with open(raw_path, "wb") as f:
        f.write(_RESID_MAGIC)
        f.write(struct.pack("<IId", r.height, r.width, peak))
        f.write(r.data.astype("<f4").tobytes())


def load_residual(raw_path) -> ResidualMap:
    """Load a residual map from its float32 sidecar file."""
    with open(raw_path, "rb") as f:
        magic = f.read(8)
        if magic != _RESID_MAGIC:
            raise RasterError(f"{raw_path}: not a residual sidecar file")
        h, w, _peak = struct.unpack("<IId", f.read(16))
        data = np.frombuffer(f.read(4 * h * w), dtype="<f4").reshape(h, w)
    return ResidualMap(data.astype(np.float64))
