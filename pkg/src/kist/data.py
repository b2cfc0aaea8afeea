"""Dataset ingestion and a seeded synthetic-texture generator whose injected
anomalies are describable by the shipped fuzzy rules.

Directory layout:

    root/normal/*.png
    root/anomalous/*.png
    root/test/images/*.png
    root/test/masks/*.png      (basename matches the test image)

The generator produces a band-limited gray texture background and injects
one anomaly per anomalous/test image, writing image and ground-truth mask
from the same stencil.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image
from scipy import ndimage

from .imagecore import (GrayImage, Mask, RasterError, load_gray_png,
                        load_mask_png, save_gray_png, save_mask_png)

ANOMALY_FAMILIES = ("large-dark-blob", "small-dark-spot",
                    "dark-slender-scratch", "bright-rectangle")


@dataclass(frozen=True)
class Dataset:
    normal: tuple[GrayImage, ...]
    anomalous: tuple[GrayImage, ...]
    test: tuple[tuple[GrayImage, Mask], ...]

    def __post_init__(self):
        object.__setattr__(self, "normal", tuple(self.normal))
        object.__setattr__(self, "anomalous", tuple(self.anomalous))
        object.__setattr__(self, "test", tuple(self.test))
        shapes = {im.data.shape for im in self.normal}
        shapes |= {im.data.shape for im in self.anomalous}
        shapes |= {im.data.shape for im, _ in self.test}
        shapes |= {m.data.shape for _, m in self.test}
        if len(shapes) > 1:
            raise RasterError(f"images must share one size, got {shapes}")


@dataclass(frozen=True)
class SynthSpec:
    size: int = 64
    n_normal: int = 60
    n_anomalous: int = 3
    n_test: int = 20
    mix: dict[str, float] = field(default_factory=lambda: {
        "large-dark-blob": 0.4,
        "small-dark-spot": 0.2,
        "dark-slender-scratch": 0.4,
    })
    background_mean: float = 0.55
    background_amplitude: float = 0.08
    grain_amplitude: float = 0.16
    grain_sigma: float = 0.5
    anomaly_gray_dark: float = 0.05
    anomaly_gray_bright: float = 0.92
    seed: int = 7

    def __post_init__(self):
        if min(self.n_normal, self.n_anomalous, self.n_test) < 0:
            raise ValueError("counts must be >= 0")
        for fam in self.mix:
            if fam not in ANOMALY_FAMILIES:
                raise ValueError(f"unknown anomaly family {fam!r}")
        total = sum(self.mix.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"mix fractions must sum to 1, got {total}")


# ---------------------------------------------------------------------------
# Loading

def _resize_bilinear(arr: np.ndarray, size: int) -> np.ndarray:
    if arr.shape == (size, size):
        return arr
    im = Image.fromarray(np.round(arr * 255).astype(np.uint8), "L")
    im = im.resize((size, size), Image.BILINEAR)
    return np.asarray(im, dtype=np.float64) / 255.0


def load_dataset(root, size: int | None = None) -> Dataset:
    """Load the directory layout, optionally resizing everything to ``size``.

    The normal pool must be non-empty; every test image needs a mask with a
    matching basename.
    """
    root = Path(root)

    def load_dir(d):
        return sorted(Path(d).glob("*.png")) if Path(d).is_dir() else []

    def prep(path):
        img = load_gray_png(path)
        if size is not None:
            img = GrayImage(_resize_bilinear(img.data, size))
        return img

    normal = [prep(p) for p in load_dir(root / "normal")]
    if not normal:
        raise RasterError(f"{root}: no normal images found")
    anomalous = [prep(p) for p in load_dir(root / "anomalous")]

    test = []
    for p in load_dir(root / "test" / "images"):
        mask_path = root / "test" / "masks" / p.name
        if not mask_path.exists():
            raise RasterError(f"missing mask for test image {p.name}")
        m = load_mask_png(mask_path)
        if size is not None:
            m = Mask((_resize_bilinear(m.data.astype(np.float64), size)
                      > 0.5).astype(np.uint8))
        test.append((prep(p), m))
    return Dataset(tuple(normal), tuple(anomalous), tuple(test))


def save_dataset(ds: Dataset, root) -> None:
    root = Path(root)
    (root / "normal").mkdir(parents=True, exist_ok=True)
    (root / "anomalous").mkdir(parents=True, exist_ok=True)
    (root / "test" / "images").mkdir(parents=True, exist_ok=True)
    (root / "test" / "masks").mkdir(parents=True, exist_ok=True)
    for i, im in enumerate(ds.normal):
        save_gray_png(im, root / "normal" / f"{i:04d}.png")
    for i, im in enumerate(ds.anomalous):
        save_gray_png(im, root / "anomalous" / f"{i:04d}.png")
    for i, (im, m) in enumerate(ds.test):
        save_gray_png(im, root / "test" / "images" / f"{i:04d}.png")
        save_mask_png(m, root / "test" / "masks" / f"{i:04d}.png")


# ---------------------------------------------------------------------------
# Synthetic generation

def _background(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    """Band-limited noise texture: a coarse component the reconstruction
    model can learn plus a fine grain it cannot, so normal residuals have a
    realistic, non-degenerate spread."""
    coarse = ndimage.gaussian_filter(
        rng.standard_normal((spec.size, spec.size)), sigma=3.0, mode="wrap")
    coarse /= max(np.abs(coarse).max(), 1e-12)
    grain = ndimage.gaussian_filter(
        rng.standard_normal((spec.size, spec.size)), sigma=spec.grain_sigma,
        mode="wrap")
    grain /= max(grain.std(), 1e-12)
    img = (spec.background_mean + spec.background_amplitude * coarse
           + spec.grain_amplitude * grain)
    # the dark tail is clipped well above the "low gray" band so isolated
    # noise pixels can never look like tiny dark defects
    return np.clip(img, 0.3, 1.0)


def _stencil_blob(size, rng):
    """Roughly elliptical blob, radius 3.5..4.5 px (area fraction in the
    'high' band of the shipped area scale, standardized value below 2)."""
    r = rng.uniform(3.5, 4.5)
    aspect = rng.uniform(0.8, 1.25)
    cy = rng.uniform(r + 2, size - r - 2)
    cx = rng.uniform(r + 2, size - r - 2)
    yy, xx = np.mgrid[0:size, 0:size]
    return ((yy - cy) ** 2 / (r * aspect) ** 2
            + (xx - cx) ** 2 / (r / aspect) ** 2) <= 1.0


def _stencil_spot(size, rng):
    """2x2 .. 3x3 dark spot ('low' area band)."""
    side = int(rng.integers(2, 4))
    top = int(rng.integers(2, size - side - 2))
    left = int(rng.integers(2, size - side - 2))
    m = np.zeros((size, size), dtype=bool)
    m[top:top + side, left:left + side] = True
    return m


def _stencil_scratch(size, rng):
    """Thin line of ~17..22 px length at a random angle (high shape index)."""
    length = int(rng.integers(17, 23))
    ang = rng.uniform(0, np.pi)
    cy = rng.uniform(size * 0.3, size * 0.7)
    cx = rng.uniform(size * 0.3, size * 0.7)
    ts = np.linspace(-length / 2, length / 2, length * 4)
    ys = np.clip(np.round(cy + ts * np.sin(ang)).astype(int), 0, size - 1)
    xs = np.clip(np.round(cx + ts * np.cos(ang)).astype(int), 0, size - 1)
    m = np.zeros((size, size), dtype=bool)
    m[ys, xs] = True
    # widen to ~2 px so the line survives reconstruction blur
    return ndimage.binary_dilation(m, structure=np.ones((2, 2), dtype=bool))


def _stencil_rectangle(size, rng):
    """Elongated 1x20-ish bright bar ('mid' area, high shape index)."""
    h, w = 1, int(rng.integers(20, 23))
    if rng.integers(2):
        h, w = w, h
    top = int(rng.integers(2, size - h - 2))
    left = int(rng.integers(2, size - w - 2))
    m = np.zeros((size, size), dtype=bool)
    m[top:top + h, left:left + w] = True
    return m


# per family: stencil builder, dark/bright tone, edge softness (gaussian
# sigma on the blend weight) and faint fraction (share of in-mask pixels
# drawn toward background so part of each defect is low-contrast)
_STENCILS = {
    "large-dark-blob": (_stencil_blob, "dark", 1.0, 0.15),
    "small-dark-spot": (_stencil_spot, "dark", 0.5, 0.0),
    "dark-slender-scratch": (_stencil_scratch, "dark", 0.55, 0.15),
    "bright-rectangle": (_stencil_rectangle, "bright", 0.4, 0.0),
}

# blend weights below this are zeroed so the ground-truth mask covers
# exactly the altered pixels
_WEIGHT_CUTOFF = 0.2

# gray value of the faint (low-contrast) share of a dark defect
_FAINT_GRAY = 0.36


def _inject(img: np.ndarray, spec: SynthSpec, family: str,
            rng: np.random.Generator):
    stencil_fn, tone, edge_sigma, faint_frac = _STENCILS[family]
    stencil = stencil_fn(spec.size, rng)
    fill = (spec.anomaly_gray_dark if tone == "dark"
            else spec.anomaly_gray_bright)
    weight = ndimage.gaussian_filter(stencil.astype(np.float64), edge_sigma)
    peak = weight.max()
    if peak > 0:
        weight /= peak
    weight[weight < _WEIGHT_CUTOFF] = 0.0
    # saturate so altered pixels sit close to the fill tone; only the very
    # rim keeps a partial blend
    weight = np.minimum(weight / 0.8, 1.0)
    noise = 0.015 * rng.standard_normal(img.shape)
    values = fill + noise
    # a fixed share of the fully covered pixels stays close to the
    # background gray, giving the defect a speckled, partially
    # low-contrast interior
    if faint_frac > 0:
        rows, cols = np.nonzero(weight >= 1.0)
        n_faint = int(round(faint_frac * rows.size))
        pick = rng.permutation(rows.size)[:n_faint]
        values[rows[pick], cols[pick]] = _FAINT_GRAY + noise[rows[pick],
                                                             cols[pick]]
    out = img * (1.0 - weight) + values * weight
    return np.clip(out, 0.0, 1.0), (weight > 0).astype(np.uint8)


def generate_with_truth(spec: SynthSpec):
    """Deterministic synthetic dataset plus the ground-truth masks of the
    anomalous training pool (which the Dataset itself deliberately omits:
    those images are only weakly labeled)."""
    rng = np.random.default_rng(spec.seed)
    families = sorted(spec.mix)
    probs = np.array([spec.mix[f] for f in families])

    normal = [GrayImage(_background(spec, rng)) for _ in range(spec.n_normal)]

    def anomalous_image():
        fam = families[rng.choice(len(families), p=probs)]
        img, stencil = _inject(_background(spec, rng), spec, fam, rng)
        return GrayImage(img), Mask(stencil)

    pairs = [anomalous_image() for _ in range(spec.n_anomalous)]
    anomalous = [im for im, _ in pairs]
    anomalous_truth = [m for _, m in pairs]
    test = [anomalous_image() for _ in range(spec.n_test)]
    ds = Dataset(tuple(normal), tuple(anomalous), tuple(test))
    return ds, anomalous_truth


def generate(spec: SynthSpec) -> Dataset:
    """Deterministic synthetic dataset with exact ground-truth test masks."""
    return generate_with_truth(spec)[0]


def write_synthetic(spec: SynthSpec, root) -> Dataset:
    """Generate, save under the standard layout, and record the spec."""
    ds = generate(spec)
    save_dataset(ds, root)
    doc = {
        "size": spec.size, "n_normal": spec.n_normal,
        "n_anomalous": spec.n_anomalous, "n_test": spec.n_test,
        "mix": spec.mix, "background_mean": spec.background_mean,
        "background_amplitude": spec.background_amplitude,
        "grain_amplitude": spec.grain_amplitude,
        "grain_sigma": spec.grain_sigma,
        "anomaly_gray_dark": spec.anomaly_gray_dark,
        "anomaly_gray_bright": spec.anomaly_gray_bright, "seed": spec.seed,
    }
    with open(Path(root) / "spec.json", "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
    return ds
