"""Pixel-wise pseudo-label production for weakly labeled anomalous images.

The residual map of an anomalous image is binarized at a set of thresholds
spanning mu + 1*sigma .. mu + 3*sigma of the normal-sample residuals; each
connected region is graded by the fuzzy knowledge base, and the union of all
regions reaching the grade threshold across all residual thresholds becomes
the pseudo-label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import model as model_mod
from .fuzzy import KnowledgeBase, anomaly_grade
from .imagecore import GrayImage, Mask, RasterError, ResidualMap, binarize
from .regions import Region, compute_properties, connected_components, standardize


@dataclass(frozen=True)
class ResidualStats:
    """Population mean/std over every pixel of every normal residual map."""

    mu: float
    sigma: float

    def __post_init__(self):
        if self.sigma < 0:
            raise RasterError("sigma must be >= 0")


@dataclass(frozen=True)
class LabelingConfig:
    s: float = 0.3
    alpha: float = 0.8

    def __post_init__(self):
        if not (0.0 < self.s <= 1.0):
            raise RasterError("step-size factor s must be in (0, 1]")
        if not (0.0 <= self.alpha <= 1.0):
            raise RasterError("grade threshold alpha must be in [0, 1]")


def residual_stats(params, normals) -> ResidualStats:
    """Residual mean/std of all pixels of all normal images under the model."""
    normals = list(normals)
    if not normals:
        raise RasterError("residual statistics need at least one normal image")
    flat = np.concatenate(
        [model_mod.residual(params, im).data.ravel() for im in normals])
    return ResidualStats(mu=float(flat.mean()), sigma=float(flat.std()))


def _snap_int(v: float) -> float:
    """Round values that are within float noise of an integer."""
    r = round(v)
    return float(r) if abs(v - r) < 1e-9 else v


def threshold_set(stats: ResidualStats, s: float) -> list[float]:
    """Ascending thresholds mu + n*s*sigma for ceil(1/s) <= n <= floor(3/s)."""
    if s <= 0:
        raise RasterError("step-size factor s must be positive")
    lo = math.ceil(_snap_int(1.0 / s))
    hi = math.floor(_snap_int(3.0 / s))
    if lo > hi:
        raise RasterError(f"empty threshold range for s={s}")
    return [stats.mu + n * s * stats.sigma for n in range(lo, hi + 1)]


def grade_regions(e: ResidualMap, x: GrayImage, t: float,
                  kb: KnowledgeBase) -> list[tuple[Region, float]]:
    """Connected regions of the binarized residual with their anomaly grades
    (properties computed on the original image and standardized by the
    knowledge base's scale factors)."""
    if e.data.shape != x.data.shape:
        raise RasterError("residual/image dimension mismatch")
    regions = connected_components(binarize(e, t))
    out = []
    for reg in regions:
        props = standardize(compute_properties(reg, x), kb.gammas)
        out.append((reg, anomaly_grade(kb, props)))
    return out


def anomalous_like_regions(e: ResidualMap, x: GrayImage, t: float,
                           kb: KnowledgeBase, alpha: float) -> list[Region]:
    """Regions of the binarized residual whose anomaly grade reaches alpha."""
    return [reg for reg, g in grade_regions(e, x, t, kb) if g >= alpha]


def produce_pseudo_label(x: GrayImage, e: ResidualMap, kb: KnowledgeBase,
                         thresholds, alpha: float) -> Mask:
    """Union over all thresholds of the kept regions' pixels."""
    thresholds = list(thresholds)
    if not thresholds:
        raise RasterError("threshold set is empty")
    out = np.zeros(x.data.shape, dtype=np.uint8)
    for t in thresholds:
        for reg in anomalous_like_regions(e, x, t, kb, alpha):
            out[reg.pixels[:, 0], reg.pixels[:, 1]] = 1
    return Mask(out)


def label_image(params, x: GrayImage, kb: KnowledgeBase,
                stats: ResidualStats, cfg: LabelingConfig) -> Mask:
    """Full pipeline for one anomalous image: residual map, threshold
    traversal, grading, union."""
    e = model_mod.residual(params, x)
    ts = threshold_set(stats, cfg.s)
    return produce_pseudo_label(x, e, kb, ts, cfg.alpha)
