"""Guided-filter post-processing of residual maps.

The residual map is smoothed by an edge-preserving filter that expresses the
output as a local linear transform of the original image (the guide): per
window a ridge regression yields coefficients (a_k, b_k), and every pixel
averages the coefficients of all windows covering it. Box means are computed
with summed-area tables; windows are clipped at the borders and each pixel is
normalized by its actual window size.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import GrayImage, RasterError, ResidualMap


@dataclass(frozen=True)
class GuidedFilterConfig:
    radius: int = 16
    epsilon: float = 1e-3

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError("radius must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def _box_sum(a: np.ndarray, radius: int) -> np.ndarray:
    """Sum over the clipped (2r+1)^2 window around each pixel, via a
    zero-padded summed-area table."""
    h, w = a.shape
    sat = np.zeros((h + 1, w + 1), dtype=np.float64)
    np.cumsum(a, axis=0, out=sat[1:, 1:])
    np.cumsum(sat[1:, 1:], axis=1, out=sat[1:, 1:])
    r = radius
    y0 = np.clip(np.arange(h) - r, 0, h)
    y1 = np.clip(np.arange(h) + r + 1, 0, h)
    x0 = np.clip(np.arange(w) - r, 0, w)
    x1 = np.clip(np.arange(w) + r + 1, 0, w)
    return (sat[np.ix_(y1, x1)] - sat[np.ix_(y0, x1)]
            - sat[np.ix_(y1, x0)] + sat[np.ix_(y0, x0)])


def _window_counts(h: int, w: int, radius: int) -> np.ndarray:
    return _box_sum(np.ones((h, w)), radius)


def box_mean(img: np.ndarray, radius: int) -> np.ndarray:
    """Mean over the clipped box window around each pixel."""
    if radius < 1:
        raise ValueError("radius must be >= 1")
    a = np.asarray(img, dtype=np.float64)
    return _box_sum(a, radius) / _window_counts(*a.shape, radius)


def guided_filter_array(x: np.ndarray, e: np.ndarray, radius: int,
                        epsilon: float) -> np.ndarray:
    """Core guided filter on plain arrays (exactly linear in ``e``).

    Per window k: a_k = (mean(x*e) - mu_k * ebar_k) / (var_k + eps),
    b_k = ebar_k - a_k * mu_k; output q_i = abar_i * x_i + bbar_i with the
    coefficient means taken over all windows containing pixel i.
    """
    x = np.asarray(x, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if x.shape != e.shape:
        raise RasterError(
            f"guide/input dimension mismatch: {x.shape} vs {e.shape}")
    mean_x = box_mean(x, radius)
    mean_e = box_mean(e, radius)
    mean_xe = box_mean(x * e, radius)
    var_x = box_mean(x * x, radius) - mean_x * mean_x

    a = (mean_xe - mean_x * mean_e) / (var_x + epsilon)
    b = mean_e - a * mean_x
    return box_mean(a, radius) * x + box_mean(b, radius)


def guided_filter(guide: GrayImage, e: ResidualMap,
                  cfg: GuidedFilterConfig) -> ResidualMap:
    """Filter residual map ``e`` guided by the original image.

    The ridge smoothing can slightly undershoot zero near sharp residual
    edges; the output is clamped at 0 to stay a valid residual map.
    """
    q = guided_filter_array(guide.data, e.data, cfg.radius, cfg.epsilon)
    return ResidualMap(np.maximum(q, 0.0))
