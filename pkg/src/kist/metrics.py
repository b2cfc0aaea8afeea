"""Pixel-level AUROC and AUPRO for anomaly score maps against ground truth.

Pixels of all images are pooled into a single threshold sweep. AUROC uses
trapezoidal integration over the ROC curve with tied scores sharing one
threshold. AUPRO integrates the mean per-region overlap over the false
positive rate up to a limit (default 0.3) and normalizes by that limit;
ground-truth regions are the 8-connected components of the truth masks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imagecore import Mask, RasterError, ResidualMap
from .regions import connected_components


@dataclass(frozen=True)
class EvalBatch:
    scores: tuple[ResidualMap, ...]
    truths: tuple[Mask, ...]

    def __post_init__(self):
        object.__setattr__(self, "scores", tuple(self.scores))
        object.__setattr__(self, "truths", tuple(self.truths))
        if len(self.scores) != len(self.truths):
            raise RasterError("scores and truths must have equal counts")
        if not self.scores:
            raise RasterError("evaluation batch is empty")
        for s, t in zip(self.scores, self.truths):
            if s.data.shape != t.data.shape:
                raise RasterError(
                    f"score/truth dimension mismatch: {s.data.shape} vs "
                    f"{t.data.shape}")


def _pooled(batch: EvalBatch):
    scores = np.concatenate([s.data.ravel() for s in batch.scores])
    labels = np.concatenate([t.data.ravel() for t in batch.truths])
    return scores, labels.astype(bool)


def auroc(batch: EvalBatch) -> float:
    """Area under the pooled pixel-level ROC curve."""
    scores, pos = _pooled(batch)
    n_pos = int(pos.sum())
    n_neg = pos.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise RasterError("AUROC needs at least one positive and one "
                          "negative pixel")
    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    pos_sorted = pos[order]
    # indices where a run of tied scores ends
    ends = np.nonzero(np.diff(s_sorted))[0]
    cuts = np.concatenate([ends, [s_sorted.size - 1]])
    tp = np.cumsum(pos_sorted)[cuts]
    fp = np.cumsum(~pos_sorted)[cuts]
    tpr = np.concatenate([[0.0], tp / n_pos])
    fpr = np.concatenate([[0.0], fp / n_neg])
    return float(np.trapezoid(tpr, fpr))


def _pro_curve(batch: EvalBatch):
    """FPR and mean per-region overlap at every distinct score threshold,
    sorted by increasing FPR (decreasing threshold)."""
    scores, pos = _pooled(batch)
    n_neg = int((~pos).sum())
    if n_neg == 0:
        raise RasterError("AUPRO needs at least one negative pixel")

    # assign a global region id to every ground-truth pixel
    region_ids = np.full(scores.size, -1, dtype=np.int64)
    next_id = 0
    offset = 0
    region_sizes = []
    for t in batch.truths:
        for reg in connected_components(t):
            flat = reg.pixels[:, 0] * t.width + reg.pixels[:, 1]
            region_ids[offset + flat] = next_id
            region_sizes.append(reg.size)
            next_id += 1
        offset += t.data.size
    if next_id == 0:
        raise RasterError("AUPRO needs at least one ground-truth region")
    region_sizes = np.asarray(region_sizes, dtype=np.float64)

    order = np.argsort(-scores, kind="stable")
    s_sorted = scores[order]
    ids_sorted = region_ids[order]
    neg_sorted = ~pos[order]

    ends = np.nonzero(np.diff(s_sorted))[0]
    cuts = np.concatenate([ends, [s_sorted.size - 1]])

    # per-region cumulative hit counts at each threshold cut
    hit = np.zeros((cuts.size, next_id), dtype=np.float64)
    in_region = ids_sorted >= 0
    idx = np.searchsorted(cuts, np.nonzero(in_region)[0])
    np.add.at(hit, (idx, ids_sorted[in_region]), 1.0)
    hit = np.cumsum(hit, axis=0)

    pro = (hit / region_sizes).mean(axis=1)
    fpr = np.cumsum(neg_sorted)[cuts] / n_neg
    return np.concatenate([[0.0], fpr]), np.concatenate([[0.0], pro])


def aupro(batch: EvalBatch, fpr_limit: float = 0.3) -> float:
    """Normalized area under the per-region-overlap curve up to fpr_limit."""
    if not (0.0 < fpr_limit <= 1.0):
        raise RasterError("fpr_limit must be in (0, 1]")
    fpr, pro = _pro_curve(batch)
    if fpr[-1] < fpr_limit:
        # the sweep covers all thresholds, so FPR reaches 1 unless there are
        # no negatives (rejected earlier); guard for numerical edge anyway
        fpr = np.concatenate([fpr, [fpr_limit]])
        pro = np.concatenate([pro, [pro[-1]]])
    # interpolate the curve point at the exact limit
    pro_at_limit = np.interp(fpr_limit, fpr, pro)
    keep = fpr < fpr_limit
    f = np.concatenate([fpr[keep], [fpr_limit]])
    p = np.concatenate([pro[keep], [pro_at_limit]])
    return float(np.trapezoid(p, f) / fpr_limit)
