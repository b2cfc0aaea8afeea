"""Self-training orchestration: pretrain on normals, then alternate
pseudo-label production and contrastive model updates.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .data import Dataset
from .fuzzy import KnowledgeBase
from .imagecore import Mask, mask_count
from .model import LossSpec, ModelParams, TrainConfig, train
from .pseudolabel import (LabelingConfig, ResidualStats, label_image,
                          residual_stats, threshold_set)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class KistConfig:
    iterations: int = 5
    labeling: LabelingConfig = field(default_factory=LabelingConfig)
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig(
        epochs=50, augment=True))
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("iteration count must be >= 0")


@dataclass(frozen=True)
class IterationReport:
    iteration: int
    stats: ResidualStats
    thresholds: tuple[float, ...]
    label_pixel_counts: tuple[int, ...]
    loss_trace: tuple[float, ...]
    metrics: dict[str, float] = field(default_factory=dict)


def _worker_cap() -> int:
    try:
        return max(1, int(os.environ.get("KIST_THREADS", "1")))
    except ValueError:
        return 1


def produce_labels(params: ModelParams, dataset: Dataset, kb: KnowledgeBase,
                   stats: ResidualStats,
                   labeling: LabelingConfig) -> list[Mask]:
    """Pseudo-labels for every anomalous image, in dataset order."""
    cap = _worker_cap()
    if cap > 1 and len(dataset.anomalous) > 1:
        with ThreadPoolExecutor(max_workers=cap) as pool:
            return list(pool.map(
                lambda x: label_image(params, x, kb, stats, labeling),
                dataset.anomalous))
    return [label_image(params, x, kb, stats, labeling)
            for x in dataset.anomalous]


def kist(dataset: Dataset, kb: KnowledgeBase, config: KistConfig,
         params: ModelParams, evaluate=None):
    """Run the full self-training loop from the given initial parameters.

    Pretrains on the normal pool, then for each iteration: recompute the
    normal residual statistics and thresholds, pseudo-label every anomalous
    image, and retrain with the contrastive loss. ``evaluate``, when given,
    is called as evaluate(params) after pretraining and after each iteration
    and its dict result lands in the report.

    Returns (final params, pretrain loss trace, list of IterationReport).
    """
    if not dataset.normal:
        raise ValueError("dataset has no normal images")

    params, pre_trace = train(params, config.pretrain, LossSpec("init"),
                              dataset.normal)
    if evaluate is not None:
        evaluate(params)
    reports = []
    for it in range(1, config.iterations + 1):
        stats = residual_stats(params, dataset.normal)
        thresholds = threshold_set(stats, config.labeling.s)
        if len(thresholds) > 10:
            log.warning("threshold set has %d steps (s=%g); consider a "
                        "larger s", len(thresholds), config.labeling.s)
        labels = produce_labels(params, dataset, kb, stats, config.labeling)
        counts = tuple(mask_count(m) for m in labels)
        if sum(counts) == 0:
            log.warning("iteration %d: every pseudo-label is empty; "
                        "suppression term is zero", it)
        params, trace = train(
            params, config.train, LossSpec("contrastive", config.train.lam),
            dataset.normal, list(zip(dataset.anomalous, labels)))
        metrics = dict(evaluate(params)) if evaluate else {}
        reports.append(IterationReport(
            iteration=it, stats=stats, thresholds=tuple(thresholds),
            label_pixel_counts=counts, loss_trace=tuple(trace),
            metrics=metrics))
    return params, pre_trace, reports
