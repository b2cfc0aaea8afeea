"""Knowledge-informed self-training for reconstruction-based anomaly
localization: fuzzy region grading, pseudo-label production, contrastive
reconstruction training, guided-filter post-processing, and pixel-level
evaluation metrics."""

from .imagecore import (GrayImage, Mask, RasterError, ResidualMap, binarize,
                        mask_count, mask_logic)
from .regions import (Region, RegionProperties, bcs_index,
                      compute_properties, connected_components, standardize,
                      symmetry)
from .fuzzy import (FuzzyRule, KnowledgeBase, TrapezoidMF, anomaly_grade,
                    load_builtin_rules, load_knowledge_base,
                    parse_knowledge_base, rule_grade)
from .model import (LossSpec, ModelConfig, ModelParams, TrainConfig,
                    contrastive_loss, forward, gradients, init_loss,
                    init_params, load_checkpoint, residual, save_checkpoint,
                    train)
from .pseudolabel import (LabelingConfig, ResidualStats, label_image,
                          produce_pseudo_label, residual_stats, threshold_set)
from .selftrain import IterationReport, KistConfig, kist
from .postfilter import GuidedFilterConfig, box_mean, guided_filter
from .metrics import EvalBatch, aupro, auroc
from .data import Dataset, SynthSpec, generate, load_dataset, save_dataset

__version__ = "0.1.0"
