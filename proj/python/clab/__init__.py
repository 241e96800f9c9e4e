"""Python bindings for the contrastive video detection toolkit."""

from ._core import (
    ConfigError,
    TrainingDiverged,
    alignment_gap,
    dataset_summary,
    dlw_weight,
    evaluate,
    generate,
    info_nce_loss,
    info_nce_oracle,
    iou,
    nms,
    normalized_config,
    run_checks,
    train,
)

__all__ = [
    "ConfigError",
    "TrainingDiverged",
    "alignment_gap",
    "dataset_summary",
    "dlw_weight",
    "evaluate",
    "generate",
    "info_nce_loss",
    "info_nce_oracle",
    "iou",
    "nms",
    "normalized_config",
    "run_checks",
    "train",
]
