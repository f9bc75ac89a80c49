"""Python bindings for the divgce toy pipeline.

Arrays are float64 numpy arrays; maps are C x H x W or N x C x H x W.
"""

from ._divgce import (
    ConfigError,
    GeometryError,
    NumericError,
    ShapeError,
    apply_suppression,
    batched_loss,
    ce_gradient,
    ce_loss,
    conv2d,
    db_forward,
    eval_checkpoint,
    gce_gradient,
    gce_loss,
    generate_dataset,
    global_avg_pool,
    load_checkpoint,
    load_dataset,
    peak_maps,
    philox4x32,
    run_oracle_suite,
    save_checkpoint,
    suppression_mask,
    top_k_negatives,
    train,
    verify_boost,
)

__all__ = [
    "ConfigError",
    "GeometryError",
    "NumericError",
    "ShapeError",
    "apply_suppression",
    "batched_loss",
    "ce_gradient",
    "ce_loss",
    "conv2d",
    "db_forward",
    "eval_checkpoint",
    "gce_gradient",
    "gce_loss",
    "generate_dataset",
    "global_avg_pool",
    "load_checkpoint",
    "load_dataset",
    "peak_maps",
    "philox4x32",
    "run_oracle_suite",
    "save_checkpoint",
    "suppression_mask",
    "top_k_negatives",
    "train",
    "verify_boost",
]
