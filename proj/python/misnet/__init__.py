"""Python bindings for the misnet polyp segmentation library."""

import torch  # noqa: F401  loads the libtorch shared libraries first

from ._misnet import (
    ConfigError,
    DataError,
    Model,
    ShapeError,
    ablation_variants,
    build_manifest,
    config_hash,
    default_config,
    dice_iou,
    e_measure,
    evaluate,
    evaluate_dataset,
    evaluate_image,
    mae,
    normalize_config,
    poly_lr,
    predict,
    reduced_dim,
    report,
    s_measure,
    split_counts,
    train,
    weighted_fmeasure,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Model",
    "ShapeError",
    "ablation_variants",
    "build_manifest",
    "config_hash",
    "default_config",
    "dice_iou",
    "e_measure",
    "evaluate",
    "evaluate_dataset",
    "evaluate_image",
    "mae",
    "normalize_config",
    "poly_lr",
    "predict",
    "reduced_dim",
    "report",
    "s_measure",
    "split_counts",
    "train",
    "weighted_fmeasure",
]
