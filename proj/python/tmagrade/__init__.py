"""Gleason grading of prostate tissue microarray cores.

Label maps are 2-D uint8 arrays with codes 0 benign, 1 lower than grade 3,
2..4 grades 3..5 and 5 ignored. Images and probability maps are float32
arrays in H x W x C order.
"""

from ._tmagrade import (
    IGNORED,
    NUM_CLASSES,
    TmaError,
    UNet,
    argmax_labels,
    challenge_score,
    dice,
    evaluate,
    fuse_annotations,
    gleason_score,
    mean_dice,
    median_filter,
    one_hot,
    plan_geometry,
    prepare_image,
    prepare_labels,
    resample,
    restore_full_resolution,
    run_pipeline,
    synth_case,
)

__all__ = [
    "IGNORED",
    "NUM_CLASSES",
    "TmaError",
    "UNet",
    "argmax_labels",
    "challenge_score",
    "dice",
    "evaluate",
    "fuse_annotations",
    "gleason_score",
    "mean_dice",
    "median_filter",
    "one_hot",
    "plan_geometry",
    "prepare_image",
    "prepare_labels",
    "resample",
    "restore_full_resolution",
    "run_pipeline",
    "synth_case",
]
