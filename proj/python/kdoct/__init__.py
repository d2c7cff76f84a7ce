"""Teacher-student distillation trainer for compact retinal-scan classifiers."""

from ._kdoct import (
    classification_metrics,
    cross_entropy,
    distill_student,
    evaluate_checkpoint,
    focal_loss,
    kd_breakdown,
    lr_at,
    lr_curve,
    make_folds,
    make_split,
    manifest_summary,
    synth_data,
    train_teacher,
)

__all__ = [
    "classification_metrics",
    "cross_entropy",
    "distill_student",
    "evaluate_checkpoint",
    "focal_loss",
    "kd_breakdown",
    "lr_at",
    "lr_curve",
    "make_folds",
    "make_split",
    "manifest_summary",
    "synth_data",
    "train_teacher",
]
