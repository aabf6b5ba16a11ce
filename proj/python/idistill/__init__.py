"""Python bindings for the idistill morphing attack detector."""

from ._idistill import (
    IoError,
    MorphClassifier,
    ValidationError,
    bce_loss,
    bpcer_at_apcer,
    compute_eer,
    cosine_similarity,
    fuse,
    generate_dataset,
    identity_score,
    run_cli,
)

__all__ = [
    "IoError",
    "MorphClassifier",
    "ValidationError",
    "bce_loss",
    "bpcer_at_apcer",
    "compute_eer",
    "cosine_similarity",
    "fuse",
    "generate_dataset",
    "identity_score",
    "run_cli",
]
