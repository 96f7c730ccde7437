"""Few-shot referring video object segmentation core (C++ backend)."""

from ._cmaseg import (  # noqa: F401
    CmasegError,
    bilinear_resize,
    contour_accuracy,
    conv2d,
    default_f_tolerance,
    dice_loss,
    focal_loss,
    generate_synthetic_video,
    grad_check_ops,
    grammar_tokens,
    matmul,
    region_similarity,
    self_affinity_plain,
    softmax,
)

__all__ = [
    "CmasegError",
    "bilinear_resize",
    "contour_accuracy",
    "conv2d",
    "default_f_tolerance",
    "dice_loss",
    "focal_loss",
    "generate_synthetic_video",
    "grad_check_ops",
    "grammar_tokens",
    "matmul",
    "region_similarity",
    "self_affinity_plain",
    "softmax",
]
