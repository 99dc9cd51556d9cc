"""Python bindings for the VIP region-concealment attack toolkit."""

from ._core import (
    AttackConfig,
    AttackResult,
    BoundingBox,
    EncoderOutput,
    MhaActivations,
    RoiTokenSet,
    ViTConfig,
    ViTModel,
    VipError,
    attention_rollout,
    cosine_similarity,
    diagonal_dominance,
    extract_roi_token_idx,
    forward,
    init_random,
    load_weights,
    read_ppm,
    resize_bilinear,
    roi_attention_mass,
    scale_box,
    run_attack,
    save_weights,
    ssim,
    write_ppm,
)

__all__ = [
    "AttackConfig",
    "AttackResult",
    "BoundingBox",
    "EncoderOutput",
    "MhaActivations",
    "RoiTokenSet",
    "ViTConfig",
    "ViTModel",
    "VipError",
    "attention_rollout",
    "cosine_similarity",
    "diagonal_dominance",
    "extract_roi_token_idx",
    "forward",
    "init_random",
    "load_weights",
    "read_ppm",
    "resize_bilinear",
    "roi_attention_mass",
    "scale_box",
    "run_attack",
    "save_weights",
    "ssim",
    "write_ppm",
]

__version__ = "0.1.0"
