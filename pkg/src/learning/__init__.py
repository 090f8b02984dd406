"""
Entropy model training for NLLC

- TrainConfig / Trainer / train: Adam on main + bias-correction loss
- PatchDataset: deterministic random patches per (seed, step)
- Checkpoint: weights + optimizer state + metadata
- moment_matched_baseline_bits / evaluate_residual_bpsp: held-out evaluation
"""

from .dataset import PatchDataset, step_rng
from .checkpoint import Checkpoint
from .trainer import (
    TrainConfig,
    StepMetrics,
    Trainer,
    train,
    moment_matched_baseline_bits,
    evaluate_residual_bpsp,
    METRICS_HEADER,
)

__all__ = [
    "PatchDataset",
    "step_rng",
    "Checkpoint",
    "TrainConfig",
    "StepMetrics",
    "Trainer",
    "train",
    "moment_matched_baseline_bits",
    "evaluate_residual_bpsp",
    "METRICS_HEADER",
]
