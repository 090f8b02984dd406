"""
Entropy model trainer

Each step draws a batch of patches, builds their lossy reconstructions and
residuals, and minimizes main loss (plain-model bits of r with the true
context) plus bias loss (conditional-model bits of r with the quantized
context, tau drawn per sample). Both terms have weight 1.

The last `bias_phase_fraction` of the steps is the bias phase: on entry the
conditional estimator is re-seeded from the trained plain estimator, and
from then on only the bias loss updates weights.
"""

import csv
import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
import torch
from pydantic import BaseModel, Field, field_validator, model_validator

from ..entropy import (
    ResidualEntropyModel,
    TrainingInputs,
    discrete_pmf_mass,
    image_tensor,
)
from ..entropy.mixture import SIGMA_MIN
from ..errors import TrainingDivergedError
from ..imaging import Image
from ..lossy import BlockDCTCodec, LossyCodec
from ..observability import traced
from ..orchestration.instrumentation import InstrumentMode, estimate_residual_bits
from ..quantization import MAX_TAU, RESIDUAL_MAX, RESIDUAL_MIN, quantize_residual
from .checkpoint import Checkpoint
from .dataset import PatchDataset, step_rng

logger = logging.getLogger(__name__)

METRICS_HEADER = ["step", "main_bits", "bias_bits", "lr"]

PathLike = Union[str, Path]


class TrainConfig(BaseModel):
    """Hyperparameters of one training run"""
    patch_size: int = Field(32, gt=0)
    batch_size: int = Field(16, gt=0)
    steps: int = Field(2000, ge=0)
    learning_rate: float = Field(1e-4, ge=0)
    decay_fraction: float = Field(0.125, ge=0, le=1)
    decay_factor: float = Field(0.1, gt=0)
    bias_phase_fraction: float = Field(0.25, ge=0, lt=1)
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    taus: List[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5])
    seed: int = 0
    dataset_dir: Optional[str] = None
    augment: bool = True
    scale_range: Tuple[float, float] = (0.6, 1.0)
    dtype: str = "float32"
    checkpoint_every: int = Field(0, ge=0)
    log_every: int = Field(50, gt=0)

    @field_validator("taus")
    @classmethod
    def _check_taus(cls, v: List[int]) -> List[int]:
        if not v or any(t < 1 or t > MAX_TAU for t in v):
            raise ValueError(f"taus must be a non-empty subset of 1..{MAX_TAU}, got {v}")
        return v

    @field_validator("dtype")
    @classmethod
    def _check_dtype(cls, v: str) -> str:
        if v not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {v}")
        return v

    @model_validator(mode="after")
    def _check_scale_range(self) -> "TrainConfig":
        lo, hi = self.scale_range
        if not (0.6 <= lo <= hi <= 1.0):
            raise ValueError(f"scale_range must satisfy 0.6 <= lo <= hi <= 1.0, got {self.scale_range}")
        return self

    @property
    def torch_dtype(self) -> torch.dtype:
        return torch.float64 if self.dtype == "float64" else torch.float32

    @property
    def effective_scale_range(self) -> Tuple[float, float]:
        return self.scale_range if self.augment else (1.0, 1.0)

    def config_hash(self) -> str:
        """Hash of the settings that determine the trajectory"""
        data = self.model_dump(
            mode="json", exclude={"steps", "checkpoint_every", "log_every", "dataset_dir"}
        )
        return hashlib.sha256(json.dumps(data, sort_keys=True).encode("utf-8")).hexdigest()


@dataclass
class StepMetrics:
    """Per-subpixel losses of one step"""
    step: int
    main_bits: float
    bias_bits: float
    lr: float
    lossy_mse: float


class Trainer:
    """
    Trains a ResidualEntropyModel on random patches

    Batches and per-sample tau values come from a generator seeded with
    (seed, step); model initialization uses torch.manual_seed(seed).
    """

    def __init__(self, config: TrainConfig, dataset: PatchDataset,
                 lossy_codec: Optional[LossyCodec] = None,
                 model: Optional[ResidualEntropyModel] = None):
        self.config = config
        self.dataset = dataset
        self.lossy = lossy_codec or BlockDCTCodec()
        if model is None:
            torch.manual_seed(config.seed)
            model = ResidualEntropyModel()
        self.model = model.to(config.torch_dtype)
        self.optimizer = torch.optim.Adam(
            self.model.parameters(),
            lr=config.learning_rate,
            betas=tuple(config.betas),
            eps=config.eps,
        )
        self.step = 0
        self.history: List[StepMetrics] = []

    @property
    def bias_phase_start(self) -> int:
        """First step of the bias phase; equals config.steps when there is none"""
        cfg = self.config
        return cfg.steps - int(round(cfg.steps * cfg.bias_phase_fraction))

    def in_bias_phase(self, step: int) -> bool:
        return step >= self.bias_phase_start

    def learning_rate(self, step: int) -> float:
        decay_start = self.config.steps * (1.0 - self.config.decay_fraction)
        if step >= decay_start:
            return self.config.learning_rate * self.config.decay_factor
        return self.config.learning_rate

    def make_batch(self, step: int) -> TrainingInputs:
        """Patches, reconstructions, residuals and tau values for `step`"""
        cfg = self.config
        rng = step_rng(cfg.seed, step)
        patches = self.dataset.sample(rng, cfg.batch_size)
        taus = rng.choice(np.asarray(cfg.taus), size=cfg.batch_size)

        x_tilde = np.stack([self.lossy.reconstruct(Image(p)).data for p in patches])
        r = patches.astype(np.int64) - x_tilde.astype(np.int64)
        r_hat = np.stack([quantize_residual(r[b], int(taus[b])) for b in range(cfg.batch_size)])

        dtype = cfg.torch_dtype
        return TrainingInputs(
            x_tilde=image_tensor(x_tilde, dtype),
            residuals=image_tensor(r, dtype),
            quantized=image_tensor(r_hat, dtype),
            tau=torch.as_tensor(taus, dtype=torch.long),
        )

    def train_step(self, batch: TrainingInputs, step: int) -> StepMetrics:
        """One Adam update on main + bias loss

        In the bias phase main loss is only measured, so the shared layers and
        the plain estimator stay fixed.
        """
        lr = self.learning_rate(step)
        for group in self.optimizer.param_groups:
            group["lr"] = lr
        if step == self.bias_phase_start:
            self.begin_bias_phase(step)

        subpixels = float(batch.residuals[0].numel())
        self.optimizer.zero_grad(set_to_none=True)
        with torch.set_grad_enabled(not self.in_bias_phase(step)):
            main = self.model.main_loss(batch) / subpixels
        bias = self.model.bias_loss(batch) / subpixels
        total = main + bias
        if not torch.isfinite(total):
            raise TrainingDivergedError(
                f"non-finite loss at step {step}: main={float(main)}, bias={float(bias)}"
            )
        total.backward()
        self.optimizer.step()
        self.model.apply_mask_()

        metrics = StepMetrics(
            step=step,
            main_bits=float(main.detach()),
            bias_bits=float(bias.detach()),
            lr=lr,
            lossy_mse=float((batch.residuals ** 2).mean()),
        )
        self.history.append(metrics)
        return metrics

    def begin_bias_phase(self, step: int) -> None:
        """Re-seed the conditional estimator from the plain one and drop its
        Adam moments"""
        self.model.reset_conditional()
        for p in self.model.conditional_estimator.parameters():
            self.optimizer.state.pop(p, None)
        logger.info(f"[TRAINER] step {step}: bias phase, conditional estimator re-seeded")

    def checkpoint(self) -> Checkpoint:
        return Checkpoint.capture(
            self.model, self.optimizer, self.step,
            self.config.model_dump(mode="json"), self.config.config_hash(),
        )

    def resume(self, checkpoint: Checkpoint) -> None:
        if checkpoint.config_hash != self.config.config_hash():
            raise ValueError("checkpoint was produced with a different training configuration")
        self.model.load_state_dict(
            {k: v.to(self.config.torch_dtype) for k, v in checkpoint.model.state_dict().items()}
        )
        checkpoint.restore_optimizer(self.optimizer)
        self.step = checkpoint.step
        logger.info(f"[TRAINER] Resumed at step {self.step}")

    @traced
    def run(self, metrics_csv: Optional[PathLike] = None,
            checkpoint_path: Optional[PathLike] = None,
            stop_at: Optional[int] = None) -> Checkpoint:
        """Train until config.steps (or `stop_at`) and return the final checkpoint"""
        cfg = self.config
        last_step = cfg.steps if stop_at is None else min(stop_at, cfg.steps)
        writer = None
        handle = None
        if metrics_csv is not None:
            path = Path(metrics_csv)
            fresh = self.step == 0 or not path.exists()
            handle = path.open("w" if fresh else "a", newline="")
            writer = csv.writer(handle)
            if fresh:
                writer.writerow(METRICS_HEADER)

        logger.info(f"[TRAINER] Training steps {self.step}..{last_step} "
                    f"(batch {cfg.batch_size}, patch {cfg.patch_size})")
        try:
            while self.step < last_step:
                metrics = self.train_step(self.make_batch(self.step), self.step)
                self.step += 1
                if writer is not None:
                    writer.writerow([metrics.step, f"{metrics.main_bits:.6f}",
                                     f"{metrics.bias_bits:.6f}", f"{metrics.lr:.3e}"])
                if self.step % cfg.log_every == 0:
                    logger.info(
                        f"[TRAINER] step {self.step}: main {metrics.main_bits:.4f} bpsp, "
                        f"bias {metrics.bias_bits:+.4f} bpsp, lr {metrics.lr:.1e}"
                    )
                if checkpoint_path and cfg.checkpoint_every and self.step % cfg.checkpoint_every == 0:
                    self.checkpoint().save(checkpoint_path)
        finally:
            if handle is not None:
                handle.close()

        final = self.checkpoint()
        if checkpoint_path:
            final.save(checkpoint_path)
        return final


def train(config: TrainConfig, resume_from: Optional[PathLike] = None,
          dataset: Optional[PatchDataset] = None,
          metrics_csv: Optional[PathLike] = None,
          checkpoint_path: Optional[PathLike] = None) -> Checkpoint:
    """Train from scratch or resume from a checkpoint file

    Args:
        config: Training configuration
        resume_from: Optional checkpoint to continue from
        dataset: Patch source (defaults to config.dataset_dir)
        metrics_csv: Optional CSV of (step, main_bits, bias_bits, lr)
        checkpoint_path: Where periodic and final checkpoints go

    Returns:
        Final checkpoint
    """
    if dataset is None:
        if not config.dataset_dir:
            raise ValueError("no dataset given and config.dataset_dir is unset")
        dataset = PatchDataset.from_directory(
            config.dataset_dir, config.patch_size, config.effective_scale_range
        )
    trainer = Trainer(config, dataset)
    if resume_from is not None:
        trainer.resume(Checkpoint.load(resume_from))
    return trainer.run(metrics_csv=metrics_csv, checkpoint_path=checkpoint_path)


def moment_matched_baseline_bits(residuals: np.ndarray) -> float:
    """Bits under one zero-mean discretized logistic fit by moment matching

    sigma = sqrt(3 * E[r^2]) / pi, shared by every subpixel.
    """
    r = np.asarray(residuals, dtype=np.int64).ravel()
    if r.size == 0:
        return 0.0
    var = float(np.mean(r.astype(np.float64) ** 2))
    scale = max(SIGMA_MIN, math.sqrt(3.0 * var) / math.pi)
    mass = discrete_pmf_mass(np.zeros(1), np.array([scale]), np.ones(1))
    counts = np.bincount(r - RESIDUAL_MIN, minlength=RESIDUAL_MAX - RESIDUAL_MIN + 1)
    used = counts > 0
    return float(-(counts[used] * np.log2(mass[used])).sum())


def evaluate_residual_bpsp(model: ResidualEntropyModel, images: List[Image],
                           lossy_codec: Optional[LossyCodec] = None) -> Tuple[float, float]:
    """Mean lossless residual bpsp of the model and of the baseline on `images`"""
    lossy = lossy_codec or BlockDCTCodec()
    model_rates, baseline_rates = [], []
    for img in images:
        x_tilde = lossy.reconstruct(img)
        bits = estimate_residual_bits(model, img, x_tilde, 0, InstrumentMode.IDEAL)
        r = img.data.astype(np.int64) - x_tilde.data.astype(np.int64)
        model_rates.append(bits / img.num_subpixels)
        baseline_rates.append(moment_matched_baseline_bits(r) / img.num_subpixels)
    return float(np.mean(model_rates)), float(np.mean(baseline_rates))
