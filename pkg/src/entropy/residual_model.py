"""
Residual entropy model

Combines the feature extractor, the masked context convolution and two
parameter estimators (plain, and tau-conditioned for bias correction) into
one module. Also provides the float64 per-pixel evaluation that encoder and
decoder share, and explicit gradient computation for the two losses.
"""

import copy
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional

import numpy as np
import torch
from torch import nn

from ..quantization import MAX_TAU, RESIDUAL_MAX, RESIDUAL_MIN
from .context_model import (
    CONTEXT_KERNEL,
    RESIDUAL_SCALE,
    Condition,
    ConditionalScaleShift,
    FeatureExtractor,
    MaskedContextConv,
    ParameterEstimator,
)
from .mixture import LN2, SIGMA_MIN, MixtureParams, autoregress_means, log_likelihood

logger = logging.getLogger(__name__)

GradientSet = Dict[str, torch.Tensor]


class LossSelection(Enum):
    """Which training objective to differentiate"""
    MAIN = "main"
    BIAS = "bias"


@dataclass
class TrainingInputs:
    """One batch as seen by the losses; tensors are (B, 3, H, W) float"""
    x_tilde: torch.Tensor
    residuals: torch.Tensor
    quantized: Optional[torch.Tensor] = None
    tau: Optional[torch.Tensor] = None


def _check_residual_range(r: torch.Tensor) -> None:
    if r.numel() and (r.min() < RESIDUAL_MIN or r.max() > RESIDUAL_MAX):
        raise ValueError(
            f"residuals must lie in [{RESIDUAL_MIN}, {RESIDUAL_MAX}], "
            f"got [{float(r.min())}, {float(r.max())}]"
        )


class ResidualEntropyModel(nn.Module):
    """
    Autoregressive discrete logistic mixture model of lossy residuals

    Parts:
    1. feature_extractor: u from the lossy reconstruction
    2. context_conv: causal context C from residuals
    3. plain_estimator: p(r | u, C)
    4. conditional_estimator: tau-conditioned variant for quantized contexts
    """

    def __init__(self):
        super().__init__()
        self.feature_extractor = FeatureExtractor()
        self.context_conv = MaskedContextConv()
        self.plain_estimator = ParameterEstimator(conditional=False)
        self.conditional_estimator = ParameterEstimator(conditional=True)
        self.reset_conditional()

    @torch.no_grad()
    def reset_conditional(self) -> None:
        """Copy plain layer weights into the conditional estimator and make
        every tau modulation the identity

        Afterwards the conditional estimator computes the same function as
        the plain one for every tau.
        """
        plain = self.plain_estimator.state_dict()
        own = self.conditional_estimator.state_dict()
        own.update({k: v.clone() for k, v in plain.items()})
        self.conditional_estimator.load_state_dict(own)
        for module in self.conditional_estimator.modules():
            if isinstance(module, ConditionalScaleShift):
                module.reset_identity_()
        logger.debug(f"Conditional estimator reset from {len(plain)} plain tensors")

    @torch.no_grad()
    def apply_mask_(self) -> None:
        self.context_conv.apply_mask_()

    def extract_feature(self, x_tilde: torch.Tensor) -> torch.Tensor:
        return self.feature_extractor(x_tilde)

    def extract_context(self, residuals: torch.Tensor) -> torch.Tensor:
        return self.context_conv(residuals)

    def _condition_tensor(self, condition: Condition) -> Optional[torch.Tensor]:
        if condition is None:
            return None
        cond = torch.as_tensor(condition, dtype=torch.long)
        if cond.numel() == 0 or int(cond.min()) < 1 or int(cond.max()) > MAX_TAU:
            raise ValueError(
                f"condition must be None or tau in [1, {MAX_TAU}], got {condition!r}"
            )
        return cond

    def estimate_params(self, u: torch.Tensor, ctx: torch.Tensor,
                        condition: Condition = None) -> MixtureParams:
        """Mixture parameters per pixel, plain (None) or tau-conditioned"""
        cond = self._condition_tensor(condition)
        features = torch.cat([u, ctx], dim=1)
        if cond is None:
            return self.plain_estimator(features)
        return self.conditional_estimator(features, cond)

    def nll_bits(self, r: torch.Tensor, u: torch.Tensor, ctx: torch.Tensor,
                 condition: Condition = None,
                 channel_context: Optional[torch.Tensor] = None) -> torch.Tensor:
        """Code length of `r` in bits, one value per batch element

        Args:
            r: (B, 3, H, W) integer-valued residuals
            u: Features of the lossy reconstruction
            ctx: Context map
            condition: None for the plain model, tau for the conditional one
            channel_context: values the channel-mixing terms see (default r)
        """
        _check_residual_range(r)
        params = self.estimate_params(u, ctx, condition)
        cc = r if channel_context is None else channel_context
        params = autoregress_means(params, cc[:, 0].to(params.means.dtype),
                                   cc[:, 1].to(params.means.dtype))
        target = r.permute(0, 2, 3, 1)
        ll = log_likelihood(target, params.log_weights, params.means, params.scales)
        return -ll.sum(dim=(1, 2, 3)) / LN2

    def bias_correction_loss(self, r: torch.Tensor, r_hat: torch.Tensor,
                             u: torch.Tensor, tau: Condition) -> torch.Tensor:
        """Conditional-model bits of r given quantized context, minus plain bits

        Only the conditional estimator receives gradient.
        """
        if tau is None:
            raise ValueError("bias correction needs tau >= 1")
        u = u.detach()
        ctx_hat = self.extract_context(r_hat).detach()
        corrected = self.nll_bits(r, u, ctx_hat, condition=tau, channel_context=r_hat)
        with torch.no_grad():
            reference = self.nll_bits(r, u, self.extract_context(r))
        return corrected - reference

    def main_loss(self, inputs: TrainingInputs) -> torch.Tensor:
        u = self.extract_feature(inputs.x_tilde)
        ctx = self.extract_context(inputs.residuals)
        return self.nll_bits(inputs.residuals, u, ctx).mean()

    def bias_loss(self, inputs: TrainingInputs) -> torch.Tensor:
        if inputs.quantized is None or inputs.tau is None:
            raise ValueError("bias loss needs quantized residuals and tau")
        u = self.extract_feature(inputs.x_tilde)
        return self.bias_correction_loss(
            inputs.residuals, inputs.quantized, u, inputs.tau
        ).mean()

    def backward(self, selection: LossSelection, inputs: TrainingInputs) -> GradientSet:
        """Gradients of the selected mean loss for every parameter

        Parameters the loss does not reach get zero tensors.
        """
        loss = self.main_loss(inputs) if selection is LossSelection.MAIN else self.bias_loss(inputs)
        names, params = zip(*self.named_parameters())
        grads = torch.autograd.grad(loss, params, allow_unused=True)
        return {
            name: torch.zeros_like(p) if g is None else g
            for name, p, g in zip(names, params, grads)
        }

    def pixel_evaluator(self, condition: Optional[int] = None) -> "PixelEvaluator":
        return PixelEvaluator(self, condition)


class PixelEvaluator:
    """
    Float64 numpy snapshot of the model for pixel-by-pixel coding

    The encoder and the decoder both go through this class, so they compute
    identical distributions for identical inputs.
    """

    def __init__(self, model: ResidualEntropyModel, condition: Optional[int] = None):
        if condition is not None and not 1 <= int(condition) <= MAX_TAU:
            raise ValueError(f"condition must be None or tau in [1, {MAX_TAU}], got {condition}")
        est = model.conditional_estimator if condition is not None else model.plain_estimator
        self.num_mixtures = est.num_mixtures

        def matrix(conv: nn.Conv2d):
            w = conv.weight.detach().to(torch.float64).cpu().numpy()
            return w.reshape(w.shape[0], -1), conv.bias.detach().to(torch.float64).cpu().numpy()

        def modulation(name: str):
            if condition is None:
                return None
            mod = getattr(est, name)
            idx = int(condition) - 1
            return (mod.scale[idx].detach().to(torch.float64).cpu().numpy(),
                    mod.shift[idx].detach().to(torch.float64).cpu().numpy())

        self._layers = {
            "conv1": (matrix(est.conv1), modulation("mod1")),
            "conv2": (matrix(est.conv2), modulation("mod2")),
            "pi": (matrix(est.pi_head), modulation("mod_pi")),
            "mu": (matrix(est.mu_head), modulation("mod_mu")),
            "sigma": (matrix(est.sigma_head), modulation("mod_sigma")),
            "beta": (matrix(est.beta_head), modulation("mod_beta")),
        }

        conv = model.context_conv
        masked = (conv.weight * conv.mask).detach().to(torch.float64).cpu().numpy()
        self._ctx_weight = masked.reshape(masked.shape[0], -1)
        self._ctx_bias = conv.bias.detach().to(torch.float64).cpu().numpy()
        self._half = CONTEXT_KERNEL // 2

    def _apply(self, name: str, h: np.ndarray) -> np.ndarray:
        (w, b), mod = self._layers[name]
        out = w @ h + b
        if mod is not None:
            out = out * mod[0] + mod[1]
        return out

    def context_at(self, padded_plane: np.ndarray, row: int, col: int) -> np.ndarray:
        """Context vector at (row, col)

        Args:
            padded_plane: (3, H + 4, W + 4) residuals decoded so far, zero
                elsewhere, already padded by the kernel half-width
        """
        k = 2 * self._half + 1
        window = padded_plane[:, row:row + k, col:col + k].reshape(-1)
        return self._ctx_weight @ (window * RESIDUAL_SCALE) + self._ctx_bias

    def params(self, feature: np.ndarray, context: np.ndarray) -> MixtureParams:
        """Mixture parameters for one pixel: arrays (3, K) and coeffs (3,)"""
        h = np.concatenate([feature, context])
        h = np.logaddexp(0.0, self._apply("conv1", h))
        h = np.logaddexp(0.0, self._apply("conv2", h))
        k = self.num_mixtures
        logits = self._apply("pi", h).reshape(3, k)
        log_weights = logits - np.logaddexp.reduce(logits, axis=-1, keepdims=True)
        means = self._apply("mu", h).reshape(3, k)
        scales = np.logaddexp(0.0, self._apply("sigma", h).reshape(3, k)) + SIGMA_MIN
        coeffs = self._apply("beta", h)
        return MixtureParams(log_weights, means, scales, coeffs)


def copy_as_float64(model: ResidualEntropyModel) -> ResidualEntropyModel:
    """Detached float64 copy for coding"""
    clone = copy.deepcopy(model).to(torch.float64)
    clone.eval()
    return clone


def image_tensor(data: np.ndarray, dtype: torch.dtype = torch.float64) -> torch.Tensor:
    """(H, W, 3) or (B, H, W, 3) array -> (B, 3, H, W) tensor"""
    arr = np.asarray(data)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)

