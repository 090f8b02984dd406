"""
Neural building blocks of the residual entropy model

- FeatureExtractor: 3x3 convolutions over the lossy reconstruction
- MaskedContextConv: 5x5 convolution that only sees earlier pixels
- ConditionalScaleShift: per-tau affine modulation of a layer's channels
- ParameterEstimator: 1x1 convolution trunk producing mixture parameters
"""

from typing import Optional, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .mixture import MixtureParams, NUM_MIXTURES, SIGMA_MIN

FEATURE_CHANNELS = 64
CONTEXT_CHANNELS = 64
CONTEXT_KERNEL = 5
HIDDEN_CHANNELS = 128
NUM_CONDITIONS = 5
RESIDUAL_SCALE = 1.0 / 32.0
INITIAL_SCALE = 3.0

Condition = Optional[Union[int, torch.Tensor]]


class FeatureExtractor(nn.Module):
    """Features u of the lossy reconstruction"""

    def __init__(self, channels: int = FEATURE_CHANNELS):
        super().__init__()
        self.conv1 = nn.Conv2d(3, channels, 3, padding=1)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)

    def forward(self, x_tilde: torch.Tensor) -> torch.Tensor:
        h = x_tilde / 127.5 - 1.0
        return self.conv2(F.softplus(self.conv1(h)))


class MaskedContextConv(nn.Conv2d):
    """
    Type-A masked convolution over residual planes

    Output at (i, j) depends on rows above i and on row i left of j, for all
    three channels. The mask is a buffer so it travels with the weights.
    """

    def __init__(self, in_channels: int = 3, out_channels: int = CONTEXT_CHANNELS,
                 kernel_size: int = CONTEXT_KERNEL):
        super().__init__(in_channels, out_channels, kernel_size, padding=kernel_size // 2)
        mask = torch.ones_like(self.weight)
        centre = kernel_size // 2
        mask[:, :, centre, centre:] = 0
        mask[:, :, centre + 1:] = 0
        self.register_buffer("mask", mask)
        self.apply_mask_()

    @torch.no_grad()
    def apply_mask_(self) -> None:
        self.weight.mul_(self.mask)

    def forward(self, residuals: torch.Tensor) -> torch.Tensor:
        return F.conv2d(
            residuals * RESIDUAL_SCALE, self.weight * self.mask, self.bias, padding=self.padding
        )


class ConditionalScaleShift(nn.Module):
    """h * scale[tau] + shift[tau], identity at initialization"""

    def __init__(self, channels: int, num_conditions: int = NUM_CONDITIONS):
        super().__init__()
        self.scale = nn.Parameter(torch.ones(num_conditions, channels))
        self.shift = nn.Parameter(torch.zeros(num_conditions, channels))

    @torch.no_grad()
    def reset_identity_(self) -> None:
        self.scale.fill_(1.0)
        self.shift.zero_()

    def forward(self, h: torch.Tensor, condition: torch.Tensor) -> torch.Tensor:
        idx = condition - 1
        scale = self.scale[idx]
        shift = self.shift[idx]
        if scale.dim() == 1:
            return h * scale[:, None, None] + shift[:, None, None]
        return h * scale[:, :, None, None] + shift[:, :, None, None]


class ParameterEstimator(nn.Module):
    """Maps concatenated [u, C] to mixture parameters"""

    def __init__(self, conditional: bool = False, in_channels: int = FEATURE_CHANNELS + CONTEXT_CHANNELS,
                 hidden: int = HIDDEN_CHANNELS, num_mixtures: int = NUM_MIXTURES):
        super().__init__()
        self.conditional = conditional
        self.num_mixtures = num_mixtures
        k3 = 3 * num_mixtures
        self.conv1 = nn.Conv2d(in_channels, hidden, 1)
        self.conv2 = nn.Conv2d(hidden, hidden, 1)
        self.pi_head = nn.Conv2d(hidden, k3, 1)
        self.mu_head = nn.Conv2d(hidden, k3, 1)
        self.sigma_head = nn.Conv2d(hidden, k3, 1)
        self.beta_head = nn.Conv2d(hidden, 3, 1)

        if conditional:
            self.mod1 = ConditionalScaleShift(hidden)
            self.mod2 = ConditionalScaleShift(hidden)
            self.mod_pi = ConditionalScaleShift(k3)
            self.mod_mu = ConditionalScaleShift(k3)
            self.mod_sigma = ConditionalScaleShift(k3)
            self.mod_beta = ConditionalScaleShift(3)

        self._init_heads()

    @torch.no_grad()
    def _init_heads(self) -> None:
        k = self.num_mixtures
        # softplus(bias) + SIGMA_MIN starts near INITIAL_SCALE
        self.sigma_head.bias.fill_(float(np.log(np.expm1(INITIAL_SCALE))))
        spread = torch.linspace(-4.0, 4.0, k).repeat(3)
        self.mu_head.bias.copy_(spread)
        for head in (self.pi_head, self.mu_head, self.sigma_head, self.beta_head):
            head.weight.mul_(0.1)
        self.beta_head.bias.zero_()

    def _mod(self, name: str, h: torch.Tensor, condition: Optional[torch.Tensor]) -> torch.Tensor:
        if not self.conditional:
            return h
        return getattr(self, name)(h, condition)

    def forward(self, features: torch.Tensor, condition: Optional[torch.Tensor] = None) -> MixtureParams:
        if self.conditional and condition is None:
            raise ValueError("conditional estimator needs a tau condition")
        h = F.softplus(self._mod("mod1", self.conv1(features), condition))
        h = F.softplus(self._mod("mod2", self.conv2(h), condition))

        b, _, height, width = h.shape
        k = self.num_mixtures

        def mixture_view(t: torch.Tensor) -> torch.Tensor:
            return t.view(b, 3, k, height, width).permute(0, 3, 4, 1, 2)

        logits = mixture_view(self._mod("mod_pi", self.pi_head(h), condition))
        means = mixture_view(self._mod("mod_mu", self.mu_head(h), condition))
        raw_scales = mixture_view(self._mod("mod_sigma", self.sigma_head(h), condition))
        coeffs = self._mod("mod_beta", self.beta_head(h), condition).permute(0, 2, 3, 1)

        return MixtureParams(
            log_weights=torch.log_softmax(logits, dim=-1),
            means=means,
            scales=F.softplus(raw_scales) + SIGMA_MIN,
            coeffs=coeffs,
        )
