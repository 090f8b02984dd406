"""
Discretized logistic mixtures over the residual alphabet

Bins are unit-wide and centred on the integers; the end bins at -255 and
255 absorb the tails. All probabilities are computed in log space so bins
far from every component mean stay finite.
"""

from dataclasses import dataclass
from typing import Any, Union

import numpy as np
import torch
import torch.nn.functional as F

from ..quantization import Pmf, RESIDUAL_MIN, RESIDUAL_MAX, RESIDUAL_SUPPORT

NUM_MIXTURES = 5
SIGMA_MIN = 1e-3
LN2 = float(np.log(2.0))

Array = Union[np.ndarray, torch.Tensor]


@dataclass
class MixtureParams:
    """Per-pixel mixture parameters, channels last

    log_weights, means, scales: (..., 3, K); coeffs: (..., 3) holding the
    channel-mixing coefficients (beta1, beta2, beta3).
    """
    log_weights: Any
    means: Any
    scales: Any
    coeffs: Any

    @property
    def weights(self) -> Array:
        if isinstance(self.log_weights, torch.Tensor):
            return self.log_weights.exp()
        return np.exp(self.log_weights)

    def channel(self, c: int) -> "MixtureParams":
        """Parameters of channel `c` only: (..., K) arrays, coeffs untouched"""
        return MixtureParams(
            self.log_weights[..., c, :],
            self.means[..., c, :],
            self.scales[..., c, :],
            self.coeffs,
        )


def autoregress_means(p: MixtureParams, r1: Array, r2: Array) -> MixtureParams:
    """Shift channel means by already-known channels

    mu1' = mu1, mu2' = mu2 + b1 r1, mu3' = mu3 + b2 r1 + b3 r2
    """
    stack = torch.stack if isinstance(p.means, torch.Tensor) else np.stack
    b = p.coeffs
    r1 = r1[..., None]
    r2 = r2[..., None]
    m1 = p.means[..., 0, :]
    m2 = p.means[..., 1, :] + b[..., 0:1] * r1
    m3 = p.means[..., 2, :] + b[..., 1:2] * r1 + b[..., 2:3] * r2
    return MixtureParams(p.log_weights, stack([m1, m2, m3], -2), p.scales, p.coeffs)


def _np_logsigmoid(z: np.ndarray) -> np.ndarray:
    return -np.logaddexp(0.0, -z)


def _np_log_bins(x: np.ndarray, means: np.ndarray, scales: np.ndarray) -> np.ndarray:
    centred = x - means
    inv = 1.0 / scales
    a = (centred + 0.5) * inv
    b = (centred - 0.5) * inv
    interior = _np_logsigmoid(a) + _np_logsigmoid(-b) + np.log(-np.expm1(-inv))
    out = np.where(x <= RESIDUAL_MIN, _np_logsigmoid(a), interior)
    return np.where(x >= RESIDUAL_MAX, _np_logsigmoid(-b), out)


def log_bin_probs(x: torch.Tensor, means: torch.Tensor, scales: torch.Tensor) -> torch.Tensor:
    """log P(bin x) for each logistic component (broadcasting)"""
    centred = x - means
    inv = 1.0 / scales
    a = (centred + 0.5) * inv
    b = (centred - 0.5) * inv
    interior = F.logsigmoid(a) + F.logsigmoid(-b) + torch.log(-torch.expm1(-inv))
    out = torch.where(x <= RESIDUAL_MIN, F.logsigmoid(a), interior)
    return torch.where(x >= RESIDUAL_MAX, F.logsigmoid(-b), out)


def log_likelihood(
    x: torch.Tensor, log_weights: torch.Tensor, means: torch.Tensor, scales: torch.Tensor
) -> torch.Tensor:
    """log p(x) under a K-component mixture; x has the shape of means without K"""
    comp = log_bin_probs(x.unsqueeze(-1).to(means.dtype), means, scales)
    return torch.logsumexp(log_weights + comp, dim=-1)


def log_pmf_table(
    log_weights: torch.Tensor, means: torch.Tensor, scales: torch.Tensor
) -> torch.Tensor:
    """log masses over the whole alphabet: (..., K) params -> (..., 511)"""
    grid = torch.as_tensor(RESIDUAL_SUPPORT, dtype=means.dtype, device=means.device)
    comp = log_bin_probs(
        grid[:, None], means.unsqueeze(-2), scales.unsqueeze(-2)
    )
    return torch.logsumexp(log_weights.unsqueeze(-2) + comp, dim=-1)


def discrete_pmf_mass(means: np.ndarray, scales: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Masses over [-255, 255] for one channel's K components (numpy, float64)"""
    means = np.asarray(means, dtype=np.float64)
    scales = np.asarray(scales, dtype=np.float64)
    log_w = np.log(np.asarray(weights, dtype=np.float64))
    grid = RESIDUAL_SUPPORT.astype(np.float64)[:, None]
    comp = _np_log_bins(grid, means[None, :], scales[None, :])
    log_mass = np.logaddexp.reduce(log_w[None, :] + comp, axis=-1)
    return np.exp(log_mass)


def discrete_pmf(means: np.ndarray, scales: np.ndarray, weights: np.ndarray) -> Pmf:
    """Pmf over [-255, 255] for one channel's mixture

    Args:
        means: (K,) autoregressed component means
        scales: (K,) component scales, >= SIGMA_MIN
        weights: (K,) mixture weights on the simplex
    """
    return Pmf.residual(discrete_pmf_mass(means, scales, weights))
