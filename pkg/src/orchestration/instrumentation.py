"""
Hypothetical residual code lengths

Evaluates the model on whole images at once and sums -log2 of the
(quantized) probability of every coded symbol. IDEAL uses the true residual
as context, which a decoder never has; it exists only as a reference.
"""

import logging
from enum import Enum

import numpy as np
import torch

from ..entropy import (
    ResidualEntropyModel,
    autoregress_means,
    copy_as_float64,
    image_tensor,
    log_pmf_table,
)
from ..imaging import Image
from ..quantization import (
    quantize_pmf_batch,
    quantize_residual,
    quantized_alphabet,
    validate_tau,
)

logger = logging.getLogger(__name__)

PIXELS_PER_CHUNK = 256


class InstrumentMode(Enum):
    IDEAL = "ideal"
    BIASED = "uncorrected"
    CORRECTED = "corrected"

    @property
    def decodable(self) -> bool:
        return self is not InstrumentMode.IDEAL


def estimate_residual_bits(model: ResidualEntropyModel, x: Image, x_tilde: Image,
                           tau: int, mode: InstrumentMode) -> float:
    """Total bits the residual stream of `x` would take under `mode`

    Args:
        model: Entropy model (evaluated in float64)
        x: Original image
        x_tilde: Lossy reconstruction of x
        tau: Error bound
        mode: Probability inference path

    Returns:
        Sum of -log2 p(r^) over all subpixels
    """
    tau = validate_tau(tau)
    if tau == 0 and mode is InstrumentMode.CORRECTED:
        mode = InstrumentMode.BIASED

    r = x.data.astype(np.int64) - x_tilde.data.astype(np.int64)
    r_hat = quantize_residual(r, tau)
    indices = np.searchsorted(quantized_alphabet(tau), r_hat)

    if next(model.parameters()).dtype != torch.float64:
        model = copy_as_float64(model)
    with torch.no_grad():
        u = model.extract_feature(image_tensor(x_tilde.data))
        r_t = image_tensor(r)
        r_hat_t = image_tensor(r_hat)
        if mode is InstrumentMode.IDEAL:
            ctx, cc, condition = model.extract_context(r_t), r_t, None
        elif mode is InstrumentMode.BIASED:
            ctx, cc, condition = model.extract_context(r_hat_t), r_hat_t, None
        else:
            ctx, cc, condition = model.extract_context(r_hat_t), r_hat_t, tau
        params = model.estimate_params(u, ctx, condition)
        params = autoregress_means(params, cc[:, 0], cc[:, 1])

    log_w = params.log_weights[0]
    means = params.means[0]
    scales = params.scales[0]
    height, width = x.height, x.width
    rows_per_chunk = max(1, PIXELS_PER_CHUNK // width)

    total = 0.0
    for start in range(0, height, rows_per_chunk):
        stop = min(height, start + rows_per_chunk)
        with torch.no_grad():
            log_mass = log_pmf_table(log_w[start:stop], means[start:stop], scales[start:stop])
        qmass = quantize_pmf_batch(log_mass.exp().numpy(), tau)
        idx = indices[start:stop][..., None]
        picked = np.take_along_axis(qmass, idx, axis=-1)
        total += float(-np.log2(picked).sum())
    logger.debug(f"[INSTRUMENT] tau={tau} mode={mode.value}: {total:.1f} bits")
    return total
