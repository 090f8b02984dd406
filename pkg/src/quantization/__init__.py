"""
Residual quantization for NLLC

- quantize_residual / reconstruct_pixel: uniform error-bounded quantizer
- quantized_alphabet / quantize_pmf: PMFs over quantized residuals
- Pmf / entropy_bits: discrete distributions and their entropy
"""

from .pmf import Pmf, entropy_bits, RESIDUAL_MIN, RESIDUAL_MAX, RESIDUAL_SUPPORT
from .residual_quantizer import (
    MAX_TAU,
    validate_tau,
    quantize_residual,
    quantized_alphabet,
    quantize_pmf,
    quantize_pmf_batch,
    reconstruct_pixel,
)

__all__ = [
    "Pmf",
    "entropy_bits",
    "RESIDUAL_MIN",
    "RESIDUAL_MAX",
    "RESIDUAL_SUPPORT",
    "MAX_TAU",
    "validate_tau",
    "quantize_residual",
    "quantized_alphabet",
    "quantize_pmf",
    "quantize_pmf_batch",
    "reconstruct_pixel",
]
