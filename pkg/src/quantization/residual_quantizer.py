"""
Uniform error-bounded residual quantizer

A residual r is mapped to the centre of its width-(2*tau+1) bin, so the
reconstruction error never exceeds tau. Fine-grained PMFs over [-255, 255]
are turned into PMFs over the quantized alphabet by summing each bin.
"""

from functools import lru_cache
from typing import Tuple, Union

import numpy as np

from .pmf import Pmf, RESIDUAL_MIN, RESIDUAL_MAX, RESIDUAL_SUPPORT

MAX_TAU = 5

ArrayOrInt = Union[int, np.ndarray]


def validate_tau(tau: int) -> int:
    if isinstance(tau, bool) or int(tau) != tau or not (0 <= int(tau) <= MAX_TAU):
        raise ValueError(f"tau must be an integer in [0, {MAX_TAU}], got {tau!r}")
    return int(tau)


def quantize_residual(r: ArrayOrInt, tau: int) -> ArrayOrInt:
    """sgn(r) * (2tau+1) * floor((|r| + tau) / (2tau+1))"""
    tau = validate_tau(tau)
    step = 2 * tau + 1
    arr = np.asarray(r, dtype=np.int64)
    q = np.sign(arr) * step * ((np.abs(arr) + tau) // step)
    if np.ndim(r) == 0:
        return int(q)
    return q


@lru_cache(maxsize=None)
def _alphabet(tau: int) -> Tuple[int, ...]:
    return tuple(int(v) for v in np.unique(quantize_residual(RESIDUAL_SUPPORT, tau)))


def quantized_alphabet(tau: int) -> np.ndarray:
    """Ascending image of [-255, 255] under quantize_residual"""
    return np.array(_alphabet(validate_tau(tau)), dtype=np.int64)


@lru_cache(maxsize=None)
def _bin_starts(tau: int) -> np.ndarray:
    # bins are contiguous and ordered, so each starts where the quantized value changes
    q = quantize_residual(RESIDUAL_SUPPORT, tau)
    starts = np.flatnonzero(np.concatenate(([True], np.diff(q) != 0)))
    starts.setflags(write=False)
    return starts


def quantize_pmf_batch(mass: np.ndarray, tau: int) -> np.ndarray:
    """Quantize PMFs stored along the last axis (length 511)"""
    tau = validate_tau(tau)
    mass = np.asarray(mass, dtype=np.float64)
    if mass.shape[-1] != RESIDUAL_SUPPORT.size:
        raise ValueError(
            f"PMF must cover [{RESIDUAL_MIN}, {RESIDUAL_MAX}] "
            f"({RESIDUAL_SUPPORT.size} values), got {mass.shape[-1]}"
        )
    if tau == 0:
        return mass.copy()
    return np.add.reduceat(mass, _bin_starts(tau), axis=-1)


def quantize_pmf(p: Pmf, tau: int) -> Pmf:
    """Sum a residual PMF over each quantization bin

    Args:
        p: PMF with support exactly [-255, 255]
        tau: Error bound

    Returns:
        PMF over quantized_alphabet(tau)
    """
    if p.symbols.size != RESIDUAL_SUPPORT.size or not np.array_equal(p.symbols, RESIDUAL_SUPPORT):
        raise ValueError(f"quantize_pmf needs support [{RESIDUAL_MIN}, {RESIDUAL_MAX}]")
    return Pmf(quantized_alphabet(tau), quantize_pmf_batch(p.mass, tau))


def reconstruct_pixel(x_tilde: ArrayOrInt, r_hat: ArrayOrInt) -> ArrayOrInt:
    """clamp(x_tilde + r_hat, 0, 255)"""
    out = np.clip(np.asarray(x_tilde, dtype=np.int64) + np.asarray(r_hat, dtype=np.int64), 0, 255)
    if np.ndim(out) == 0:
        return int(out)
    return out
