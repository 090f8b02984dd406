"""
Distortion and rate metrics
"""

import math

import numpy as np

from .image_io import Image


def _check_dims(a: Image, b: Image) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(
            f"image dimensions differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )


def mse(a: Image, b: Image) -> float:
    """Mean squared error over all subpixels"""
    _check_dims(a, b)
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    return float(np.mean(diff * diff))


def psnr(a: Image, b: Image) -> float:
    """PSNR in dB with peak 255; math.inf for identical images"""
    err = mse(a, b)
    if err == 0.0:
        return math.inf
    return 10.0 * math.log10(255.0 ** 2 / err)


def linf(a: Image, b: Image) -> int:
    """Largest absolute subpixel difference"""
    _check_dims(a, b)
    return int(np.max(np.abs(a.data.astype(np.int64) - b.data.astype(np.int64))))


def bpsp(num_bits: float, image: Image) -> float:
    """Bits per subpixel"""
    return float(num_bits) / image.num_subpixels
