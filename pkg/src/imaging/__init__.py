"""
Image handling for NLLC

- Image / PatchSpec: RGB raster and square patch location
- load_image / save_image: binary PPM (P6) and 8-bit RGB PNG
- crop / downscale_bicubic / random_patch: training patch extraction
- mse / psnr / linf / bpsp: distortion and rate metrics
"""

from .image_io import (
    Image,
    PatchSpec,
    load_image,
    save_image,
    crop,
    downscale_bicubic,
    random_patch,
    list_images,
)
from .metrics import mse, psnr, linf, bpsp

__all__ = [
    "Image",
    "PatchSpec",
    "load_image",
    "save_image",
    "crop",
    "downscale_bicubic",
    "random_patch",
    "list_images",
    "mse",
    "psnr",
    "linf",
    "bpsp",
]
