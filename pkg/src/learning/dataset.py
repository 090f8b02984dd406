"""
Training patches

Batches are a pure function of (seed, step): each step draws from its own
generator, so an interrupted run resumes onto exactly the same batches.
"""

import logging
from pathlib import Path
from typing import List, Tuple, Union

import numpy as np

from ..imaging import Image, list_images, load_image, random_patch

logger = logging.getLogger(__name__)


def step_rng(seed: int, step: int) -> np.random.Generator:
    return np.random.default_rng([seed, step])


class PatchDataset:
    """Images to draw random square patches from"""

    def __init__(self, images: List[Image], patch_size: int,
                 scale_range: Tuple[float, float] = (0.6, 1.0)):
        usable = [img for img in images if min(img.height, img.width) >= patch_size]
        if len(usable) < len(images):
            logger.warning(
                f"[DATASET] Skipping {len(images) - len(usable)} images smaller than {patch_size}px"
            )
        if not usable:
            raise ValueError(f"dataset has no images of at least {patch_size}x{patch_size}")
        self.images = usable
        self.patch_size = patch_size
        self.scale_range = scale_range

    @classmethod
    def from_directory(cls, directory: Union[str, Path], patch_size: int,
                       scale_range: Tuple[float, float] = (0.6, 1.0)) -> "PatchDataset":
        paths = list_images(directory)
        if not paths:
            raise ValueError(f"dataset directory {directory} contains no .ppm/.png images")
        logger.info(f"[DATASET] Loading {len(paths)} images from {directory}")
        return cls([load_image(p) for p in paths], patch_size, scale_range)

    def __len__(self) -> int:
        return len(self.images)

    def sample(self, rng: np.random.Generator, batch_size: int) -> np.ndarray:
        """(B, P, P, 3) uint8 patches"""
        patches = []
        for _ in range(batch_size):
            img = self.images[int(rng.integers(len(self.images)))]
            patches.append(random_patch(img, self.patch_size, rng, self.scale_range).data)
        return np.stack(patches)
