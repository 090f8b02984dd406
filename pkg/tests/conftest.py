"""
Shared fixtures for the NLLC test suite
"""

import os
import sys
from pathlib import Path

import numpy as np
import pytest
import torch

# Add repository root so `src` imports as a package
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.entropy import ResidualEntropyModel
from src.imaging import Image
from src.orchestration import NearLosslessCodec


def make_natural_image(height: int, width: int, seed: int = 0) -> Image:
    """Smooth gradients and sinusoids with mild noise, like a small photo crop"""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    planes = []
    for c in range(3):
        gx, gy = rng.uniform(-3.0, 3.0, 2)
        fx, fy = rng.uniform(0.05, 0.35, 2)
        phase = rng.uniform(0, 2 * np.pi)
        base = rng.uniform(70, 180)
        plane = (
            base
            + gx * xx
            + gy * yy
            + 35.0 * np.sin(fx * xx + phase) * np.cos(fy * yy)
            + rng.normal(0.0, 2.0, size=(height, width))
        )
        planes.append(plane)
    data = np.clip(np.rint(np.stack(planes, axis=-1)), 0, 255).astype(np.uint8)
    return Image(data)


def make_noise_image(height: int, width: int, seed: int = 0) -> Image:
    rng = np.random.default_rng(seed)
    return Image(rng.integers(0, 256, size=(height, width, 3)).astype(np.uint8))


@pytest.fixture
def natural_image():
    return make_natural_image


@pytest.fixture
def noise_image():
    return make_noise_image


@pytest.fixture(scope="session")
def small_model() -> ResidualEntropyModel:
    """Seeded untrained float64 model"""
    torch.manual_seed(0)
    return ResidualEntropyModel().to(torch.float64)


@pytest.fixture(scope="session")
def codec(small_model) -> NearLosslessCodec:
    return NearLosslessCodec(small_model)


def pytest_collection_modifyitems(config, items):
    if os.getenv("NLLC_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="desk-scale training check; set NLLC_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
