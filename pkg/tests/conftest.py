import numpy as np
import pytest

from augloop.image import ImageBuffer


def make_image(width=64, height=48, channels=3, seed=0):
    rng = np.random.default_rng(seed)
    return ImageBuffer(rng.integers(0, 256, size=(height, width, channels), dtype=np.uint8))


def gradient_image(width=32, height=32):
    """Deterministic non-random image for golden fixtures."""
    y, x = np.mgrid[0:height, 0:width]
    r = (x * 255 // max(width - 1, 1)).astype(np.uint8)
    g = (y * 255 // max(height - 1, 1)).astype(np.uint8)
    b = ((x + y) * 255 // max(width + height - 2, 1)).astype(np.uint8)
    return ImageBuffer(np.stack([r, g, b], axis=-1))


@pytest.fixture
def image():
    return make_image()


@pytest.fixture
def query_image():
    return gradient_image()
