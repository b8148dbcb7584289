import numpy as np
import pytest

from landreg import GaussianKernel, LandmarkConfig


def circle(n: int, radius: float = 1.0, center=(0.0, 0.0)) -> LandmarkConfig:
    theta = 2.0 * np.pi * np.arange(n) / n
    pts = np.stack([center[0] + radius * np.cos(theta),
                    center[1] + radius * np.sin(theta)], axis=-1)
    return LandmarkConfig.from_points(pts)


@pytest.fixture
def kernel():
    return GaussianKernel(ell=0.5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
