import numpy as np
import pytest

from src.components.grid import Grid
from src.components.levy import LevyKernel


@pytest.fixture
def grid32():
    return Grid(n=2, points_per_dim=32)


@pytest.fixture
def grid64():
    return Grid(n=2, points_per_dim=64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def stable_kernel():
    return LevyKernel(alpha=0.5, delta=0.3, profile="stable")


@pytest.fixture
def two_exponent_kernel():
    return LevyKernel(alpha=0.8, delta=0.6, cbar1=1.0, cbar2=1.0, profile="two-exponent")


@pytest.fixture
def nondegenerate_kernels():
    return [
        LevyKernel(alpha=0.5, delta=0.3, profile="stable"),
        LevyKernel(alpha=0.8, delta=0.6, profile="two-exponent"),
        LevyKernel(alpha=1.5, delta=1.2, profile="truncated-stable"),
    ]


