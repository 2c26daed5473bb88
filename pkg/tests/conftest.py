import numpy as np
import pytest

from msmpolicy import DgpConfig, draw


@pytest.fixture(scope="session")
def small_dataset():
    """150-unit draw from the synthetic confounded environment."""
    return draw(DgpConfig(n=150), seed=42).dataset()


@pytest.fixture(scope="session")
def tiny_dataset():
    return draw(DgpConfig(n=60), seed=7).dataset()


def dyadic(rng: np.random.Generator, size, scale: int = 32, span: int = 8):
    """Random dyadic rationals (k/scale, |k| <= span*scale): float-exact sums."""
    return rng.integers(-span * scale, span * scale + 1, size).astype(float) / scale
