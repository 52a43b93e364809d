import numpy as np
import pytest

from corrattack.oracle import LinearModel, Mlp2Model


@pytest.fixture(scope="session")
def linear_model():
    return LinearModel.seeded()


@pytest.fixture(scope="session")
def mlp_model():
    return Mlp2Model.seeded()


def seeded_image(seed, shape=(3, 32, 32)):
    """8-bit quantized uniform-noise image, as the dataset generator makes."""
    rng = np.random.default_rng(seed)
    return rng.integers(0, 256, size=shape).astype(np.float64) / 255.0


@pytest.fixture
def image7():
    return seeded_image(7)
