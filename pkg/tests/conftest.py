import numpy as np
import pytest

from rdsjumps import constjump, genetoggle, linear1d


@pytest.fixture
def lin():
    return linear1d()


@pytest.fixture
def toggle():
    return genetoggle()


@pytest.fixture
def const():
    return constjump(0.7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
