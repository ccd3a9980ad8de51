import numpy as np
import pytest

# Normalized units: with k = 1/4 a temperature of 1 gives 4kT = 1.
K_NORM = 0.25


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
