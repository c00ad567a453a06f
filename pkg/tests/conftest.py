import math

import numpy as np
import pytest

from swarmphase.model import MeasurementModel

TWO_PI = 2 * math.pi


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def nv_model():
    """f_d = 0.85, T2 = 1000 tau."""
    return MeasurementModel(0.85, 1000.0)
