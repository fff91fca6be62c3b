import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from floodrisknet.synthetic import generate_synthetic  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synth150():
    return generate_synthetic(seed=0, m=150, d_bf=52, k_planted=3, separation=4.0)
