import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vgwc_fixture import make_tiny_container  # noqa: E402


@pytest.fixture(scope="session")
def tiny_container():
    """Full tiny container (16 convs + fc6), gray input."""
    return make_tiny_container(seed=7, base=4, input_channels=1)


@pytest.fixture(scope="session")
def pyramid_container():
    """Pyramid-only container (through relu5_1), gray input; no fc6."""
    return make_tiny_container(seed=7, base=4, input_channels=1, stop_after="relu5_1")


@pytest.fixture(scope="session")
def tiny_container_rgb():
    return make_tiny_container(seed=11, base=2, input_channels=3)


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))
