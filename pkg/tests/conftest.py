import numpy as np
import pytest

from mgsmooth.problems import ProblemSpec


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


@pytest.fixture(scope="session")
def a_rot7():
    """Small rotated operator used by many structural tests."""
    return ProblemSpec("rotated", 7, angle=np.pi / 6, anisotropy=100.0).assemble()


@pytest.fixture(scope="session")
def a_rot16():
    return ProblemSpec("rotated", 16, angle=0.0, anisotropy=100.0).assemble()
