import numpy as np
import pytest

from gaborjet import BankParams, GrayImage, build_bank


@pytest.fixture(scope="session")
def default_bank():
    return build_bank(BankParams())


@pytest.fixture(scope="session")
def small_bank():
    # 2 scales x 3 orientations keeps unit tests fast; radii are 10 and 15,
    # the same as the full bank's first two scales.
    return build_bank(BankParams(num_scales=2, num_orientations=3))


def rand_image(rng, height, width, low=0.0, high=255.0):
    return GrayImage(rng.uniform(low, high, (height, width)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
