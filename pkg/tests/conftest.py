import numpy as np
import pytest

from heatbie.geometry import Domain, circle, discretize_boundary, starfish


@pytest.fixture(scope="session")
def unit_disc():
    return Domain([circle(radius=1.0)], box_half_length=1.5)


@pytest.fixture(scope="session")
def unit_disc_32(unit_disc):
    return discretize_boundary(unit_disc, [32], n_q=16)


@pytest.fixture(scope="session")
def offcenter_disc():
    """The weight-function-study geometry: unit circle at (17/701, 5/439)."""
    return Domain([circle(center=(17.0 / 701.0, 5.0 / 439.0), radius=1.0)],
                  box_half_length=1.5)


@pytest.fixture(scope="session")
def starfish_domain():
    return Domain([starfish(a=1.0, b=0.3, arms=5)], box_half_length=1.8)


@pytest.fixture(scope="session")
def multiply_connected():
    """Outer 10-arm starfish with three 5-arm starfish cavities."""
    return Domain([
        starfish(a=0.85, b=0.085, arms=10),
        starfish(center=(-0.45, 0.3), a=0.15, b=0.05, arms=5, clockwise=True),
        starfish(center=(0.4, 0.35), a=0.15, b=0.05, arms=5, clockwise=True),
        starfish(center=(0.05, -0.45), a=0.15, b=0.05, arms=5, clockwise=True),
    ], box_half_length=1.2)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
