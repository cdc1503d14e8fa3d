"""Shared fixtures: a small-but-honest problem setup for unit tests."""

import numpy as np
import pytest

from fsilab.grid import make_grid
from fsilab.model import BodyGeometry, Forcing, PhysicalParams


@pytest.fixture
def params():
    return PhysicalParams()


@pytest.fixture
def ellipse():
    return BodyGeometry(kind="ellipse", semi_axes=(0.8, 0.3),
                        com_offset=(0.0, 0.02))


@pytest.fixture
def fat_ellipse():
    """Thicker body so 2h mollifiers fit inside it on coarse test grids."""
    return BodyGeometry(kind="ellipse", semi_axes=(0.8, 0.4))


@pytest.fixture
def small_grid(fat_ellipse):
    return make_grid(4.0, 48, fat_ellipse)


@pytest.fixture
def box_grid():
    """Bodyless grid for pure operator identities."""
    return make_grid(4.0, 48)


@pytest.fixture
def sine_forcing():
    return Forcing(period=2.0 * np.pi, sin_coeffs=[1.0])


def random_pinned(grid, rng, smooth=False):
    """Random admissible velocity: zero on pinned faces."""
    u2 = rng.standard_normal(grid.active_u2.shape)
    u3 = rng.standard_normal(grid.active_u3.shape)
    if smooth:
        import scipy.ndimage
        u2 = scipy.ndimage.gaussian_filter(u2, 2.0)
        u3 = scipy.ndimage.gaussian_filter(u3, 2.0)
    u2[~grid.active_u2] = 0.0
    u3[~grid.active_u3] = 0.0
    return u2, u3
