import math

import numpy as np
import pytest
from hypothesis import settings

from psdecouple.grid import VectorField, make_grid
from psdecouple.media import Constant, SmoothBump, make_lame_field

settings.register_profile("default", max_examples=25, deadline=None)
settings.load_profile("default")


def random_field(grid, seed, components=None, band=None):
    """Complex random field; band=(lo, hi) restricts |index| per axis to [0, hi)."""
    n = grid.dimension if components is None else components
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal((n, *grid.shape)) + 1j * rng.standard_normal((n, *grid.shape))
    if band is not None:
        idx = np.abs(grid.index_range())
        keep = idx < band
        mask = keep
        for _ in range(grid.dimension - 1):
            mask = np.multiply.outer(mask, keep)
        coef = coef * mask
    return VectorField(grid, coef)


@pytest.fixture(scope="session")
def grid64():
    return make_grid(2, 64)


@pytest.fixture(scope="session")
def grid128():
    return make_grid(2, 128)


@pytest.fixture(scope="session")
def bump64(grid64):
    return make_lame_field(grid64, SmoothBump(centers=((math.pi + 0.9, math.pi - 0.6),)))


@pytest.fixture(scope="session")
def bump128(grid128):
    return make_lame_field(grid128, SmoothBump(centers=((math.pi + 0.9, math.pi - 0.6),)))


@pytest.fixture(scope="session")
def const64(grid64):
    return make_lame_field(grid64, Constant(1.0, 1.0))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
