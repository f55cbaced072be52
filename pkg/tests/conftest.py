import numpy as np
import pytest

from renormlab.green import GreenOperator, green_apply
from renormlab.lattice import build_local_form
from renormlab.measures import SignedMeasure


@pytest.fixture
def p3():
    """Three interior nodes, h = 1: L = tridiag(-1, 2, -1), kappa = (1, 0, 1)."""
    return build_local_form(1, 3, (0.0, 4.0))


@pytest.fixture
def p3_green(p3):
    return GreenOperator(p3)


@pytest.fixture
def dirac_center():
    return SignedMeasure.dirac(3, 1)


@pytest.fixture
def p3_u(p3_green, dirac_center):
    return green_apply(p3_green, dirac_center)


@pytest.fixture(scope="module")
def grid16():
    return build_local_form(2, 16)


def bump_density(form, center=(0.3, 0.6), width=0.15, scale=4.0):
    x = form.space.positions
    return scale * np.exp(-(((x - np.asarray(center)) / width) ** 2).sum(axis=1))
