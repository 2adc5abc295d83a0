import numpy as np
import pytest

from construction import build_lattice
from geometry import CurveParams, lift_points, scale_for
from surfaces import get_surface


def make_family(d=2, N=4, c=4.0, b=2.0, n0=2, power=None, R=None, surface="paraboloid", stride=1):
    params = CurveParams(d=d, c=c, b=b, N=N)
    if R is None:
        R = scale_for(N, c, n0, d if power is None else power, stride)
    return lift_points(get_surface(surface, d), params, R, n0, stride)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def family4():
    return make_family(d=2, N=4)


@pytest.fixture
def lattice4(family4):
    return build_lattice(family4)


@pytest.fixture
def small_R_family():
    """A family at R = 32, small enough for trapezoid line integrals."""
    return make_family(d=2, N=3, c=2.0, b=1.5, R=32.0)
