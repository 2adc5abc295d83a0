import math

import numpy as np
import pytest
from hypothesis import given, settings as hsettings
from hypothesis import strategies as st

from construction import (
    ExpSumWeight,
    SubsetSumLattice,
    build_caps,
    build_lattice,
    shifted_membership,
    weight_eval,
)
from surfaces import get_surface
from tests.conftest import make_family
from utils.errors import LatticeError


@pytest.mark.parametrize("N", [1, 2, 5, 8, 11, 16])
def test_lattice_size_is_central_binomial(N):
    lattice = build_lattice(make_family(d=2, N=N, c=2.0, b=1.5))
    assert lattice.k == N // 2
    assert lattice.size == math.comb(N, N // 2)


def test_lattice_points_follow_their_coefficients(lattice4):
    coef = lattice4.coefficients()
    assert coef.shape == (6, 4)
    np.testing.assert_array_equal(coef.sum(axis=1), np.full(6, 2))
    np.testing.assert_allclose(lattice4.points, coef.astype(float) @ lattice4.generators, rtol=1e-15)
    assert len(set(lattice4.bits.tolist())) == lattice4.size


def test_weight_zero_lattice_is_origin(family4):
    lattice = build_lattice(family4, k=0)
    assert lattice.size == 1
    np.testing.assert_array_equal(lattice.points, np.zeros((1, 2)))


def test_lattice_guards(family4):
    with pytest.raises(LatticeError):
        build_lattice(family4, k=5)
    with pytest.raises(LatticeError):
        build_lattice(family4, k=2, cap=5)
    with pytest.raises(LatticeError):
        SubsetSumLattice.from_generators(np.ones((65, 2)), 1)


@pytest.mark.parametrize("N", [2, 4, 6, 10])
def test_shifted_membership_is_half_for_even_N(N):
    lattice = build_lattice(make_family(d=2, N=N, c=2.0, b=1.5))
    for i in range(N):
        count, fraction = shifted_membership(lattice, i)
        assert count == math.comb(N - 1, N // 2)
        assert fraction == 0.5


def test_shifted_membership_index_range(lattice4):
    with pytest.raises(LatticeError):
        shifted_membership(lattice4, 4)


def test_weight_at_origin_is_lattice_size_squared(lattice4):
    w = ExpSumWeight.from_lattice(lattice4, 64.0)
    assert weight_eval(w, np.zeros(2)) == pytest.approx(lattice4.size ** 2, rel=1e-12)


def test_weight_vanishes_outside_the_cutoff(lattice4):
    w = ExpSumWeight.from_lattice(lattice4, 64.0)
    far = np.array([[w.support_radius * 1.01, 0.0], [0.0, -3.0 * w.support_radius]])
    np.testing.assert_array_equal(weight_eval(w, far), [0.0, 0.0])


@hsettings(max_examples=25, deadline=None)
@given(st.lists(st.floats(min_value=-40.0, max_value=40.0), min_size=2, max_size=2))
def test_weight_matches_direct_sum(x):
    lattice = build_lattice(make_family(d=2, N=4))
    w = ExpSumWeight.from_lattice(lattice, 32.0)
    x = np.array(x)
    total = sum(np.exp(-2j * np.pi * x @ q) for q in lattice.points)
    expected = abs(total) ** 2 * w.mollifier.fourier(x, 32.0) ** 2
    assert weight_eval(w, x) == pytest.approx(float(expected), rel=1e-9, abs=1e-12)


def test_max_frequency_is_the_diameter(lattice4):
    w = ExpSumWeight.from_lattice(lattice4, 64.0)
    diffs = lattice4.points[:, None, :] - lattice4.points[None, :, :]
    assert w.max_frequency() == pytest.approx(np.linalg.norm(diffs, axis=-1).max())


@pytest.mark.parametrize("d", [2, 3])
def test_caps_are_unit_mass_and_local(d):
    family = make_family(d=d, N=4)
    caps = build_caps(family, get_surface("paraboloid", d), quad_order=6)
    assert caps.N == 4
    assert caps.l1_norm() == pytest.approx(4.0, rel=1e-12)
    outside = np.linalg.norm(caps.offsets, axis=-1) > 1.0 / family.R * (1 + 1e-12)
    assert np.all(caps.weights[outside] == 0.0)
    assert caps.disjoint()
    # disjoint caps: ||f||_2^2 = sum of 1 / sigma(cap)
    assert caps.l2_norm_sq() == pytest.approx(float(np.sum(1.0 / caps.areas)), rel=1e-12)


def test_cap_area_matches_a_ball_slice():
    family = make_family(d=2, N=3)
    caps = build_caps(family, get_surface("paraboloid", 2), quad_order=16)
    # in d = 2 a cap is an arc of length close to 2/R
    np.testing.assert_allclose(caps.areas * family.R, 2.0, rtol=0.1)


def test_cap_points_lie_on_the_surface_to_second_order():
    family = make_family(d=2, N=3)
    caps = build_caps(family, get_surface("paraboloid", 2))
    for xi, off in zip(family.xis, caps.offsets):
        pts = xi + off
        residual = pts[:, 1] - pts[:, 0] ** 2
        assert np.abs(residual).max() < 1e-9


def test_quad_order_must_be_positive(family4):
    with pytest.raises(ValueError):
        build_caps(family4, get_surface("paraboloid", 2), quad_order=0)
