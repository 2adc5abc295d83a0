import json
import math

import numpy as np
import pytest
from scipy.spatial.distance import pdist, squareform

from construction import ExpSumWeight, build_caps, build_lattice
from incidence import Direction
from mollifier import Mollifier
from surfaces import get_surface
from tests.conftest import make_family
from transforms import (
    Line,
    SpatialHash,
    calibration,
    coincidence_mass,
    energy_delta,
    energy_quadrature,
    expected_delta_energy,
    line_integral,
    mixed_norm_bound,
    projection_slice_check,
    resonant_tail,
    scaled_uncertainty,
    slice_function,
    small_mass_check,
    sup_line_lower_bound,
    xray_samples,
)
from utils.errors import GeometryError, ResolutionError

NU = Direction.of([0.6, 0.8])


@pytest.fixture
def small_weight(small_R_family):
    return ExpSumWeight.from_lattice(build_lattice(small_R_family), small_R_family.R)


def test_line_offset_must_be_orthogonal():
    with pytest.raises(GeometryError):
        Line(NU, np.array([1.0, 0.0]))
    line = Line.through([3.0, 1.0], NU)
    assert abs(line.offset @ NU.nu) < 1e-12


@pytest.mark.parametrize("offset", [0.0, 5.0, -20.0])
def test_trapezoid_and_resonant_routes_agree(small_weight, offset):
    line = Line(NU, offset * np.array([-0.8, 0.6]))
    trap = line_integral(small_weight, line, method="trapezoid")
    res = line_integral(small_weight, line, method="resonant")
    assert trap > 0
    assert res == pytest.approx(trap, rel=1e-6)


def test_line_integral_refuses_unresolved_steps(small_weight):
    with pytest.raises(ResolutionError):
        line_integral(small_weight, Line(NU, np.zeros(2)), step=small_weight.R)


def test_line_outside_the_support_is_zero(small_weight):
    far = Line(NU, 3.0 * small_weight.support_radius * np.array([-0.8, 0.6]))
    assert line_integral(small_weight, far) == 0.0


def test_resonant_route_needs_coefficients(small_weight):
    bare = ExpSumWeight(small_weight.centers, small_weight.R)
    with pytest.raises(ResolutionError):
        line_integral(bare, Line(NU, np.zeros(2)), method="resonant")


def test_sup_line_lower_bound_beats_the_axes(small_weight, rng):
    best, line = sup_line_lower_bound(small_weight, budget=16, rng=rng, refine_evals=8)
    axis = line_integral(small_weight, Line(Direction(np.array([1.0, 0.0])), np.zeros(2)))
    assert best >= axis
    assert line_integral(small_weight, line) == pytest.approx(best, rel=1e-9)
    with pytest.raises(ValueError):
        sup_line_lower_bound(small_weight, budget=0)


def test_sup_line_of_an_empty_weight():
    empty = ExpSumWeight(np.empty((0, 2)), 32.0)
    assert sup_line_lower_bound(empty)[0] == 0.0


def test_mixed_norm_dominates_line_integrals(small_R_family, small_weight):
    lattice = build_lattice(small_R_family)
    upper = mixed_norm_bound(lattice, NU, small_R_family.R, 1.0)
    for offset in (0.0, 3.0, 11.0):
        value = line_integral(small_weight, Line(NU, offset * np.array([-0.8, 0.6])))
        assert upper >= value * (1 - 1e-3)
    with pytest.raises(ValueError):
        mixed_norm_bound(lattice, NU, small_R_family.R, 3.0)


def test_slice_function_height_matches_projection(small_R_family):
    lattice = build_lattice(small_R_family)
    sl = slice_function(lattice, NU, 0.1, small_R_family.R)
    np.testing.assert_allclose(sl.heights, small_R_family.R * (0.1 - lattice.points @ NU.nu))
    np.testing.assert_allclose(sl.centers @ NU.nu, 0.0, atol=1e-15)
    assert sl.norm_bound(1.0) > 0
    assert np.all(sl(sl.centers) != 0.0)


def test_projection_slice_identity_holds(small_R_family, rng):
    lattice = build_lattice(small_R_family)
    err = projection_slice_check(lattice, NU, small_R_family.R, z_samples=3, rng=rng)
    assert err < 1e-2


def test_projection_slice_identity_in_three_dimensions(rng):
    family = make_family(d=3, N=3, c=2.0, b=1.5, R=32.0)
    err = projection_slice_check(build_lattice(family), Direction.of([0.48, 0.6, 0.64]), family.R, z_samples=3, rng=rng)
    assert err < 1e-2


def test_resonant_truncation_is_negligible():
    moll = Mollifier()
    for rho in (0.0, 0.7, 1.5):
        assert resonant_tail(moll, rho, 64) <= 1e-8 * 64 * moll.line_mass(0.0)
    assert resonant_tail(moll, 0.3, 1) == 0.0


def test_projection_slice_limits(small_R_family):
    with pytest.raises(ValueError):
        projection_slice_check(build_lattice(small_R_family), np.eye(4)[0], 32.0)


def test_xray_samples_rows(small_weight):
    rows = xray_samples(small_weight, np.array([[1.0, 0.0], [0.0, 1.0]]), offsets=(0.0, 4.0))
    assert len(rows) == 4
    assert {r["nu_index"] for r in rows} == {0, 1}
    assert all(r["value"] >= 0 for r in rows)


def test_scaled_uncertainty_is_linear_in_R(family4):
    u = scaled_uncertainty(family4.generators, 1.0)
    assert scaled_uncertainty(family4.generators, 1e6) == pytest.approx(1e6 * u)


@pytest.mark.parametrize("N,expected", [(1, 1), (2, 6)])
def test_delta_energy_small_cases(N, expected):
    family = make_family(d=2, N=N)
    result = energy_delta(family, build_lattice(family))
    assert result.value == expected == expected_delta_energy(N, N // 2)
    assert result.details["merge"] == "spatial"


@pytest.mark.parametrize("d,N", [(2, 4), (2, 6), (3, 4)])
def test_delta_energy_counts_coefficient_vectors(d, N):
    family = make_family(d=d, N=N)
    result = energy_delta(family, build_lattice(family))
    assert result.details["exact"] == result.details["spatial"] == expected_delta_energy(N, N // 2)


@pytest.mark.parametrize("N", [2, 4, 6, 8])
def test_quadrature_energy_tracks_the_delta_model(N):
    family = make_family(d=2, N=N)
    lattice = build_lattice(family)
    caps = build_caps(family, get_surface("paraboloid", 2), quad_order=6)
    quad = energy_quadrature(family, lattice, caps)
    delta = energy_delta(family, lattice).value * calibration(caps)
    assert math.isfinite(quad.error_bound) and quad.error_bound >= 0
    assert 0.5 <= quad.value / delta <= 2.0


def test_small_mass_check(family4, lattice4, rng):
    check = small_mass_check(family4, lattice4, samples=32, rng=rng)
    assert check.passed
    assert check.ratio <= 1.0
    assert check.mass_at_zero == energy_delta(family4, lattice4).details["exact"]
    assert type(check.mass_at_zero) is int and type(check.passed) is bool
    json.dumps(check._asdict())


def test_coincidence_mass_by_hand():
    vectors = np.array([[1, 0], [1, 0], [0, 1]], dtype=np.int16)
    assert coincidence_mass(vectors, np.zeros(2, dtype=np.int16)) == 5
    assert coincidence_mass(vectors, np.array([1, -1], dtype=np.int16)) == 2


def test_spatial_hash_finds_every_close_pair(rng):
    points = rng.uniform(0.0, 1.0, (300, 2))
    grid = SpatialHash(points, 0.05)
    got = sorted(grid.close_pairs(0.05))
    dist = squareform(pdist(points))
    want = [(i, j) for i in range(300) for j in range(i + 1, 300) if dist[i, j] <= 0.05]
    assert got == want
    with pytest.raises(ValueError):
        list(grid.close_pairs(0.1))


def test_mixed_norm_at_unresolved_scale_stays_finite():
    family = make_family(d=2, N=4, R=4.0 ** 28)
    lattice = build_lattice(family)
    assert scaled_uncertainty(family.generators, family.R) > 1.0 / 8.0
    upper = mixed_norm_bound(lattice, np.array([0.0, 1.0]), family.R, 1.0)
    assert math.isfinite(upper) and upper > 0
