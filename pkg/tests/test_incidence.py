import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings as hsettings
from hypothesis import strategies as st

from construction import SubsetSumLattice, build_lattice
from geometry import CurveParams
from incidence import (
    Direction,
    Plane,
    adversarial_directions,
    bad_set,
    bad_set_sizes,
    default_box_factor,
    box_overlap_set,
    box_overlap_sizes,
    box_projection_overlap,
    dyadic_index,
    hyperplane_through,
    incidence_suite,
    max_plane_incidence,
    plane_incidence,
    sample_directions,
    search_parameters,
    separation_check,
    slab_count,
    slab_profile,
    sup_slab_count,
    window_pairs,
)
from tests.conftest import make_family
from utils.errors import GeometryError, SearchError


def test_direction_must_be_unit():
    with pytest.raises(GeometryError):
        Direction(np.array([1.0, 1.0]))
    with pytest.raises(GeometryError):
        Direction.of(np.zeros(3))
    nu = Direction.of([3.0, 4.0])
    np.testing.assert_allclose(nu.flipped().nu, [-0.6, -0.8])


def test_dyadic_index_examples():
    assert dyadic_index(5.0, 2.0) == (2, False)
    assert dyadic_index(8.0, 2.0) == (3, True)
    assert dyadic_index(0.3, 4.0)[0] == -1
    with pytest.raises(GeometryError):
        dyadic_index(0.0, 2.0)
    with pytest.raises(GeometryError):
        dyadic_index(1.0, 1.0)


@given(st.floats(min_value=1e-12, max_value=1e12), st.sampled_from([1.5, 2.0, 4.0, 16.0]))
def test_dyadic_index_brackets_value(v, base):
    k, _ = dyadic_index(v, base)
    assert base ** k <= v < base ** (k + 1)


@pytest.mark.parametrize("d", [2, 3])
def test_axis_directions_have_empty_bad_sets(d):
    family = make_family(d=d, N=6)
    for axis in range(d):
        assert len(bad_set(family, np.eye(d)[axis])) == 0


def test_zero_projection_enters_the_bad_set():
    family = make_family(d=2, N=5)
    g = family.generators[2]
    nu = np.array([-g[1], g[0]]) / np.linalg.norm(g)
    bad = bad_set(family, nu)
    assert 3 in bad.indices


def test_vectorized_bad_sets_agree(rng):
    family = make_family(d=3, N=8)
    nus = sample_directions(3, 300, rng)
    sizes, _ = bad_set_sizes(family.generators, nus, family.base)
    assert sizes.tolist() == [len(bad_set(family, nu)) for nu in nus]


def test_magnitudes_within_half_a_class_collide():
    gens = np.array([[1.0, 0.0], [1.9, 0.0]])
    sizes, ties = bad_set_sizes(gens, np.array([[1.0, 0.0]]), 4.0)
    assert sizes.tolist() == [1] and not ties[0]
    sizes, _ = bad_set_sizes(np.array([[1.0, 0.0], [2.1, 0.0]]), np.array([[1.0, 0.0]]), 4.0)
    assert sizes.tolist() == [0]
    # a pair straddling a floor boundary still collides
    sizes, _ = bad_set_sizes(np.array([[0.999, 0.0], [1.001, 0.0]]), np.array([[1.0, 0.0]]), 4.0)
    assert sizes.tolist() == [1]


def test_bad_set_reports_classes_and_ties():
    family = make_family(d=2, N=6)
    u = family.generators[2, 0]
    bad = bad_set(family, Direction.of([1.75 * u, -1.0]))
    assert bad.ties == frozenset({3, 4})
    assert len(bad.classes) == 6 and None not in bad.classes


@pytest.mark.parametrize("c", [4.0, 16.0])
def test_planar_bad_sets_hold_one_index(c, rng):
    family = make_family(d=2, N=10, c=c, b=2.0)
    nus = np.vstack([adversarial_directions(family, rng), sample_directions(2, 20_000, rng)])
    sizes, _ = bad_set_sizes(family.generators, nus, family.base)
    assert sizes.max() <= 1


def test_base_two_bad_sets_overflow():
    family = make_family(d=2, N=8, c=2.0, b=math.sqrt(2.0))
    sizes, _ = bad_set_sizes(family.generators, adversarial_directions(family), family.base)
    assert sizes.max() >= 2


def test_box_projections_outside_the_overlap_set_are_disjoint(rng):
    family = make_family(d=2, N=8, c=16.0, b=2.0)
    nus = sample_directions(2, 10_000, rng)
    assert box_overlap_sizes(family, nus).max() <= 1
    assert box_overlap_sizes(family, adversarial_directions(family, rng)).max() <= 1
    for nu in nus[:40]:
        bad = box_overlap_set(family, nu)
        assert len(bad) == box_overlap_sizes(family, nu[None, :])[0]
        good = [n for i, n in enumerate(family.indices, start=1) if i not in bad]
        for n, k in itertools.combinations(good, 2):
            assert not box_projection_overlap(n, k, nu, family.params)


def test_bad_set_ignores_the_sign_of_the_direction(rng):
    family = make_family(d=3, N=8)
    for nu in sample_directions(3, 50, rng):
        assert bad_set(family, nu) == bad_set(family, Direction(nu).flipped())


def test_slab_counts_shrink_with_the_lattice(lattice4, family4, rng):
    half = SubsetSumLattice(lattice4.generators, lattice4.k, lattice4.bits[::2], lattice4.points[::2])
    for nu in sample_directions(2, 20, rng):
        for lam in lattice4.points @ nu:
            assert slab_count(half, nu, lam, family4.R) <= slab_count(lattice4, nu, lam, family4.R)


def test_box_projections_separate_along_the_first_axis():
    params = CurveParams(d=2, c=4.0, b=2.0, N=6)
    e1 = np.array([1.0, 0.0])
    for n, k in itertools.combinations(range(3, 8), 2):
        assert not box_projection_overlap(n, k, e1, params)
    with pytest.raises(GeometryError):
        box_projection_overlap(3, 3, e1, params)


def test_plane_incidence_counts_balls_meeting_the_plane():
    centers = np.array([[0.0, 0.0], [1.0, 0.05], [2.0, -0.2], [3.0, 0.5]])
    plane = Plane(np.array([0.0, 1.0]), 0.0)
    assert plane_incidence(centers, 0.1, plane) == 2
    assert plane_incidence(centers, 0.3, plane) == 3
    with pytest.raises(ValueError):
        plane_incidence(centers, 0.0, plane)


def test_hyperplane_through_points():
    plane = hyperplane_through(np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 1.0], [0.0, 1.0, 1.0]]))
    assert abs(abs(plane.offset) - 1.0) < 1e-12
    assert hyperplane_through(np.array([[0.0, 0.0], [0.0, 0.0]])) is None


def _brute_force_lines(centers, radius):
    best = 0
    for i, j in itertools.combinations(range(len(centers)), 2):
        direction = centers[j] - centers[i]
        normal = np.array([-direction[1], direction[0]]) / np.linalg.norm(direction)
        offset = centers[i] @ normal
        count = sum(abs(p @ normal - offset) <= radius for p in centers)
        best = max(best, count)
    return best


def test_exhaustive_lines_match_brute_force_at_six_points():
    family = make_family(d=2, N=6)
    lattice = build_lattice(family)
    assert lattice.size == 20
    count, plane = max_plane_incidence(lattice.points, 1.0 / family.R, exhaustive=True)
    assert count == _brute_force_lines(lattice.points, 1.0 / family.R)
    assert count <= 2
    assert plane_incidence(lattice.points, 1.0 / family.R, plane) == count


def test_exhaustive_oracle_on_collinear_points():
    centers = np.array([[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [0.0, 3.0], [5.0, 1.0]])
    count, _ = max_plane_incidence(centers, 1e-9, exhaustive=True)
    assert count == 3 == _brute_force_lines(centers, 1e-9)


def test_fewer_points_than_a_plane_needs():
    count, plane = max_plane_incidence(np.array([[0.1, 0.2, 0.3], [0.4, 0.1, 0.0]]), 1e-6)
    assert count == 2
    assert plane_incidence(np.array([[0.1, 0.2, 0.3], [0.4, 0.1, 0.0]]), 1e-6, plane) == 2


def test_sup_slab_count_dominates_every_slab(lattice4, family4, rng):
    nu = sample_directions(2, 1, rng)[0]
    top, _ = sup_slab_count(lattice4.points, nu, family4.R)
    assert 1 <= top <= 2
    proj = lattice4.points @ nu
    for l in proj:
        assert slab_count(lattice4, nu, l, family4.R) <= top


def test_slab_profile_sup(lattice4, family4):
    profile = slab_profile(lattice4, np.array([0.0, 1.0]), family4.R)
    assert 1 <= profile.sup <= sup_slab_count(lattice4.points, np.array([0.0, 1.0]), family4.R)[0]


@pytest.mark.parametrize("d", [2, 3])
@pytest.mark.parametrize("c", [2.0, 4.0])
@pytest.mark.parametrize("N", [4, 8])
def test_families_are_separated(d, c, N):
    assert separation_check(make_family(d=d, N=N, c=c, b=math.sqrt(c) if c <= 2 else 2.0))


@hsettings(max_examples=50)
@given(st.lists(st.floats(min_value=-10, max_value=10), min_size=0, max_size=40), st.floats(min_value=0, max_value=3))
def test_window_pairs_match_double_loop(values, width):
    v = np.sort(np.array(values, dtype=float))
    left, right = window_pairs(v, width)
    got = sorted(zip(left.tolist(), right.tolist()))
    want = [(i, j) for i in range(v.size) for j in range(i + 1, v.size) if v[j] <= v[i] + width]
    assert got == want


def test_adversarial_directions_are_unit(family4):
    nus = adversarial_directions(family4)
    np.testing.assert_allclose(np.linalg.norm(nus, axis=1), 1.0, rtol=1e-12)
    assert nus.shape[0] >= 2 * family4.d


@pytest.mark.parametrize("d", [2, 3])
def test_suite_passes_on_a_lacunary_family(d):
    family = make_family(d=d, N=6)
    report = incidence_suite(family, n_dirs=2000, seed=3)
    assert report.passed, report.failures
    assert report.max_bad_set <= d - 1
    assert report.max_plane_count <= 2 ** (d - 1)
    assert report.plane_mode == "exhaustive"
    assert report.max_box_overlap_set >= 0
    assert len(report.worst_classes) == 6


def test_tied_directions_are_retested():
    family = make_family(d=2, N=6)
    u = family.generators[2, 0]
    report = incidence_suite(family, n_dirs=200, seed=3, directions=[[1.75 * u, -1.0]])
    assert report.tie_count >= 1
    assert report.tie_failures == 0
    assert report.passed, report.failures


def test_suite_is_thread_independent():
    family = make_family(d=3, N=6)
    one = incidence_suite(family, n_dirs=3000, seed=5, threads=1)
    many = incidence_suite(family, n_dirs=3000, seed=5, threads=8)
    assert one.model_dump() == many.model_dump()


def test_colliding_scales_fail_the_suite():
    family = make_family(d=2, N=6, c=1.05, b=math.sqrt(1.05))
    report = incidence_suite(family, n_dirs=500, seed=3)
    assert not report.passed
    assert "separation" in report.failures


def test_linear_scale_tie_fails_plane_incidence():
    # R = c^{N + n0}: the flattest lattice points share a 1/R-slab around x2 = 0
    family = make_family(d=2, N=6, power=1)
    report = incidence_suite(family, n_dirs=500, seed=3)
    assert not report.passed
    assert {"plane-incidence", "slab-count"} & set(report.failures)


def test_search_settles_above_base_two():
    c, b, report = search_parameters(2, 8, n_dirs=500, seed=3)
    assert report.passed
    assert c >= 4.0 and b == default_box_factor(c)


def test_search_gives_up_on_colliding_candidates():
    with pytest.raises(SearchError):
        search_parameters(2, 6, candidates=(1.05,), n_dirs=200)


@pytest.mark.slow
@pytest.mark.parametrize("d", [2, 3])
def test_acceptance_twelve_points(d):
    c, b, report = search_parameters(d, 12, n_dirs=10_000, seed=11)
    assert report.passed
    assert report.directions_tested >= 10_000
    assert report.max_bad_set <= d - 1
    assert report.tie_failures == 0
