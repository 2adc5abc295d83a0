"""
incidence.py
------------
Brute-force checks of the incidence conclusions the construction rests on:

- dyadic classes of directional projections and the bad set S_nu
- disjointness of projected boxes U
- plane incidences of the 1/R-balls around the subset-sum lattice
- slab counts K_nu(lambda) and their sup
- separation of the family and distinctness of projected subset sums

`incidence_suite` bundles all of them into one gate report and
`search_parameters` picks the smallest lacunarity base that passes it.
Sampled searches are evidence, the exhaustive plane search is a check.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Dict, FrozenSet, List, Literal, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from langsmith import traceable
from pydantic import BaseModel, Field
from scipy.spatial.distance import pdist

from construction import SubsetSumLattice, build_lattice
from geometry import CurveParams, PointFamily, box_u, lift_points, scale_for
from surfaces import get_surface
from utils.config import settings
from utils.errors import GeometryError, SearchError
from utils.logger import get_logger
from utils.parallel import map_ordered

logger = get_logger(__name__)

TIE_RTOL = 1e-9
HALF_CLASS = 0.5
ZERO_ULPS = 4.0
EXHAUSTIVE_LIMIT = 256
PERTURBATION = 1e-6
_DIR_CHUNK = 1024
_PLANE_CHUNK = 8192

ExhaustiveMode = Union[bool, Literal["auto"]]


@dataclass(frozen=True)
class Direction:
    nu: np.ndarray

    def __post_init__(self):
        nu = np.asarray(self.nu, dtype=float)
        if nu.ndim != 1 or abs(np.linalg.norm(nu) - 1.0) > 1e-12:
            raise GeometryError("direction must be a unit vector")
        object.__setattr__(self, "nu", nu)

    @classmethod
    def of(cls, v) -> "Direction":
        v = np.asarray(v, dtype=float)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            raise GeometryError("zero vector has no direction")
        return cls(v / norm)

    @property
    def d(self) -> int:
        return int(self.nu.shape[0])

    def flipped(self) -> "Direction":
        return Direction(-self.nu)


@dataclass(frozen=True)
class BadSet:
    indices: FrozenSet[int]
    ties: FrozenSet[int]
    classes: Tuple[Optional[int], ...] = ()

    def __len__(self) -> int:
        return len(self.indices)


@dataclass(frozen=True)
class IncidenceProfile:
    direction: Direction
    samples: Dict[float, int]

    @property
    def sup(self) -> int:
        return max(self.samples.values(), default=0)


class Plane(NamedTuple):
    nu: np.ndarray
    offset: float


def _vec(nu) -> np.ndarray:
    return nu.nu if isinstance(nu, Direction) else np.asarray(nu, dtype=float)


def sample_directions(d: int, count: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal((count, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# --- dyadic classes and bad sets ---
#
# Two projections collide when their magnitudes lie within half a class of each
# other, |log_base |p_m| - log_base |p_n|| < 1/2; the smaller index of a
# colliding pair joins S_nu. Floor classes [base^k, base^{k+1}) would split a
# pair with ratio 1.01 across a boundary and merge a pair with ratio 3.9.

def dyadic_index(v: float, base: float) -> Tuple[int, bool]:
    """k with base^k <= v < base^{k+1}, plus a flag for v within 1e-9 of a boundary."""
    if not (v > 0 and math.isfinite(v)):
        raise GeometryError(f"dyadic index needs a positive finite value, got {v}")
    if not base > 1:
        raise GeometryError(f"dyadic base must exceed 1, got {base}")
    k = math.floor(math.log(v) / math.log(base))
    while base ** k > v:
        k -= 1
    while base ** (k + 1) <= v:
        k += 1
    tie = (v - base ** k) <= TIE_RTOL * v or (base ** (k + 1) - v) <= TIE_RTOL * v
    return k, tie


def _zero_floor(generators: np.ndarray) -> np.ndarray:
    """Projections below this are rounding noise and count as exactly zero."""
    d = generators.shape[1]
    return ZERO_ULPS * d * np.finfo(float).eps * np.abs(generators).sum(axis=1)


def _collisions(proj: np.ndarray, generators: np.ndarray, base: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per row of (B, N) projections: bad positions, zero positions and tie pairs (B, N, N)."""
    mags = np.abs(proj)
    zero = mags <= _zero_floor(generators)[None, :]
    levels = np.log(np.where(zero, 1.0, mags)) / math.log(base)
    gap = np.abs(levels[:, :, None] - levels[:, None, :])
    n = proj.shape[1]
    later = np.triu(np.ones((n, n), dtype=bool), k=1)[None]
    live = ~zero[:, :, None] & ~zero[:, None, :] & later
    near = (gap < HALF_CLASS) & live
    ties = (np.abs(gap - HALF_CLASS) <= TIE_RTOL / math.log(base)) & live
    return near.any(axis=2) | zero, zero, ties


def bad_set(family: PointFamily, nu, base: Optional[float] = None) -> BadSet:
    """S_nu over positions 1..N: zero projections, and the smaller index of every colliding pair."""
    if family.N == 0:
        raise GeometryError("bad set of an empty family")
    base = family.base if base is None else base
    gens = family.generators
    proj = gens @ _vec(nu)
    bad, zero, ties = _collisions(proj[None, :], gens, base)
    tied = np.nonzero(ties[0].any(axis=1) | ties[0].any(axis=0))[0]
    classes = tuple(None if z else dyadic_index(abs(float(p)), base)[0] for p, z in zip(proj, zero[0]))
    return BadSet(
        indices=frozenset(int(i) + 1 for i in np.nonzero(bad[0])[0]),
        ties=frozenset(int(i) + 1 for i in tied),
        classes=classes,
    )


def bad_set_sizes(generators: np.ndarray, nus: np.ndarray, base: float) -> Tuple[np.ndarray, np.ndarray]:
    """|S_nu| and a tie flag for each row of `nus`; same rule as bad_set."""
    bad, _, ties = _collisions(np.atleast_2d(nus) @ generators.T, generators, base)
    return bad.sum(axis=1), ties.any(axis=(1, 2))


def box_projection_overlap(n: int, k: int, nu, params: CurveParams) -> bool:
    if n == k:
        raise GeometryError("box projections are compared for n != k only")
    lo_n, hi_n = box_u(n, params).projection(_vec(nu))
    lo_k, hi_k = box_u(k, params).projection(_vec(nu))
    return max(lo_n, lo_k) <= min(hi_n, hi_k)


def box_overlap_set(family: PointFamily, nu) -> FrozenSet[int]:
    """Positions n whose box U_n projects onto the projection of some later U_k."""
    idx = family.indices
    return frozenset(
        i + 1 for i in range(len(idx))
        if any(box_projection_overlap(idx[i], idx[j], nu, family.params) for j in range(i + 1, len(idx)))
    )


def box_overlap_sizes(family: PointFamily, nus: np.ndarray) -> np.ndarray:
    """|box_overlap_set| for each row of `nus`."""
    boxes = [box_u(n, family.params) for n in family.indices]
    centers = np.stack([b.center for b in boxes])
    widths = np.stack([b.halfwidths for b in boxes])
    nus = np.atleast_2d(nus)
    mid = nus @ centers.T
    spread = np.abs(nus) @ widths.T
    lo, hi = mid - spread, mid + spread
    n = centers.shape[0]
    later = np.triu(np.ones((n, n), dtype=bool), k=1)[None]
    meet = (np.maximum(lo[:, :, None], lo[:, None, :]) <= np.minimum(hi[:, :, None], hi[:, None, :])) & later
    return meet.any(axis=2).sum(axis=1)


# --- planes ---

def plane_incidence(centers, radius: float, plane: Plane) -> int:
    if radius <= 0:
        raise ValueError(f"ball radius must be positive, got {radius}")
    centers = np.asarray(centers, dtype=float)
    if centers.size == 0:
        return 0
    nu, offset = plane
    return int(np.count_nonzero(np.abs(np.atleast_2d(centers) @ _vec(nu) - offset) <= radius))


def _normals(tuples: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Unit normals of the hyperplanes through (B, d, d) point tuples, and a validity mask."""
    diffs = tuples[:, 1:, :] - tuples[:, :1, :]
    d = tuples.shape[2]
    if d == 2:
        raw = np.stack([-diffs[:, 0, 1], diffs[:, 0, 0]], axis=1)
        scale = np.linalg.norm(diffs[:, 0], axis=1)
    elif d == 3:
        raw = np.cross(diffs[:, 0], diffs[:, 1])
        scale = np.linalg.norm(diffs[:, 0], axis=1) * np.linalg.norm(diffs[:, 1], axis=1)
    else:
        _, s, vh = np.linalg.svd(diffs)
        raw = vh[:, -1, :] * s[:, -1:]
        scale = s[:, 0] ** (d - 1)
    norm = np.linalg.norm(raw, axis=1)
    valid = norm > 1e-12 * np.where(scale > 0, scale, 1.0)
    normals = np.zeros_like(raw)
    normals[valid] = raw[valid] / norm[valid, None]
    return normals, valid


def hyperplane_through(points) -> Optional[Plane]:
    """The hyperplane through d points, or None when they are degenerate."""
    points = np.asarray(points, dtype=float)
    normals, valid = _normals(points[None])
    if not valid[0]:
        return None
    return Plane(normals[0], float(points[0] @ normals[0]))


def _count_planes(centers: np.ndarray, normals: np.ndarray, offsets: np.ndarray, radius: float) -> np.ndarray:
    return np.count_nonzero(np.abs(centers @ normals.T - offsets[None, :]) <= radius, axis=0)


def use_exhaustive(n_centers: int, mode: ExhaustiveMode = "auto") -> bool:
    if mode == "auto":
        return n_centers <= EXHAUSTIVE_LIMIT
    return bool(mode)


def _tuple_batches(centers: np.ndarray, exhaustive: bool, budget: int, rng: np.random.Generator):
    """Candidate planes as (normals, offsets) batches."""
    m, d = centers.shape
    if exhaustive:
        combos = itertools.combinations(range(m), d)
        while True:
            chunk = np.fromiter(itertools.chain.from_iterable(itertools.islice(combos, _PLANE_CHUNK)), dtype=np.int64)
            if chunk.size == 0:
                return
            tuples = centers[chunk.reshape(-1, d)]
            normals, valid = _normals(tuples)
            yield normals[valid], np.einsum("bi,bi->b", normals[valid], tuples[valid, 0])

    eye = np.eye(d)
    coord = np.repeat(eye, m, axis=0)
    yield coord, np.einsum("bi,bi->b", coord, np.tile(centers, (d, 1)))
    used = d * m

    n_random = max(0, (budget - used) // 2)
    for start in range(0, n_random, _PLANE_CHUNK):
        idx = rng.integers(0, m, size=(min(_PLANE_CHUNK, n_random - start), d))
        distinct = np.all(np.diff(np.sort(idx, axis=1), axis=1) > 0, axis=1)
        tuples = centers[idx[distinct]]
        normals, valid = _normals(tuples)
        yield normals[valid], np.einsum("bi,bi->b", normals[valid], tuples[valid, 0])
    used += n_random

    n_dirs = max(1, (budget - used) // m)
    for start in range(0, n_dirs, max(1, _PLANE_CHUNK // m)):
        nus = sample_directions(d, min(max(1, _PLANE_CHUNK // m), n_dirs - start), rng)
        normals = np.repeat(nus, m, axis=0)
        yield normals, np.einsum("bi,bi->b", normals, np.tile(centers, (nus.shape[0], 1)))


def max_plane_incidence(
    centers,
    radius: float,
    budget: int = 200_000,
    exhaustive: ExhaustiveMode = "auto",
    rng: Optional[np.random.Generator] = None,
) -> Tuple[int, Optional[Plane]]:
    """Largest plane_incidence over the candidate family and a plane attaining it."""
    if budget < 1:
        raise ValueError(f"plane budget must be >= 1, got {budget}")
    if radius <= 0:
        raise ValueError(f"ball radius must be positive, got {radius}")
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    m = centers.shape[0] if centers.size else 0
    if m == 0:
        return 0, None
    d = centers.shape[1]
    if m < d:
        # fewer points than a hyperplane needs: one plane holds them all
        diffs = centers[1:] - centers[:1] if m > 1 else np.zeros((1, d))
        nu = np.linalg.svd(diffs)[2][-1]
        return m, Plane(nu, float(centers[0] @ nu))

    rng = rng or np.random.default_rng(settings.seed)
    best, witness = 0, None
    for normals, offsets in _tuple_batches(centers, use_exhaustive(m, exhaustive), budget, rng):
        if normals.shape[0] == 0:
            continue
        counts = _count_planes(centers, normals, offsets, radius)
        top = int(np.argmax(counts))
        if counts[top] > best:
            best, witness = int(counts[top]), Plane(normals[top].copy(), float(offsets[top]))
    return best, witness


# --- slabs ---

def slab_count(lattice: SubsetSumLattice, nu, lam: float, R: float) -> int:
    if R < 1:
        raise GeometryError(f"R must be >= 1, got {R}")
    proj = lattice.points @ _vec(nu)
    return int(np.count_nonzero(np.abs(proj - lam) <= 1.0 / R))


def sup_slab_count(points: np.ndarray, nu, R: float) -> Tuple[int, float]:
    """sup over lambda of #{p : |<nu, p> - lambda| <= 1/R}, with a maximizing lambda."""
    proj = np.sort(np.atleast_2d(points) @ _vec(nu))
    if proj.size == 0:
        return 0, 0.0
    counts = np.searchsorted(proj, proj + 2.0 / R, side="right") - np.arange(proj.size)
    top = int(np.argmax(counts))
    return int(counts[top]), float(proj[top] + 1.0 / R)


def slab_profile(
    lattice: SubsetSumLattice,
    nu,
    R: float,
    spacing: Optional[float] = None,
    max_samples: int = 1_000_000,
) -> IncidenceProfile:
    """K_nu on a uniform lambda grid when it fits, else at the projected lattice points."""
    proj = lattice.points @ _vec(nu)
    lo, hi = float(proj.min()) - 1.0 / R, float(proj.max()) + 1.0 / R
    if spacing is not None and (hi - lo) / spacing + 1 <= max_samples:
        lams = np.arange(lo, hi + spacing / 2, spacing)
    else:
        lams = np.unique(proj)
    ordered = np.sort(proj)
    counts = np.searchsorted(ordered, lams + 1.0 / R, side="right") - np.searchsorted(ordered, lams - 1.0 / R, side="left")
    direction = nu if isinstance(nu, Direction) else Direction.of(nu)
    return IncidenceProfile(direction, {float(l): int(n) for l, n in zip(lams, counts)})


# --- separation and distinctness ---

def min_separation(family: PointFamily) -> float:
    if family.N < 2:
        return math.inf
    return float(pdist(family.xis).min())


def separation_check(family: PointFamily) -> bool:
    return min_separation(family) > 1.0 / family.R


def window_pairs(sorted_values: np.ndarray, width: float) -> Tuple[np.ndarray, np.ndarray]:
    """All index pairs i < j of a sorted array with values[j] - values[i] <= width."""
    hi = np.searchsorted(sorted_values, sorted_values + width, side="right")
    span = hi - np.arange(sorted_values.size) - 1
    left = np.repeat(np.arange(sorted_values.size), span)
    right = left + 1 + (np.arange(left.size) - np.repeat(np.cumsum(span) - span, span))
    return left, right


def distinctness_violations(lattice: SubsetSumLattice, nu, R: float, bad: BadSet) -> int:
    """Pairs of lattice vectors agreeing on S_nu whose projections lie within 1/R."""
    proj = lattice.points @ _vec(nu)
    order = np.argsort(proj, kind="stable")
    left, right = window_pairs(proj[order], 1.0 / R)
    if left.size == 0:
        return 0
    mask = np.uint64(sum(1 << (i - 1) for i in bad.indices))
    bits = lattice.bits[order]
    agree = ((bits[left] ^ bits[right]) & mask) == 0
    return int(np.count_nonzero(agree))


def adversarial_directions(
    family: PointFamily,
    rng: Optional[np.random.Generator] = None,
    max_tuples: int = 4096,
    perturbation: float = PERTURBATION,
) -> np.ndarray:
    """Axes, normals of hyperplanes through d of {0, generators}, and their 1e-6 perturbations."""
    rng = rng or np.random.default_rng(settings.seed)
    d = family.d
    eye = np.eye(d)
    pts = np.vstack([np.zeros(d), family.generators])
    total = math.comb(pts.shape[0], d)
    if total <= max_tuples:
        combos = np.array(list(itertools.combinations(range(pts.shape[0]), d)), dtype=np.int64).reshape(-1, d)
    else:
        combos = np.sort(np.stack([rng.choice(pts.shape[0], d, replace=False) for _ in range(max_tuples)]), axis=1)
    normals, valid = _normals(pts[combos])
    normals = normals[valid]
    kick = sample_directions(d, normals.shape[0], rng) * perturbation
    nudged = np.vstack([normals + kick, normals - kick])
    nudged /= np.linalg.norm(nudged, axis=1, keepdims=True)
    return np.vstack([eye, -eye, normals, nudged])


# --- the gate ---

class IncidenceReport(BaseModel):
    d: int
    N: int
    c: float
    b: float
    R: float
    directions_tested: int
    separation_ok: bool
    min_separation_R: float = Field(..., description="smallest |xi_m - xi_n| in units of 1/R")
    max_bad_set: int
    bad_set_bound: int
    worst_direction: List[float]
    tie_count: int
    tie_failures: int
    multiset_bound: int = Field(..., description="2^{max |S_nu|}")
    max_plane_count: int
    plane_bound: int
    plane_mode: Literal["exhaustive", "evidence"]
    worst_plane: Optional[List[float]] = Field(None, description="normal followed by offset")
    max_slab_count: int
    slab_direction: List[float]
    distinct_violations: int
    worst_classes: List[Optional[int]] = Field(default_factory=list, description="dyadic class of each projection at the worst direction")
    max_box_overlap_set: int = Field(0, description="largest box-overlap set seen; reported, not gated")
    passed: bool
    failures: List[str] = Field(default_factory=list)


@traceable(run_type="chain", name="incidence-suite")
def incidence_suite(
    family: PointFamily,
    lattice: Optional[SubsetSumLattice] = None,
    n_dirs: int = 10_000,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    exhaustive: ExhaustiveMode = "auto",
    plane_budget: int = 200_000,
    slab_dirs: int = 512,
    base: Optional[float] = None,
    directions: Optional[np.ndarray] = None,
) -> IncidenceReport:
    """Run the gate checks on adversarial, sampled and any extra `directions`."""
    seed = settings.seed if seed is None else seed
    threads = settings.threads if threads is None else threads
    base = family.base if base is None else base
    lattice = lattice or build_lattice(family)
    d, R = family.d, family.R
    dir_seq, tie_seq, plane_seq = np.random.SeedSequence(seed).spawn(3)

    sampled = sample_directions(d, n_dirs, np.random.default_rng(dir_seq))
    blocks = [adversarial_directions(family, np.random.default_rng(dir_seq.spawn(1)[0])), sampled]
    if directions is not None:
        extra = np.atleast_2d(np.asarray(directions, dtype=float))
        blocks.insert(0, extra / np.linalg.norm(extra, axis=1, keepdims=True))
    nus = np.vstack(blocks)
    chunks = [nus[i:i + _DIR_CHUNK] for i in range(0, nus.shape[0], _DIR_CHUNK)]
    gens = family.generators
    parts = map_ordered(lambda ch: bad_set_sizes(gens, ch, base), chunks, threads)
    sizes = np.concatenate([p[0] for p in parts])
    ties = np.concatenate([p[1] for p in parts])

    # tie-flagged directions are judged by their perturbed neighbours
    tie_idx = np.nonzero(ties)[0]
    tie_failures = 0
    if tie_idx.size:
        kick = sample_directions(d, tie_idx.size, np.random.default_rng(tie_seq)) * PERTURBATION
        retest = np.vstack([nus[tie_idx] + kick, nus[tie_idx] - kick])
        retest /= np.linalg.norm(retest, axis=1, keepdims=True)
        re_sizes, _ = bad_set_sizes(gens, retest, base)
        worst_re = np.maximum(re_sizes[: tie_idx.size], re_sizes[tie_idx.size:])
        tie_failures = int(np.count_nonzero(worst_re > d - 1))
        sizes = sizes.copy()
        sizes[tie_idx] = worst_re
        logger.warning("%d tie-flagged directions re-tested at +-%.0e, %d failed", tie_idx.size, PERTURBATION, tie_failures)
    worst = int(np.argmax(sizes))
    max_bad = int(sizes[worst])
    box_sizes = np.concatenate(map_ordered(lambda ch: box_overlap_sizes(family, ch), chunks, threads))

    exhaustive_mode = use_exhaustive(lattice.size, exhaustive)
    plane_count, plane = max_plane_incidence(
        lattice.points, 1.0 / R, plane_budget, exhaustive_mode, np.random.default_rng(plane_seq)
    )

    checked = nus[: min(nus.shape[0], slab_dirs + 2 * d)]
    slab = [sup_slab_count(lattice.points, nu, R)[0] for nu in checked]
    slab_top = int(np.argmax(slab))
    distinct = sum(
        distinctness_violations(lattice, nu, R, bad_set(family, nu, base)) for nu in checked
    )

    sep = min_separation(family)
    plane_bound = 2 ** (d - 1)
    failures = []
    if not sep > 1.0 / R:
        failures.append("separation")
    if max_bad > d - 1:
        failures.append("bad-set")
    if plane_count > plane_bound:
        failures.append("plane-incidence")
    if max(slab) > plane_bound:
        failures.append("slab-count")
    if distinct:
        failures.append("distinctness")

    report = IncidenceReport(
        d=d, N=family.N, c=family.params.c, b=family.params.b, R=R,
        directions_tested=int(nus.shape[0]),
        separation_ok=sep > 1.0 / R,
        min_separation_R=sep * R,
        max_bad_set=max_bad,
        bad_set_bound=d - 1,
        worst_direction=nus[worst].tolist(),
        tie_count=int(tie_idx.size),
        tie_failures=tie_failures,
        multiset_bound=2 ** max_bad,
        max_plane_count=plane_count,
        plane_bound=plane_bound,
        plane_mode="exhaustive" if exhaustive_mode else "evidence",
        worst_plane=None if plane is None else [*plane.nu.tolist(), plane.offset],
        max_slab_count=int(slab[slab_top]),
        slab_direction=checked[slab_top].tolist(),
        distinct_violations=int(distinct),
        worst_classes=list(bad_set(family, nus[worst], base).classes),
        max_box_overlap_set=int(box_sizes.max()),
        passed=not failures,
        failures=failures,
    )
    logger.info(
        "incidence suite d=%d N=%d c=%g: %s (|S| max %d, planes %d, slabs %d)",
        d, family.N, family.params.c, "pass" if report.passed else f"FAIL {failures}",
        max_bad, plane_count, report.max_slab_count,
    )
    return report


def default_box_factor(c: float) -> float:
    return 2.0 if c > 2.0 else math.sqrt(c)


def search_parameters(
    d: int,
    N: int,
    n0: int = 2,
    surface: str = "paraboloid",
    candidates: Sequence[float] = (2.0, 4.0, 8.0, 16.0),
    scale_power: Optional[int] = None,
    stride: int = 1,
    n_dirs: int = 2000,
    seed: Optional[int] = None,
    threads: Optional[int] = None,
) -> Tuple[float, float, IncidenceReport]:
    """Smallest base c (and its b) whose family passes the incidence suite."""
    power = d if scale_power is None else scale_power
    last = None
    for c in sorted(candidates):
        b = default_box_factor(c)
        params = CurveParams(d=d, c=c, b=b, N=N)
        family = lift_points(get_surface(surface, d), params, scale_for(N, c, n0, power, stride), n0, stride)
        report = incidence_suite(family, n_dirs=n_dirs, seed=seed, threads=threads)
        if report.passed:
            logger.info("search: d=%d N=%d settles on c=%g b=%g", d, N, c, b)
            return c, b, report
        logger.debug("search: c=%g rejected (%s)", c, report.failures)
        last = report
    raise SearchError(f"no base in {list(candidates)} passes the incidence suite for d={d}, N={N}: {last.failures if last else []}")
