"""
transforms.py
-------------
X-ray side of the counterexample.

- line_integral        : X_nu w(z), by trapezoid on the chord or by the
                         resonant pair expansion when the chord is too long
- sup_line_lower_bound : evaluated maximum over candidate lines, refined by
                         coordinate descent (a certified lower bound)
- mixed_norm_bound     : upper bound for int ||P_nu h(lambda)||_q^2 dlambda
- projection_slice_check : both sides of X_nu w(z) = int |F(P_nu h(lambda))(z)|^2
- energy_delta / energy_quadrature : the two routes to E_w(f, f)

Everything at scale 1/R is formed from integer coefficient differences of the
generators, never by subtracting two O(1) positions.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.integrate import trapezoid
from scipy.interpolate import CubicSpline
from scipy.signal import fftconvolve
from scipy.spatial import cKDTree
from scipy.special import j0

from construction import CapSystem, ExpSumWeight, SubsetSumLattice, weight_eval
from geometry import PointFamily
from incidence import Direction, sample_directions, window_pairs
from mollifier import KERNEL_RMAX, SLICE_SMAX, Mollifier
from utils.config import settings
from utils.errors import GeometryError, LatticeError, ResolutionError
from utils.logger import get_logger

logger = get_logger(__name__)

RESONANT_K = 64.0
TRAPEZOID_BUDGET = 20_000_000
SLICE_GRID = 1.0 / 8.0
SLICE_MARGIN = 128.0
PHASE_LIMIT = 2.0 ** 40
_DIRECT_BUDGET = 4_000_000
_ROWS = 256
_GL_NODES = 12
_SIGMA_STEP = 1.0 / 32.0

Method = Literal["auto", "trapezoid", "resonant"]


@dataclass(frozen=True)
class Line:
    direction: Direction
    offset: np.ndarray

    def __post_init__(self):
        offset = np.asarray(self.offset, dtype=float)
        if abs(float(offset @ self.direction.nu)) > 1e-12 * max(1.0, float(np.linalg.norm(offset))):
            raise GeometryError("line offset must be orthogonal to its direction")
        object.__setattr__(self, "offset", offset)

    @classmethod
    def through(cls, point, direction: Direction) -> "Line":
        point = np.asarray(point, dtype=float)
        nu = direction.nu
        return cls(direction, point - (point @ nu) * nu)


def _rounding_slack(values: np.ndarray) -> float:
    return 64.0 * np.finfo(float).eps * float(np.abs(values).max(initial=0.0))


def scaled_uncertainty(generators: np.ndarray, R: float) -> float:
    """Worst error of R <nu, a . (xi - xi0)> for |a_n| <= 2, in units of 1/R."""
    n, d = generators.shape
    return R * 4.0 * (n + d) * np.finfo(float).eps * float(np.abs(generators).sum())


def _perp_basis(nu: np.ndarray) -> np.ndarray:
    return np.linalg.svd(nu[None, :])[2][1:]


def default_step(w: ExpSumWeight) -> float:
    freq = w.max_frequency()
    step = w.R / 64.0
    return min(step, 1.0 / (16.0 * freq)) if freq > 0 else step


def _axial_transform(moll: Mollifier, rho: float, k: np.ndarray, squared: bool) -> np.ndarray:
    """int eta-hat(hypot(rho, u))^{1 or 2} cos(2 pi k u) du, spectrally accurate trapezoid."""
    k = np.asarray(k, dtype=float)
    if rho >= moll.outer:
        return np.zeros_like(k)
    half = math.sqrt(moll.outer ** 2 - rho ** 2)
    kmax = float(np.abs(k).max(initial=1.0))
    n = max(2049, int(16 * kmax * 2 * half) + 1)
    u = np.linspace(-half, half, n)
    g = moll.profile(np.hypot(u, rho))
    if squared:
        g = g * g
    flat = k.ravel()
    out = np.empty_like(flat)
    for start in range(0, flat.size, _ROWS):
        rows = flat[start:start + _ROWS, None]
        out[start:start + _ROWS] = trapezoid(g * np.cos(2.0 * np.pi * rows * u), u, axis=1)
    return out.reshape(k.shape)


def _trapezoid_line(w: ExpSumWeight, line: Line, step: float) -> float:
    nu, z = line.direction.nu, line.offset
    reach = w.support_radius
    znorm = float(np.linalg.norm(z))
    if znorm >= reach or w.centers.shape[0] == 0:
        return 0.0
    half = math.sqrt(reach ** 2 - znorm ** 2)
    n = int(math.ceil(2.0 * half / step)) + 1
    t = np.linspace(-half, half, n)
    return float(trapezoid(weight_eval(w, z[None, :] + t[:, None] * nu[None, :]), t))


def resonant_tail(moll: Mollifier, rho: float, m: int, K: float = RESONANT_K) -> float:
    """Bound on the pair terms a line integral drops: m(m-1) sup_{K <= |k| <= 4K} |G(k)|."""
    if m < 2 or rho >= moll.outer:
        return 0.0
    k = np.linspace(K, 4.0 * K, 97)
    return m * (m - 1) * float(np.abs(_axial_transform(moll, rho, k, squared=True)).max())


def _resonant_line(w: ExpSumWeight, line: Line, K: float = RESONANT_K) -> float:
    """R sum_{q,q'} e^{-2 pi i <z, q-q'>} G(R <nu, q-q'>) over pairs with |R<nu, q-q'>| <= K."""
    if w.coefficients is None or w.generators is None:
        raise ResolutionError("the resonant route needs the lattice coefficients")
    nu, z = line.direction.nu, line.offset
    rho = float(np.linalg.norm(z)) / w.R
    m = w.centers.shape[0]
    if rho >= w.mollifier.outer or m == 0:
        return 0.0
    coef = w.coefficients.astype(float)
    pi = w.generators @ nu
    proj = coef @ pi
    order = np.argsort(proj, kind="stable")
    err = scaled_uncertainty(w.generators, w.R)
    left, right = window_pairs(proj[order], (K + err) / w.R + _rounding_slack(proj))
    if left.size > settings.pair_budget:
        raise ResolutionError(f"{left.size} resonant pairs exceed the pair budget {settings.pair_budget}")
    diff = coef[order[left]] - coef[order[right]]
    k = w.R * (diff @ pi)
    if err > 1.0 / 64.0 and np.any(np.abs(k) <= K + err):
        raise ResolutionError(f"resonant frequencies carry errors of {err:.2g} at R={w.R:.3g}")
    keep = np.abs(k) <= K
    diff, k = diff[keep], k[keep]
    phase = diff @ (w.generators @ z)
    if phase.size and float(np.abs(phase).max()) > PHASE_LIMIT:
        raise ResolutionError("line offset too far out for the pair phases to resolve")
    profile = _axial_transform(w.mollifier, rho, np.concatenate([[0.0], k]), squared=True)
    total = m * profile[0] + 2.0 * float(np.sum(np.cos(2.0 * np.pi * phase) * profile[1:]))
    if logger.isEnabledFor(logging.DEBUG):
        logger.debug("resonant line: %d pairs kept, truncated mass <= %.2g of %.4g", k.size, resonant_tail(w.mollifier, rho, m, K), total)
    return w.R * total


def line_integral(w: ExpSumWeight, line: Line, step: Optional[float] = None, method: Method = "auto") -> float:
    """X_nu w(z): integral of w over the line z + R nu."""
    if method == "resonant":
        return _resonant_line(w, line)
    bound = default_step(w)
    if step is None:
        step = bound
    elif step > bound * (1 + 1e-12):
        raise ResolutionError(f"step {step:.3g} exceeds the resolving step {bound:.3g}")
    nodes = 2.0 * w.support_radius / step
    if method == "auto" and nodes * max(w.centers.shape[0], 1) > TRAPEZOID_BUDGET:
        return _resonant_line(w, line)
    return _trapezoid_line(w, line, step)


def _pair_normals(w: ExpSumWeight, count: int, rng: np.random.Generator) -> np.ndarray:
    """Directions orthogonal to sampled lattice differences q - q'."""
    m, d = w.centers.shape
    if m < 2 or count < 1:
        return np.empty((0, d))

    def differences() -> np.ndarray:
        a, b = rng.integers(0, m, count), rng.integers(0, m, count)
        if w.coefficients is not None:
            return (w.coefficients[a].astype(float) - w.coefficients[b].astype(float)) @ w.generators
        return w.centers[a] - w.centers[b]

    first = differences()
    if d == 2:
        raw = np.stack([-first[:, 1], first[:, 0]], axis=1)
    elif d == 3:
        raw = np.cross(first, differences())
    else:
        stacked = np.stack([first] + [differences() for _ in range(d - 2)], axis=1)
        raw = np.linalg.svd(stacked)[2][:, -1, :]
    norm = np.linalg.norm(raw, axis=1)
    keep = norm > 0
    return raw[keep] / norm[keep, None]


def _safe_value(w: ExpSumWeight, nu: np.ndarray, z: np.ndarray) -> float:
    try:
        direction = Direction.of(nu)
        return line_integral(w, Line.through(z, direction))
    except (ResolutionError, GeometryError):
        return -math.inf


def _refine(w: ExpSumWeight, nu: np.ndarray, z: np.ndarray, value: float, max_evals: int) -> Tuple[float, np.ndarray, np.ndarray]:
    """Coordinate descent on (nu, z); only improvements are accepted."""
    freq = max(w.max_frequency(), 1.0 / w.R)
    angle = min(0.1, 1.0 / (w.R * freq))
    shift = 0.25 / freq
    evals, halvings = 0, 0
    while evals < max_evals and halvings < 8:
        start = value
        for e in _perp_basis(nu):
            moves = []
            if angle > 1e-15:
                moves += [(nu + s * angle * e, z) for s in (1.0, -1.0)]
            moves += [(nu, z + s * shift * e) for s in (1.0, -1.0)]
            for cand_nu, cand_z in moves:
                cand_nu = cand_nu / np.linalg.norm(cand_nu)
                cand_z = cand_z - (cand_z @ cand_nu) * cand_nu
                v = _safe_value(w, cand_nu, cand_z)
                evals += 1
                if v > value:
                    value, nu, z = v, cand_nu, cand_z
        if value - start <= 1e-6 * abs(start):
            angle, shift = angle / 2.0, shift / 2.0
            halvings += 1
    return value, nu, z


def sup_line_lower_bound(
    w: ExpSumWeight,
    budget: int = 256,
    directions: Optional[np.ndarray] = None,
    rng: Optional[np.random.Generator] = None,
    refine_evals: int = 64,
) -> Tuple[float, Line]:
    """Largest evaluated line integral over the candidate family, then refined."""
    if budget < 1:
        raise ValueError(f"line budget must be >= 1, got {budget}")
    rng = rng or np.random.default_rng(settings.seed)
    d = w.d
    eye = np.eye(d)
    if w.centers.shape[0] == 0:
        return 0.0, Line(Direction(eye[0]), np.zeros(d))

    pools = [eye, _pair_normals(w, budget // 2, rng), sample_directions(d, max(1, budget // 4), rng)]
    if directions is not None:
        pools.append(np.atleast_2d(directions))
    candidates = [(nu, np.zeros(d)) for nu in np.vstack(pools)]
    # a few off-origin lines in random directions
    for nu in sample_directions(d, max(1, budget // 8), rng):
        z = _perp_basis(nu).T @ rng.standard_normal(d - 1)
        candidates.append((nu, z / np.linalg.norm(z) * rng.uniform(0.0, 0.5) * w.R))

    best, best_nu, best_z = -math.inf, eye[0], np.zeros(d)
    for nu, z in candidates:
        v = _safe_value(w, nu, z)
        if v > best:
            best, best_nu, best_z = v, nu, z
    logger.debug("sup-line candidates: %d, incumbent %.6g", len(candidates), best)
    best, best_nu, best_z = _refine(w, best_nu, best_z, best, refine_evals)
    direction = Direction.of(best_nu)
    return best, Line.through(best_z, direction)


# --- slices ---

@dataclass(frozen=True)
class SliceFunction:
    """P_nu h(lambda) as a finite sum of mollified point masses on nu-perp."""

    direction: Direction
    lam: float
    R: float
    centers: np.ndarray
    heights: np.ndarray
    mollifier: Mollifier = Mollifier()

    def __call__(self, y) -> np.ndarray:
        y = np.atleast_2d(np.asarray(y, dtype=float))
        eta = self.mollifier.kernel(self.direction.d)
        d = self.direction.d
        out = np.zeros(y.shape[0])
        for c, s in zip(self.centers, self.heights):
            out += self.R ** d * eta(np.hypot(self.R * np.linalg.norm(y - c, axis=1), s))
        return out

    def norm_bound(self, q: float) -> float:
        """Minkowski bound on ||P_nu h(lambda)||_{L^q(nu-perp)}."""
        d = self.direction.d
        table = self.mollifier.slice_norms(d, q)
        return self.R ** (d - (d - 1) / q) * float(np.sum(table(self.heights)))


def slice_function(lattice: SubsetSumLattice, nu, lam: float, R: float, mollifier: Optional[Mollifier] = None) -> SliceFunction:
    direction = nu if isinstance(nu, Direction) else Direction.of(nu)
    v = direction.nu
    proj = lattice.points @ v
    centers = lattice.points - proj[:, None] * v[None, :]
    return SliceFunction(direction, float(lam), float(R), centers, R * (lam - proj), mollifier or Mollifier())


def _sorted_clusters(lattice: SubsetSumLattice, nu: np.ndarray, R: float, gap: float) -> List[np.ndarray]:
    """Groups of lattice points whose scaled projections R<nu, q> lie within `gap` of a neighbour,
    each returned as accurate offsets from its first member."""
    coef = lattice.coefficients().astype(float)
    pi = lattice.generators @ nu
    proj = coef @ pi
    order = np.argsort(proj, kind="stable")
    breaks = np.nonzero(np.diff(proj[order]) > gap / R + _rounding_slack(proj))[0] + 1
    clusters = []
    for idx in np.split(order, breaks):
        clusters.append(R * ((coef[idx] - coef[idx[0]]) @ pi))
    return clusters


def mixed_norm_bound(lattice: SubsetSumLattice, nu, R: float, q: float, mollifier: Optional[Mollifier] = None) -> float:
    """Upper bound for int ||P_nu h(lambda)||_q^2 dlambda.

    Minkowski over the point masses gives R^{d-(d-1)/q} sum_p A_q(R(lambda - <nu,p>));
    in s = R lambda the square integrates on a grid of spacing 1/8 per cluster.
    When the scaled projections are known only to within u > 1/8, a group of n
    masses closer than 2 SMAX + 2u is bounded by n^2 int A_q^2 instead.
    """
    if not 1.0 <= q <= 2.0:
        raise ValueError(f"q must lie in [1, 2], got {q}")
    moll = mollifier or Mollifier()
    v = nu.nu if isinstance(nu, Direction) else np.asarray(nu, dtype=float)
    d = v.shape[0]
    A = moll.slice_norms(d, q)
    u = scaled_uncertainty(lattice.generators, R)
    total = 0.0
    for s in _sorted_clusters(lattice, v, R, 2.0 * SLICE_SMAX + 2.0 * u):
        if u > SLICE_GRID:
            total += _coincident_bound(np.sort(s), A, u)
            continue
        grid = np.arange(s.min() - SLICE_SMAX, s.max() + SLICE_SMAX + SLICE_GRID, SLICE_GRID)
        if s.size * grid.size <= _DIRECT_BUDGET:
            vals = np.zeros_like(grid)
            for start in range(0, s.size, _ROWS):
                vals += A(grid[None, :] - s[start:start + _ROWS, None]).sum(axis=0)
        else:
            # linear deposit onto the grid, then one convolution with the sampled A_q
            pos = (s - grid[0]) / SLICE_GRID
            base = np.floor(pos).astype(np.int64)
            frac = pos - base
            hist = np.bincount(base, 1.0 - frac, minlength=grid.size) + np.bincount(base + 1, frac, minlength=grid.size + 1)[: grid.size]
            half = int(round(SLICE_SMAX / SLICE_GRID))
            kernel = A(SLICE_GRID * np.arange(-half, half + 1))
            vals = fftconvolve(hist[: grid.size], kernel, mode="same")
        total += float(trapezoid(vals ** 2, dx=SLICE_GRID))
    return R ** (2 * d - 2 * (d - 1) / q - 1) * total


def _coincident_bound(s: np.ndarray, A, u: float) -> float:
    s_fine = np.arange(-SLICE_SMAX, SLICE_SMAX + SLICE_GRID / 4.0, SLICE_GRID / 4.0)
    single = float(trapezoid(A(s_fine) ** 2, s_fine))
    breaks = np.nonzero(np.diff(s) > 2.0 * SLICE_SMAX + 2.0 * u)[0] + 1
    sizes = np.diff(np.concatenate([[0], breaks, [s.size]]))
    return single * float(np.sum(sizes.astype(float) ** 2))


def _hyperplane_transform(moll: Mollifier, d: int, rho: float) -> CubicSpline:
    """H(sigma) = int_{nu-perp} eta(sigma nu + v) e^{-2 pi i rho <e, v>} dv from the spatial eta table."""
    eta = moll.kernel(d)
    spline = CubicSpline(eta.grid, eta.values)
    nodes, weights = np.polynomial.legendre.leggauss(_GL_NODES)
    left = np.arange(0.0, KERNEL_RMAX, 1.0)
    v = (left[:, None] + 0.5 * (nodes[None, :] + 1.0)).ravel()
    wts = np.tile(0.5 * weights, left.size)
    if d == 2:
        wts = wts * 2.0 * np.cos(2.0 * np.pi * rho * v)
    else:
        wts = wts * 2.0 * np.pi * v * j0(2.0 * np.pi * rho * v)
    sigma = np.arange(0.0, KERNEL_RMAX + _SIGMA_STEP / 2, _SIGMA_STEP)
    out = np.empty_like(sigma)
    for start in range(0, sigma.size, _ROWS):
        r = np.hypot(sigma[start:start + _ROWS, None], v[None, :])
        out[start:start + _ROWS] = np.where(r <= KERNEL_RMAX, spline(np.minimum(r, KERNEL_RMAX)), 0.0) @ wts
    return CubicSpline(sigma, out)


def _slice_side(points: np.ndarray, nu: np.ndarray, z: np.ndarray, R: float, moll: Mollifier) -> float:
    """R int |sum_p e^{-2 pi i <z,p>} H(k - R<nu,p>)|^2 dk with H built from the spatial kernel."""
    rho = float(np.linalg.norm(z)) / R
    if rho >= moll.outer or points.shape[0] == 0:
        return 0.0
    H = _hyperplane_transform(moll, points.shape[1], rho)
    s = R * (points @ nu)
    phases = np.exp(-2j * np.pi * (points @ z))
    k = np.arange(s.min() - SLICE_MARGIN, s.max() + SLICE_MARGIN + SLICE_GRID, SLICE_GRID)
    amp = np.zeros(k.size, dtype=complex)
    for sp, ph in zip(s, phases):
        sigma = np.abs(k - sp)
        amp += ph * np.where(sigma <= KERNEL_RMAX, H(np.minimum(sigma, KERNEL_RMAX)), 0.0)
    return R * float(trapezoid(np.abs(amp) ** 2, dx=SLICE_GRID))


def projection_slice_check(
    lattice: SubsetSumLattice,
    nu,
    R: float,
    z_samples=8,
    mollifier: Optional[Mollifier] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Max relative gap between the line integral and the slice-side integral over offsets z."""
    moll = mollifier or Mollifier()
    direction = nu if isinstance(nu, Direction) else Direction.of(nu)
    v, d = direction.nu, direction.d
    if d not in (2, 3):
        raise ValueError(f"projection-slice check runs in d = 2 or 3, got {d}")
    if lattice.size > 64:
        raise LatticeError(f"projection-slice check needs |Q| <= 64, got {lattice.size}")
    w = ExpSumWeight.from_lattice(lattice, R, moll)

    if isinstance(z_samples, (int, np.integer)):
        rng = rng or np.random.default_rng(settings.seed)
        basis = _perp_basis(v)
        zs = [np.zeros(d)]
        for _ in range(int(z_samples) - 1):
            dirn = basis.T @ rng.standard_normal(d - 1)
            zs.append(dirn / np.linalg.norm(dirn) * rng.uniform(0.0, 1.5) * R)
    else:
        zs = [np.asarray(z, dtype=float) - (np.asarray(z, dtype=float) @ v) * v for z in np.atleast_2d(z_samples)]

    pairs = []
    for z in zs:
        lhs = line_integral(w, Line(direction, z), method="trapezoid")
        rhs = _slice_side(lattice.points, v, z, R, moll)
        pairs.append((lhs, rhs))
    peak = max(max(abs(a), abs(b)) for a, b in pairs)
    floor = max(1e-8 * peak, 1e-300)
    return max(abs(a - b) / max(abs(a), abs(b), floor) for a, b in pairs)


def xray_samples(w: ExpSumWeight, nus: np.ndarray, offsets: Sequence[float] = (0.0,)) -> List[Dict[str, Any]]:
    """Line integrals at each direction, through offsets along the first perpendicular axis."""
    rows = []
    for i, nu in enumerate(np.atleast_2d(nus)):
        direction = Direction.of(nu)
        e = _perp_basis(direction.nu)[0]
        for off in offsets:
            value = line_integral(w, Line(direction, off * e))
            rows.append({"nu_index": i, "nu_coords": direction.nu.tolist(), "lambda_or_offset": float(off), "value": value})
    return rows


# --- energies ---

@dataclass(frozen=True)
class EnergyResult:
    value: float
    method: Literal["delta-model", "quadrature"]
    error_bound: float = 0.0
    details: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.value < 0:
            raise ValueError(f"energy must be nonnegative, got {self.value}")


class SpatialHash:
    """Uniform grid of cubes of side `cell`; close pairs come from neighbouring cells only."""

    def __init__(self, points: np.ndarray, cell: float):
        self.points = np.atleast_2d(np.asarray(points, dtype=float))
        self.cell = float(cell)
        self.minima = self.points.min(axis=0)
        scaled = (self.points - self.minima) / self.cell
        self.spaces = np.floor(scaled).astype(np.int64)
        frac = scaled - self.spaces
        self.boundary_hits = int(np.count_nonzero(np.minimum(frac, 1.0 - frac).min(axis=1) < 1e-12))
        self.cells: Dict[Tuple[int, ...], List[int]] = {}
        for i, space in enumerate(map(tuple, self.spaces)):
            self.cells.setdefault(space, []).append(i)

    def neighbourhood(self, space: Tuple[int, ...]):
        d = len(space)
        for shift in np.ndindex(*([3] * d)):
            yield tuple(s + o - 1 for s, o in zip(space, shift))

    def close_pairs(self, radius: float):
        if radius > self.cell:
            raise ValueError("pair radius must not exceed the cell size")
        for i, space in enumerate(map(tuple, self.spaces)):
            for other in self.neighbourhood(space):
                for j in self.cells.get(other, ()):
                    if i < j and np.linalg.norm(self.points[i] - self.points[j]) <= radius:
                        yield i, j


def _shifted_multiset(family: PointFamily, lattice: SubsetSumLattice) -> Tuple[np.ndarray, np.ndarray]:
    """Points xi_i + q (generator-major) and their coefficient vectors e_i + c(q)."""
    n, size = family.N, lattice.size
    if n * size > settings.pair_budget:
        raise LatticeError(f"N*|Q| = {n * size} exceeds the budget {settings.pair_budget}")
    coef = lattice.coefficients().astype(np.int8)
    vectors = np.repeat(coef[None, :, :], n, axis=0)
    vectors[np.arange(n), :, np.arange(n)] += 1
    points = family.generators[:, None, :] + lattice.points[None, :, :]
    return points.reshape(n * size, -1), vectors.reshape(n * size, n)


def _sum_sq(labels: np.ndarray) -> int:
    _, counts = np.unique(labels, axis=0, return_counts=True)
    return int(np.sum(counts.astype(np.int64) ** 2))


def _union_find(n: int, pairs) -> np.ndarray:
    parent = np.arange(n)

    def root(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in pairs:
        ri, rj = root(i), root(j)
        if ri != rj:
            parent[max(ri, rj)] = min(ri, rj)
    return np.array([root(i) for i in range(n)])


def energy_delta(family: PointFamily, lattice: SubsetSumLattice) -> EnergyResult:
    """sum_z m(z)^2 over the multiset {xi_i + q}, points within 1/(4R) merged."""
    points, vectors = _shifted_multiset(family, lattice)
    exact = _sum_sq(vectors)
    resolution = 1.0 / (4.0 * family.R)
    details: Dict[str, Any] = {"points": int(points.shape[0]), "exact": exact}
    if resolution > _rounding_slack(points):
        grid = SpatialHash(points, resolution)
        spatial = _sum_sq(_union_find(points.shape[0], grid.close_pairs(resolution))[:, None])
        details.update(spatial=spatial, conflicts=grid.boundary_hits, merge="spatial")
        if spatial != exact:
            logger.warning("spatial merge (%d) disagrees with the coefficient count (%d)", spatial, exact)
        value = spatial
    else:
        logger.warning("positions cannot resolve 1/(4R) at R=%.3g; using the coefficient count", family.R)
        details.update(spatial=None, conflicts=0, merge="coefficient")
        value = exact
    return EnergyResult(float(value), "delta-model", 0.0, details)


def expected_delta_energy(N: int, k: int) -> int:
    """(k+1)(N-k)|Q| + k|Q| when distinct coefficient vectors never merge."""
    size = math.comb(N, k)
    return (k + 1) * (N - k) * size + k * size


def _cap_pair_energy(caps: CapSystem, i: int, j: int, scaled_shift: np.ndarray, kernel) -> np.ndarray:
    """sum_{m,n} w_im w_jn kappa(|u + R off_im - R off_jn|) for each row u of scaled_shift."""
    R = caps.R
    a = R * caps.offsets[i]
    b = R * caps.offsets[j]
    rel = a[:, None, :] - b[None, :, :]
    weights = caps.weights[i][:, None] * caps.weights[j][None, :]
    out = np.empty(scaled_shift.shape[0])
    for start in range(0, scaled_shift.shape[0], 64):
        u = scaled_shift[start:start + 64, None, None, :] + rel[None]
        out[start:start + 64] = np.einsum("mn,bmn->b", weights, kernel(np.linalg.norm(u, axis=-1)))
    return out


def cap_self_energy(caps: CapSystem, mollifier: Optional[Mollifier] = None, i: int = 0) -> float:
    """int int S_i S_i (eta_R * eta_R): the N = 1, |Q| = 1 energy."""
    moll = mollifier or Mollifier()
    kernel = moll.kernel(caps.family.d, squared=True)
    zero = np.zeros((1, caps.family.d))
    return caps.R ** caps.family.d * float(_cap_pair_energy(caps, i, i, zero, kernel)[0])


def calibration(caps: CapSystem, mollifier: Optional[Mollifier] = None) -> float:
    """Factor turning the delta-model count into the quadrature energy."""
    return cap_self_energy(caps, mollifier)


def energy_quadrature(
    family: PointFamily,
    lattice: SubsetSumLattice,
    caps: CapSystem,
    mollifier: Optional[Mollifier] = None,
    near_radius: Optional[float] = None,
) -> EnergyResult:
    """sum_{i,j,q,q'} int int S_i S_j (eta_R * eta_R)(sig - sig' + q - q') with a tail bound.

    Pairs of points xi_i + q farther apart than near_radius (default 10/R) are
    not integrated; each contributes at most R^d env(R r0 - 2) in absolute value.
    """
    moll = mollifier or Mollifier()
    d, R = family.d, family.R
    r0 = 10.0 / R if near_radius is None else near_radius
    kernel = moll.kernel(d, squared=True)
    points, vectors = _shifted_multiset(family, lattice)
    m, size = points.shape[0], lattice.size

    tree = cKDTree(points)
    pairs = tree.query_pairs(r0 + _rounding_slack(points), output_type="ndarray")
    if pairs.shape[0] > settings.pair_budget:
        raise ResolutionError(f"{pairs.shape[0]} near pairs exceed the pair budget {settings.pair_budget}")
    shifts = (vectors[pairs[:, 0]].astype(float) - vectors[pairs[:, 1]].astype(float)) @ family.generators if pairs.size else np.empty((0, d))
    near = np.linalg.norm(shifts, axis=1) <= r0
    pairs, shifts = pairs[near], shifts[near]

    self_terms = np.array([cap_self_energy(caps, moll, i) for i in range(family.N)])
    total = size * float(self_terms.sum())
    cross = 0.0
    cap_of = pairs // size if pairs.size else pairs
    for i in range(family.N):
        for j in range(family.N):
            sel = np.nonzero((cap_of[:, 0] == i) & (cap_of[:, 1] == j))[0] if pairs.size else []
            if len(sel):
                cross += R ** d * float(np.sum(_cap_pair_energy(caps, i, j, R * shifts[sel], kernel)))
    total += 2.0 * cross

    far = m * (m - 1) // 2 - int(pairs.shape[0])
    env = kernel.envelope()
    tail = 2.0 * far * R ** d * float(env(min(max(R * r0 - 2.0, 0.0), env.grid[-1])))
    details = {"near_pairs": int(pairs.shape[0]), "far_pairs": int(far), "self": float(size * self_terms.sum())}
    logger.debug("quadrature energy: %d near pairs, tail bound %.3g", pairs.shape[0], tail)
    return EnergyResult(max(total, 0.0), "quadrature", tail, details)


class UniformityCheck(NamedTuple):
    mass_at_zero: int
    max_mass: int
    ratio: float
    passed: bool


def coincidence_mass(vectors: np.ndarray, shift: np.ndarray) -> int:
    """#{(a, b) : v_a - v_b = shift}: the mass of H in the 1/R-ball at that difference."""
    keys, counts = np.unique(vectors, axis=0, return_counts=True)
    table = {k.tobytes(): int(c) for k, c in zip(keys, counts)}
    shift = shift.astype(vectors.dtype)
    return int(sum(int(c) * table.get((k - shift).tobytes(), 0) for k, c in zip(keys, counts)))


def small_mass_check(
    family: PointFamily,
    lattice: SubsetSumLattice,
    samples: int = 64,
    constant: float = 8.0,
    rng: Optional[np.random.Generator] = None,
) -> UniformityCheck:
    """Mass of H near sampled zeta against the mass at 0, within `constant`."""
    rng = rng or np.random.default_rng(settings.seed)
    _, vectors = _shifted_multiset(family, lattice)
    vectors = vectors.astype(np.int16)
    zero = coincidence_mass(vectors, np.zeros(vectors.shape[1], dtype=np.int16))
    a = rng.integers(0, vectors.shape[0], samples)
    b = rng.integers(0, vectors.shape[0], samples)
    top = max((coincidence_mass(vectors, vectors[i] - vectors[j]) for i, j in zip(a, b)), default=0)
    ratio = top / zero if zero else math.inf
    return UniformityCheck(int(zero), int(top), float(ratio), bool(ratio <= constant))
