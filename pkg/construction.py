"""
construction.py
---------------
The objects the counterexample is assembled from:

- SubsetSumLattice : all weight-k subset sums of the generators xi_n - xi0,
                     each tagged with its coefficient bit-vector
- ExpSumWeight     : w(x) = |eta-hat(x/R)|^2 |sum_q e^{-2 pi i <x, q>}|^2,
                     evaluated on demand, never gridded
- CapSystem        : unit-mass measures S_i on the 1/R-caps around xi_i,
                     discretized by a product Gauss-Legendre rule in a local
                     second-order chart
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.spatial.distance import pdist

from geometry import PointFamily
from mollifier import Mollifier
from surfaces import Hypersurface
from utils.config import settings
from utils.errors import GeometryError, LatticeError
from utils.logger import get_logger

logger = get_logger(__name__)

MAX_GENERATORS = 64
_EVAL_CHUNK = 1 << 22


@dataclass(frozen=True)
class SubsetSumLattice:
    generators: np.ndarray
    k: int
    bits: np.ndarray
    points: np.ndarray

    @property
    def N(self) -> int:
        return int(self.generators.shape[0])

    @property
    def size(self) -> int:
        return int(self.bits.shape[0])

    def coefficients(self) -> np.ndarray:
        """(|Q|, N) 0/1 matrix of coefficient vectors."""
        shifts = np.arange(self.N, dtype=np.uint64)
        return ((self.bits[:, None] >> shifts) & np.uint64(1)).astype(np.uint8)

    @classmethod
    def from_generators(cls, generators: np.ndarray, k: int, cap: Optional[int] = None) -> "SubsetSumLattice":
        generators = np.atleast_2d(np.asarray(generators, dtype=float))
        n_gen, d = generators.shape
        cap = settings.lattice_cap if cap is None else cap
        if n_gen > MAX_GENERATORS:
            raise LatticeError(f"bit-vectors hold at most {MAX_GENERATORS} generators, got {n_gen}")
        if not 0 <= k <= n_gen:
            raise LatticeError(f"Hamming weight must lie in [0, {n_gen}], got {k}")
        size = math.comb(n_gen, k)
        if size > cap:
            raise LatticeError(f"|Q| = C({n_gen},{k}) = {size} exceeds the cap {cap}")

        if k == 0:
            return cls(generators, 0, np.zeros(1, dtype=np.uint64), np.zeros((1, d)))
        combos = np.fromiter(
            itertools.chain.from_iterable(itertools.combinations(range(n_gen), k)),
            dtype=np.int64,
            count=size * k,
        ).reshape(size, k)
        bits = np.bitwise_or.reduce(np.left_shift(np.uint64(1), combos.astype(np.uint64)), axis=1)
        points = generators[combos].sum(axis=1)
        return cls(generators, k, bits, points)


def build_lattice(family: PointFamily, k: Optional[int] = None, cap: Optional[int] = None) -> SubsetSumLattice:
    """Q from the family's generators; k defaults to floor(N/2)."""
    k = family.N // 2 if k is None else k
    lattice = SubsetSumLattice.from_generators(family.generators, k, cap)
    logger.debug("lattice N=%d k=%d |Q|=%d", lattice.N, k, lattice.size)
    return lattice


def shifted_membership(lattice: SubsetSumLattice, i: int) -> Tuple[int, float]:
    """Elements with c_i = 0 (0-based i); xi_i + q then lands in the weight-(k+1) lattice."""
    if not 0 <= i < lattice.N:
        raise LatticeError(f"generator index {i} outside [0, {lattice.N})")
    count = int(np.count_nonzero(((lattice.bits >> np.uint64(i)) & np.uint64(1)) == 0))
    return count, count / lattice.size


@dataclass(frozen=True)
class ExpSumWeight:
    """Centers are the lattice points; coefficients and generators, when kept,
    let scale-1/R differences be formed from integer combinations."""

    centers: np.ndarray
    R: float
    mollifier: Mollifier = Mollifier()
    coefficients: Optional[np.ndarray] = None
    generators: Optional[np.ndarray] = None

    @classmethod
    def from_lattice(cls, lattice: SubsetSumLattice, R: float, mollifier: Optional[Mollifier] = None) -> "ExpSumWeight":
        return cls(lattice.points, float(R), mollifier or Mollifier(), lattice.coefficients(), lattice.generators)

    @property
    def d(self) -> int:
        return int(self.centers.shape[1])

    @property
    def support_radius(self) -> float:
        return self.mollifier.C * self.R

    def max_frequency(self) -> float:
        """max |q - q'|; a diameter bound beyond a few thousand centers."""
        m = self.centers.shape[0]
        if m < 2:
            return 0.0
        if m <= 4096:
            return float(pdist(self.centers).max())
        centroid = self.centers.mean(axis=0)
        return 2.0 * float(np.linalg.norm(self.centers - centroid, axis=1).max())


def weight_eval(w: ExpSumWeight, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.atleast_2d(x)
    env = w.mollifier.fourier(pts, w.R) ** 2
    out = np.zeros(pts.shape[0])
    live = np.nonzero(env > 0)[0]
    m = max(w.centers.shape[0], 1)
    step = max(1, _EVAL_CHUNK // m)
    for start in range(0, live.size, step):
        idx = live[start:start + step]
        phase = pts[idx] @ w.centers.T
        total = np.exp(-2j * np.pi * phase).sum(axis=1)
        out[idx] = (total.real ** 2 + total.imag ** 2) * env[idx]
    return out[0] if single else out


@dataclass(frozen=True)
class CapSystem:
    family: PointFamily
    R: float
    offsets: np.ndarray
    weights: np.ndarray
    areas: np.ndarray

    @property
    def N(self) -> int:
        return int(self.areas.shape[0])

    def l1_norm(self) -> float:
        return float(self.weights.sum())

    def min_separation(self) -> float:
        if self.N < 2:
            return math.inf
        return float(pdist(self.family.generators).min())

    def disjoint(self) -> bool:
        return self.min_separation() > 2.0 / self.R

    def l2_norm_sq(self) -> float:
        """||f||_2^2 for f = sum_i 1_{cap_i} / sigma(cap_i), overlaps included."""
        gens = self.family.generators
        raw = self.weights * self.areas[:, None]
        total = float(np.sum(1.0 / self.areas))
        radius = 1.0 / self.R
        for i, j in itertools.permutations(range(self.N), 2):
            shift = gens[i] - gens[j]
            if np.linalg.norm(shift) > 2.0 * radius:
                continue
            inside = np.linalg.norm(shift + self.offsets[i], axis=1) <= radius
            overlap = float(raw[i][inside].sum())
            total += overlap / (self.areas[i] * self.areas[j])
        return total


def build_caps(family: PointFamily, surface: Hypersurface, quad_order: int = 8) -> CapSystem:
    if quad_order < 1:
        raise ValueError(f"quadrature order must be >= 1, got {quad_order}")
    d, R = family.d, family.R
    h = 1.0 / R
    nodes_1d, weights_1d = np.polynomial.legendre.leggauss(quad_order)
    grid = np.stack(np.meshgrid(*([nodes_1d] * (d - 1)), indexing="ij"), axis=-1).reshape(-1, d - 1) * h
    gw = np.prod(np.stack(np.meshgrid(*([weights_1d] * (d - 1)), indexing="ij"), axis=-1).reshape(-1, d - 1), axis=1)
    gw = gw * h ** (d - 1)

    offsets, weights, areas = [], [], []
    for xi in family.xis:
        omega = np.delete(xi, 1)
        if np.linalg.norm(omega) + h * math.sqrt(d - 1) > surface.domain_radius:
            raise GeometryError("cap leaves the surface chart domain")
        grad = surface.gradient(omega)
        hess = surface.hessian(omega)
        # second-order chart around xi: the cap is never formed as xi + 1/R-sized sums
        rise = grid @ grad + 0.5 * np.einsum("mi,ij,mj->m", grid, hess, grid)
        off = surface.embed(grid, rise)
        jac = np.sqrt(1.0 + np.sum((grad + grid @ hess) ** 2, axis=1))
        raw = gw * jac * (np.linalg.norm(off, axis=1) <= h)
        area = float(raw.sum())
        if area <= 0.0:
            raise GeometryError("cap quadrature caught no nodes; raise quad_order")
        offsets.append(off)
        weights.append(raw / area)
        areas.append(area)

    caps = CapSystem(family, R, np.stack(offsets), np.stack(weights), np.array(areas))
    if not caps.disjoint():
        logger.warning("caps of radius 1/R overlap (min separation %.3g R^-1)", caps.min_separation() * R)
    return caps
