"""
geometry.py
-----------
Moment-curve primitives and the lacunary point family on a hypersurface.

- moment_curve / axis_scale / phi_project : the curve t -> (t, ..., t^d),
  its rescaling symmetry L_c and the projective map phi, which commute
- box_u : the axis-parallel boxes around x_{c,n} = M_d(c^-n)
- anchor_offsets / lift_points : chart offsets w_n and the lifted family
  xi_n = graph point over w_n, separated at scale 1/R

Points are plain float64 numpy arrays; everything here is a pure function
of its inputs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np

from surfaces import Hypersurface
from utils.errors import GeometryError
from utils.logger import get_logger

logger = get_logger(__name__)

Point = np.ndarray

BOX_RTOL = 1e-12
# d * (n0 + N) * log2(c) beyond this and c^{-dn} leaves double precision
UNDERFLOW_CAP = 900.0


@dataclass(frozen=True)
class CurveParams:
    d: int
    c: float
    b: float
    N: int

    def __post_init__(self):
        if self.d < 2:
            raise GeometryError(f"d must be >= 2, got {self.d}")
        if self.N < 1:
            raise GeometryError(f"N must be >= 1, got {self.N}")
        if not (self.c > self.b > 1.0):
            raise GeometryError(f"need c > b > 1, got c={self.c}, b={self.b}")


@dataclass(frozen=True)
class AxisBox:
    center: Point
    halfwidths: Point

    def __post_init__(self):
        if np.any(np.asarray(self.halfwidths) <= 0):
            raise GeometryError("box halfwidths must be strictly positive")

    def contains(self, x: Point, rtol: float = BOX_RTOL) -> bool:
        x = np.asarray(x, dtype=float)
        slack = rtol * np.maximum.reduce([np.abs(x), np.abs(self.center), self.halfwidths])
        return bool(np.all(np.abs(x - self.center) <= self.halfwidths + slack))

    def scaled(self, c: float) -> "AxisBox":
        return AxisBox(axis_scale(self.center, c), axis_scale(self.halfwidths, c))

    def projection(self, nu: np.ndarray) -> Tuple[float, float]:
        """The interval <nu, box>: center.nu -/+ sum_i halfwidth_i |nu_i|."""
        mid = float(np.dot(self.center, nu))
        spread = float(np.dot(self.halfwidths, np.abs(nu)))
        return mid - spread, mid + spread


@dataclass(frozen=True)
class PointFamily:
    xi0: Point
    xis: np.ndarray
    params: CurveParams
    R: float
    indices: Tuple[int, ...] = field(default=())
    surface: str = "paraboloid"
    stride: int = 1

    @property
    def N(self) -> int:
        return int(self.xis.shape[0])

    @property
    def d(self) -> int:
        return int(self.xis.shape[1])

    @property
    def generators(self) -> np.ndarray:
        """xi_n - xi0, the vectors every estimate is written in."""
        return self.xis - self.xi0

    @property
    def base(self) -> float:
        """Dyadic base c^stride the bad sets are classified in."""
        return self.params.c ** self.stride


def _exponents(d: int) -> np.ndarray:
    return np.arange(1, d + 1, dtype=float)


def moment_curve(t: float, d: int) -> Point:
    if d < 1:
        raise GeometryError(f"d must be >= 1, got {d}")
    return float(t) ** _exponents(d)


def axis_scale(p: Point, c: float) -> Point:
    """L_c: multiply coordinate i by c^{-i}."""
    if c <= 0:
        raise GeometryError(f"scale must be positive, got {c}")
    p = np.asarray(p, dtype=float)
    return p * float(c) ** -_exponents(p.shape[-1])


def phi_project(p: Point) -> Point:
    p = np.asarray(p, dtype=float)
    if p[0] == 0.0:
        raise GeometryError("phi is undefined where the first coordinate vanishes")
    return p[1:] / p[0]


def box_u(n: int, params: CurveParams) -> AxisBox:
    if n < 0:
        raise GeometryError(f"box index must be >= 0, got {n}")
    center = moment_curve(params.c ** -n, params.d)
    halfwidths = moment_curve(params.b * params.c ** -(n + 1), params.d)
    return AxisBox(center, halfwidths)


def anchor_offsets(n: int, params: CurveParams) -> np.ndarray:
    """w_n = (c^-n, c^-3n, c^-4n, ..., c^-dn), a (d-1)-vector."""
    if n < 1:
        raise GeometryError(f"offset index must be >= 1, got {n}")
    powers = np.concatenate([[1.0], np.arange(3, params.d + 1, dtype=float)])
    return params.c ** (-n * powers)


def available_points(c: float, R: float, n0: int) -> int:
    # the small slack keeps R = c**m from flooring to m - 1
    return int(math.floor(math.log(R) / math.log(c) + 1e-9)) - n0


def scale_for(N: int, c: float, n0: int, power: int = 1, stride: int = 1) -> float:
    """R tied to N: R = c^{power * top}, top = n0 + stride * N the last retained index.

    power = d makes 1/R the size of the smallest coordinate c^{-d(N+n0)} of
    the family; with power = 1 most subset sums share a 1/R-slab with the
    tangent plane at xi0 and the plane-incidence bound cannot hold.
    """
    if power < 1:
        raise GeometryError(f"scale power must be >= 1, got {power}")
    if stride < 1:
        raise GeometryError(f"stride must be >= 1, got {stride}")
    return float(c) ** (power * (stride * N + n0))


def lift_points(surface: Hypersurface, params: CurveParams, R: float, n0: int = 2, stride: int = 1) -> PointFamily:
    """Lift w_n onto the graph for n = n0 + stride, n0 + 2 stride, .., n0 + N stride."""
    if surface.d != params.d:
        raise GeometryError(f"surface lives in R^{surface.d}, params ask for d={params.d}")
    if R < 1:
        raise GeometryError(f"R must be >= 1, got {R}")
    if stride < 1:
        raise GeometryError(f"stride must be >= 1, got {stride}")
    available = available_points(params.c, R, n0)
    if available < 1:
        raise GeometryError(f"R={R:g} too small for a point after discarding {n0} indices")
    if params.N * stride > available:
        raise GeometryError(f"R={R:g} supports at most N={available // stride} points at c={params.c}, stride {stride}")
    top = n0 + params.N * stride
    if params.d * top * math.log2(params.c) > UNDERFLOW_CAP:
        raise GeometryError(
            f"d*n*log2(c) = {params.d * top * math.log2(params.c):.0f} exceeds {UNDERFLOW_CAP:.0f}"
        )

    indices = tuple(range(n0 + stride, top + 1, stride))
    omegas = np.stack([anchor_offsets(n, params) for n in indices])
    xis = surface.point(omegas)
    xi0 = surface.point(np.zeros(params.d - 1))
    logger.debug("lifted %d points on %s (c=%g, R=%g)", params.N, surface.name, params.c, R)
    return PointFamily(xi0=xi0, xis=xis, params=params, R=float(R), indices=indices, surface=surface.name, stride=stride)


def in_inflated_boxes(family: PointFamily, inflation: float = 2.0) -> np.ndarray:
    """Per point: does xi_n - xi0 sit in x_{c,n} + Q(M_d(inflation*b*t_{c,n+1}))?"""
    p = family.params
    flags = []
    for n, g in zip(family.indices, family.generators):
        box = AxisBox(moment_curve(p.c ** -n, p.d), moment_curve(inflation * p.b * p.c ** -(n + 1), p.d))
        flags.append(box.contains(g))
    return np.array(flags, dtype=bool)
