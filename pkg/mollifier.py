"""
mollifier.py
------------
The radial smooth cutoff eta-hat with 1_{B(1/C)} <= eta-hat <= 1_{B(C)}, and
the one-dimensional reference tables every later integral is read from:

- physical kernels eta and eta*eta (radial inverse Fourier transforms)
- slice norms A_q(s) = || eta(s nu + .) ||_{L^q(nu-perp)}
- decay envelopes (running sup of |kernel| beyond a radius)

Tables are built once per (C, d, ...) and memoized; each carries a sha256 of
its values so a stale on-disk record is noticed.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import gamma, jv

from utils.config import settings
from utils.logger import get_logger

logger = get_logger(__name__)

KERNEL_RMAX = 96.0
KERNEL_STEP = 1.0 / 64.0
SLICE_SMAX = 64.0
SLICE_STEP = 1.0 / 32.0
RADIAL_NODES = 4097
_ROW_CHUNK = 256


def _smooth_step(u: np.ndarray) -> np.ndarray:
    """C-infinity step: 0 for u <= 0, 1 for u >= 1."""
    u = np.asarray(u, dtype=float)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        left = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
        right = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1.0 - u, 1.0)), 0.0)
    return left / (left + right)


def sphere_area(k: int) -> float:
    """|S^{k-1}|, the area of the unit sphere in R^k (|S^0| = 2)."""
    return 2.0 * math.pi ** (k / 2.0) / math.gamma(k / 2.0)


@dataclass(frozen=True)
class ReferenceTable:
    grid: np.ndarray
    values: np.ndarray
    checksum: str

    def __call__(self, x) -> np.ndarray:
        x = np.abs(np.asarray(x, dtype=float))
        return np.interp(x, self.grid, self.values, right=0.0)

    def envelope(self) -> "ReferenceTable":
        """sup_{s' >= s} |values(s')|, nonincreasing."""
        env = np.maximum.accumulate(np.abs(self.values)[::-1])[::-1]
        return _table(self.grid, env)


def _table(grid: np.ndarray, values: np.ndarray) -> ReferenceTable:
    digest = hashlib.sha256(np.ascontiguousarray(values).tobytes()).hexdigest()
    return ReferenceTable(grid=grid, values=values, checksum=digest)


def _record_checksum(key: str, table: ReferenceTable) -> None:
    if settings.table_cache is None:
        return
    settings.table_cache.mkdir(parents=True, exist_ok=True)
    path = settings.table_cache / "checksums.json"
    records = json.loads(path.read_text()) if path.exists() else {}
    if key in records and records[key] != table.checksum:
        logger.warning("reference table %s changed (checksum %s -> %s)", key, records[key][:12], table.checksum[:12])
    records[key] = table.checksum
    path.write_text(json.dumps(records, indent=2, sort_keys=True))


@dataclass(frozen=True)
class Mollifier:
    """eta-hat radial: 1 on |x| <= 1/C, 0 on |x| >= C, monotone taper between."""

    C: float = 2.0

    def __post_init__(self):
        if self.C <= 1.0:
            raise ValueError(f"mollifier shape constant must exceed 1, got {self.C}")

    @property
    def inner(self) -> float:
        return 1.0 / self.C

    @property
    def outer(self) -> float:
        return self.C

    def profile(self, r) -> np.ndarray:
        r = np.abs(np.asarray(r, dtype=float))
        u = (r - self.inner) / (self.outer - self.inner)
        return 1.0 - _smooth_step(u)

    def fourier(self, x, R: float = 1.0) -> np.ndarray:
        """eta-hat(x / R) for points x of shape (..., d)."""
        x = np.asarray(x, dtype=float)
        return self.profile(np.linalg.norm(x, axis=-1) / R)

    def line_mass(self, offset: float = 0.0) -> float:
        """Integral of eta-hat^2 along a line at distance `offset` from 0 (unit scale)."""
        if offset >= self.outer:
            return 0.0
        half = math.sqrt(self.outer ** 2 - offset ** 2)
        u = np.linspace(-half, half, 8193)
        return float(trapezoid(self.profile(np.hypot(u, offset)) ** 2, u))

    # --- reference tables (memoized on the frozen dataclass) ---

    def kernel(self, d: int, squared: bool = False) -> ReferenceTable:
        """Radial inverse transform of eta-hat (or eta-hat^2, giving eta*eta)."""
        return _radial_kernel(self.C, d, squared)

    def slice_norms(self, d: int, q: float) -> ReferenceTable:
        return _slice_norms(self.C, d, float(q))


@lru_cache(maxsize=None)
def _radial_kernel(C: float, d: int, squared: bool) -> ReferenceTable:
    moll = Mollifier(C)
    rho = np.linspace(0.0, moll.outer, RADIAL_NODES)
    g = moll.profile(rho)
    if squared:
        g = g * g
    r = np.arange(0.0, KERNEL_RMAX + KERNEL_STEP / 2, KERNEL_STEP)
    order = d / 2.0 - 1.0
    values = np.empty_like(r)
    values[0] = sphere_area(d) * trapezoid(g * rho ** (d - 1), rho)
    for start in range(1, r.size, _ROW_CHUNK):
        rr = r[start:start + _ROW_CHUNK, None]
        integrand = g * jv(order, 2.0 * math.pi * rr * rho) * rho ** (d / 2.0)
        values[start:start + _ROW_CHUNK] = 2.0 * math.pi * rr[:, 0] ** (1.0 - d / 2.0) * trapezoid(integrand, rho, axis=1)
    table = _table(r, values)
    _record_checksum(f"kernel-C{C}-d{d}-{'sq' if squared else 'eta'}", table)
    logger.debug("built %s kernel table (C=%g, d=%d)", "eta*eta" if squared else "eta", C, d)
    return table


@lru_cache(maxsize=None)
def _slice_norms(C: float, d: int, q: float) -> ReferenceTable:
    eta = _radial_kernel(C, d, False)
    s = np.arange(0.0, SLICE_SMAX + SLICE_STEP / 2, SLICE_STEP)
    values = np.empty_like(s)
    area = sphere_area(d - 1)
    for i, si in enumerate(s):
        top = math.sqrt(max(KERNEL_RMAX ** 2 - si * si, 0.0))
        rho = np.linspace(0.0, top, RADIAL_NODES)
        mag = np.abs(eta(np.hypot(si, rho))) ** q
        values[i] = (area * trapezoid(mag * rho ** (d - 2), rho)) ** (1.0 / q)
    table = _table(s, values)
    _record_checksum(f"slice-C{C}-d{d}-q{q}", table)
    return table
