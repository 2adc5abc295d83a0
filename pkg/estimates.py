"""
estimates.py
------------
Exact check of the X-ray mixed-norm inequality

    || X_nu w ||_p  <=  int || P_nu h(lambda) ||_q^2 dlambda,   w = |h-hat|^2,  q = 2p/(2p-1)

on periodic grids with nu a coordinate axis, where slicing is exact and every
step of the chain (1-D Plancherel, Minkowski, Hausdorff-Young) holds without
discretization error.

Normalization: h lives on {0..M-1}^d with spacing D, h-hat = D^d fftn(h) on
the dual grid with spacing 1/(M D). Norms carry the matching cell volume, so
Parseval is an identity.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from utils.config import settings
from utils.logger import get_logger
from utils.parallel import map_ordered

logger = get_logger(__name__)

PASS_RTOL = 1e-9
DEFAULT_PS: Tuple[float, ...] = (1.0, 2.0, math.inf)

PLike = Union[int, float, str, Fraction]


@dataclass(frozen=True)
class GridFunction:
    values: np.ndarray
    spacing: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=complex)
        if values.ndim < 1 or len(set(values.shape)) != 1:
            raise ValueError(f"grid must be a cube {{0..M-1}}^d, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        if not self.spacing > 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", float(self.spacing))

    @property
    def d(self) -> int:
        return self.values.ndim

    @property
    def M(self) -> int:
        return self.values.shape[0]

    @property
    def cell(self) -> float:
        return self.spacing ** self.d

    def norm(self, p: float) -> float:
        return weighted_norm(self.values, p, self.cell)

    def fourier(self) -> "GridFunction":
        return GridFunction(self.cell * np.fft.fftn(self.values), 1.0 / (self.M * self.spacing))

    def inverse_fourier(self) -> "GridFunction":
        """Inverse of `fourier`: the result has spacing 1/(M * self.spacing)."""
        physical = 1.0 / (self.M * self.spacing)
        return GridFunction(np.fft.ifftn(self.values) / physical ** self.d, physical)


@dataclass(frozen=True)
class NormParams:
    p: float
    q: float

    @classmethod
    def of(cls, p: PLike) -> "NormParams":
        if isinstance(p, str):
            p = math.inf if p.lower() in ("inf", "infinity", "oo") else Fraction(p)
        if p == math.inf:
            return cls(math.inf, 1.0)
        frac = Fraction(p).limit_denominator(1000)
        if frac < 1:
            raise ValueError(f"p must be >= 1, got {p}")
        if frac not in (1, 2) and not settings.allow_rational_p:
            raise ValueError(f"p = {frac} needs MT_ALLOW_RATIONAL_P=1; defaults are 1, 2, inf")
        return cls(float(frac), float(Fraction(2) * frac / (2 * frac - 1)))

    @property
    def dual_exponent(self) -> float:
        """q' = 2p."""
        return 2.0 * self.p

    @property
    def label(self) -> str:
        return "inf" if self.p == math.inf else f"{self.p:g}"


def parse_ps(text: str) -> List[NormParams]:
    """'all' or a comma list such as '1,2,inf'."""
    if text.strip().lower() == "all":
        return [NormParams.of(p) for p in DEFAULT_PS]
    return [NormParams.of(tok.strip()) for tok in text.split(",") if tok.strip()]


def weighted_norm(values: np.ndarray, p: float, cell: float, axis=None) -> np.ndarray:
    mag = np.abs(values)
    if p == math.inf:
        return mag.max(axis=axis)
    if p == 1.0:
        return cell * mag.sum(axis=axis)
    return (cell * np.sum(mag ** p, axis=axis)) ** (1.0 / p)


def _check_axis(g: GridFunction, axis: int) -> None:
    if not 0 <= axis < g.d:
        raise ValueError(f"axis must lie in [0, {g.d}), got {axis}")


def grid_xray(w: GridFunction, axis: int) -> GridFunction:
    """Spacing-weighted column sums along `axis`."""
    _check_axis(w, axis)
    if w.d < 2:
        raise ValueError("the X-ray transform needs d >= 2")
    return GridFunction(w.spacing * w.values.sum(axis=axis), w.spacing)


def slice_norms(h: GridFunction, axis: int, q: float) -> np.ndarray:
    """|| h(lambda, .) ||_{L^q(axis-perp)} for each lambda along `axis`."""
    _check_axis(h, axis)
    slices = np.moveaxis(h.values, axis, 0).reshape(h.M, -1)
    return weighted_norm(slices, q, h.spacing ** (h.d - 1), axis=1)


def _perp_transforms(h: GridFunction, axis: int) -> np.ndarray:
    """F_perp of each slice, stacked along axis 0."""
    slices = np.moveaxis(h.values, axis, 0)
    perp_axes = tuple(range(1, h.d))
    return h.spacing ** (h.d - 1) * np.fft.fftn(slices, axes=perp_axes)


def hy_xray_check(h: GridFunction, axis: int, p: PLike) -> Tuple[float, float, bool]:
    """(||X_axis |h-hat|^2||_p, sum_lambda D ||slice_lambda||_q^2, lhs <= rhs (1 + 1e-9))."""
    params = p if isinstance(p, NormParams) else NormParams.of(p)
    _check_axis(h, axis)
    w_hat = h.fourier()
    w = GridFunction(np.abs(w_hat.values) ** 2, w_hat.spacing)
    xray = grid_xray(w, axis)
    lhs = float(xray.norm(params.p))
    rhs = float(h.spacing * np.sum(slice_norms(h, axis, params.q) ** 2))
    return lhs, rhs, lhs <= rhs * (1.0 + PASS_RTOL)


def minkowski_step_check(h: GridFunction, axis: int, ps: Optional[Iterable[PLike]] = None) -> float:
    """Smallest relative margin of || D sum |G_l|^2 ||_p <= D sum ||G_l||_{2p}^2 over p, G_l = F_perp slice_l."""
    _check_axis(h, axis)
    G = _perp_transforms(h, axis)
    dual_cell = (1.0 / (h.M * h.spacing)) ** (h.d - 1)
    flat = np.abs(G.reshape(h.M, -1)) ** 2
    margins = []
    for p in ps if ps is not None else DEFAULT_PS:
        params = p if isinstance(p, NormParams) else NormParams.of(p)
        lhs = float(weighted_norm(h.spacing * flat.sum(axis=0), params.p, dual_cell))
        per_slice = weighted_norm(np.sqrt(flat), params.dual_exponent, dual_cell, axis=1)
        rhs = float(h.spacing * np.sum(per_slice ** 2))
        margins.append(_margin(lhs, rhs))
    return min(margins)


def hausdorff_young_check(g: GridFunction, q: float) -> float:
    """Relative margin of ||g-hat||_{q'} <= ||g||_q."""
    if not 1.0 <= q <= 2.0:
        raise ValueError(f"q must lie in [1, 2], got {q}")
    q_dual = math.inf if q == 1.0 else q / (q - 1.0)
    g_hat = g.fourier()
    return _margin(float(g_hat.norm(q_dual)), float(g.norm(q)))


def parseval_error(h: GridFunction) -> float:
    a, b = h.norm(2.0), h.fourier().norm(2.0)
    return abs(a - b) / max(a, b, 1e-300)


def _margin(lhs: float, rhs: float) -> float:
    return (rhs - lhs) / max(abs(rhs), 1e-300)


# --- witnesses ---

def nonnegative_bump(d: int, M: int, spacing: float = 1.0, width: float = 0.15) -> GridFunction:
    """A nonnegative periodic Gaussian bump in physical space."""
    x = np.arange(M) / M
    dist = np.minimum(x, 1.0 - x)
    grids = np.meshgrid(*([dist] * d), indexing="ij")
    r2 = sum(g ** 2 for g in grids)
    return GridFunction(np.exp(-r2 / (2.0 * width ** 2)), spacing)


def frequency_witness(rng: np.random.Generator, d: int, M: int, spacing: float = 1.0) -> GridFunction:
    """h with h-hat = |g-hat|^2 for random g >= 0; h is the autocorrelation of g, so both sides are nonnegative."""
    g = GridFunction(rng.random((M,) * d), spacing)
    spectrum = GridFunction(np.abs(g.fourier().values) ** 2, 1.0 / (M * spacing))
    return spectrum.inverse_fourier()


def random_grid(rng: np.random.Generator, d: int, M: int, spacing: float = 1.0) -> GridFunction:
    shape = (M,) * d
    return GridFunction(rng.standard_normal(shape) + 1j * rng.standard_normal(shape), spacing)


# --- random suite ---

def _draw_rows(task: Tuple[int, np.random.SeedSequence, int, int, Sequence[NormParams]]) -> List[Dict[str, Any]]:
    draw, seq, d, M, ps = task
    rng = np.random.default_rng(seq)
    h = random_grid(rng, d, M, spacing=1.0 / M)
    axis = int(rng.integers(d))
    rows = []
    for params in ps:
        lhs, rhs, ok = hy_xray_check(h, axis, params)
        rows.append({"draw": draw, "d": d, "M": M, "axis": axis, "p": params.label,
                     "lhs": lhs, "rhs": rhs, "margin": _margin(lhs, rhs), "passed": ok})
    return rows


def xray_bound_suite(
    d: int,
    M: int,
    draws: int,
    seed: Optional[int] = None,
    ps: Optional[Sequence[NormParams]] = None,
    threads: Optional[int] = None,
) -> List[Dict[str, Any]]:
    """One row per (draw, p). Draw i uses the i-th child of SeedSequence(seed), so rows do not depend on threads."""
    if d < 2:
        raise ValueError(f"d must be >= 2, got {d}")
    if M < 2 or draws < 1:
        raise ValueError(f"need M >= 2 and draws >= 1, got M={M}, draws={draws}")
    ps = list(ps) if ps is not None else [NormParams.of(p) for p in DEFAULT_PS]
    seed = settings.seed if seed is None else seed
    threads = settings.threads if threads is None else threads
    children = np.random.SeedSequence(seed).spawn(draws)
    tasks = [(i, s, d, M, ps) for i, s in enumerate(children)]
    rows = [r for chunk in map_ordered(_draw_rows, tasks, threads) for r in chunk]
    failures = sum(not r["passed"] for r in rows)
    logger.info("xray bound suite d=%d M=%d draws=%d: %d failures", d, M, draws, failures)
    return rows


def sharpness_rows(d: int, M: int, samples: int = 8, seed: Optional[int] = None) -> List[Dict[str, Any]]:
    """lhs/rhs at p = inf for the two nonnegative witnesses, every axis."""
    rng = np.random.default_rng(np.random.SeedSequence(settings.seed if seed is None else seed))
    rows = []
    cases = [("physical", nonnegative_bump(d, M, 1.0 / M))]
    cases += [("frequency", frequency_witness(rng, d, M, 1.0 / M)) for _ in range(samples)]
    for kind, h in cases:
        for axis in range(d):
            lhs, rhs, _ = hy_xray_check(h, axis, math.inf)
            rows.append({"witness": kind, "d": d, "M": M, "axis": axis, "ratio": lhs / rhs})
    return rows
