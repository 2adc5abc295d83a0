"""
experiment.py
-------------
The full pipeline over a schedule of N (R derived from N):

- ExperimentConfig : pydantic run configuration, loadable from YAML or JSON
- ratio_sweep      : per row, gate on the incidence suite, then energy,
                     ||f||_2^2, sup-line lower bound and mixed-norm upper
                     bound, giving the conservative and observed ratios
- log_fit          : least-squares growth of the conservative ratio in log R
- write_rows_csv / write_json : byte-stable report files

Usage:
    from experiment import ExperimentConfig, ratio_sweep, log_fit
    report = ratio_sweep(ExperimentConfig(d=2, N_schedule=[4, 6, 8]))
"""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import yaml
from langsmith import traceable
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.stats import linregress

from construction import ExpSumWeight, build_caps, build_lattice
from geometry import CurveParams, available_points, lift_points, scale_for
from incidence import default_box_factor, incidence_suite, sample_directions, search_parameters
from mollifier import Mollifier
from surfaces import SurfaceName, get_surface
from transforms import calibration, energy_delta, energy_quadrature, mixed_norm_bound, sup_line_lower_bound
from utils.config import settings
from utils.errors import IncidenceGateError, ResolutionError
from utils.logger import get_logger
from utils.parallel import map_ordered

logger = get_logger(__name__)

RUN_ONLY = frozenset({"threads", "out_dir"})

EnergyMethod = Literal["delta", "quadrature", "both"]


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    d: int = Field(2, ge=2)
    surface: SurfaceName = "paraboloid"
    c: Optional[float] = None
    b: Optional[float] = None
    stride: int = Field(1, ge=1)
    n0: int = Field(2, ge=0)
    scale_power: Optional[int] = Field(None, ge=1)
    N_schedule: List[int] = Field(default_factory=lambda: [4, 6, 8, 10, 12])
    n_dirs: int = Field(10_000, ge=1)
    mixed_dirs: int = Field(64, ge=0)
    line_budget: int = Field(256, ge=1)
    quad_order: int = Field(8, ge=1)
    energy: EnergyMethod = "both"
    quadrature_max_n: int = 8
    mollifier_C: float = Field(2.0, gt=1.0)
    gate: bool = True
    seed: int = Field(default_factory=lambda: settings.seed)
    threads: int = Field(default_factory=lambda: settings.threads, ge=1)
    out_dir: Path = Field(default_factory=lambda: settings.out_dir)

    @field_validator("N_schedule")
    @classmethod
    def _increasing(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("N schedule must not be empty")
        if min(v) < 1:
            raise ValueError("every N in the schedule must be >= 1")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError(f"N schedule must be strictly increasing, got {v}")
        return v

    @model_validator(mode="after")
    def _base_pair(self) -> "ExperimentConfig":
        if self.b is not None and self.c is None:
            raise ValueError("b given without c")
        if self.c is not None and self.b is not None and not self.c > self.b > 1.0:
            raise ValueError(f"need c > b > 1, got c={self.c}, b={self.b}")
        return self

    @property
    def power(self) -> int:
        return self.d if self.scale_power is None else self.scale_power

    @classmethod
    def from_file(cls, path: Union[str, Path], **overrides: Any) -> "ExperimentConfig":
        path = Path(path)
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f) if path.suffix in (".yaml", ".yml") else json.load(f)
        data = dict(data or {})
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.model_validate(data)


def resolve_parameters(config: ExperimentConfig) -> ExperimentConfig:
    """Fill in c and b: b from c when only c is given, both from the search at the largest N otherwise."""
    if config.c is not None and config.b is not None:
        return config
    if config.c is not None:
        return config.model_copy(update={"b": default_box_factor(config.c)})
    c, b, _ = search_parameters(
        config.d, max(config.N_schedule), n0=config.n0, surface=config.surface,
        scale_power=config.power, stride=config.stride, seed=config.seed, threads=config.threads,
    )
    return config.model_copy(update={"c": c, "b": b})


class RatioRow(BaseModel):
    N: int
    R: float
    log_R: float
    lattice_size: int
    delta_count: float
    calibration: float
    energy_delta: float
    energy_quadrature: Optional[float] = None
    energy_quadrature_error: Optional[float] = None
    energy: float
    f_norm_sq: float
    sup_line_lower: float
    sup_line_direction: List[float]
    mixed_norm_upper: float
    mixed_norm_direction: List[float]
    ratio_conservative: float
    ratio_observed: float
    gate_passed: bool
    gate_failures: List[str] = Field(default_factory=list)
    max_bad_set: int
    max_plane_count: int
    max_slab_count: int
    tie_count: int = 0
    tie_failures: int = 0
    max_box_overlap_set: int = 0


class FitResult(BaseModel):
    slope: float
    intercept: float
    r_squared: float


class RatioReport(BaseModel):
    config: Dict[str, Any]
    rows: List[RatioRow]
    conservative_increasing: bool
    fit: Optional[FitResult] = None


def config_record(config: ExperimentConfig) -> Dict[str, Any]:
    """The config as written into results; run-only settings never reach the output bytes."""
    return config.model_dump(mode="json", exclude=set(RUN_ONLY))


def _strictly_increasing(values: Sequence[float]) -> bool:
    return all(b > a for a, b in zip(values, values[1:]))


def _row_seed(seq: np.random.SeedSequence) -> int:
    return int(seq.generate_state(1)[0])


def build_family(config: ExperimentConfig, N: int, R: Optional[float] = None):
    """(surface, family, lattice) for one schedule entry; c and b must be resolved. R defaults to the scale tie."""
    surface = get_surface(config.surface, config.d)
    params = CurveParams(d=config.d, c=config.c, b=config.b, N=N)
    if R is None:
        R = scale_for(N, config.c, config.n0, config.power, config.stride)
    family = lift_points(surface, params, R, config.n0, config.stride)
    return surface, family, build_lattice(family)


def points_for_scale(config: ExperimentConfig, R: float) -> int:
    """Largest N whose scale tie stays within R: c^{power (n0 + stride N)} <= R."""
    N = available_points(config.c ** config.power, R, config.n0) // config.stride
    if N < 1:
        raise ValueError(f"R={R:g} leaves no points at c={config.c}, n0={config.n0}, power={config.power}")
    return N


@traceable(run_type="chain", name="ratio-row")
def ratio_row(config: ExperimentConfig, N: int, seq: np.random.SeedSequence) -> RatioRow:
    d = config.d
    surface, family, lattice = build_family(config, N)
    R = family.R

    report = incidence_suite(family, lattice, n_dirs=config.n_dirs, seed=_row_seed(seq), threads=1)
    if not report.passed:
        if config.gate:
            raise IncidenceGateError(f"incidence suite failed at N={N}, c={config.c}: {report.failures}", report)
        logger.warning("gate disabled: continuing N=%d despite %s", N, report.failures)

    moll = Mollifier(config.mollifier_C)
    caps = build_caps(family, surface, config.quad_order)
    delta = energy_delta(family, lattice)
    cal = calibration(caps, moll)
    quad_value = quad_error = None
    if config.energy != "delta" and N <= config.quadrature_max_n:
        try:
            quad = energy_quadrature(family, lattice, caps, moll)
            quad_value, quad_error = quad.value, quad.error_bound
        except ResolutionError as exc:
            if config.energy == "quadrature":
                raise
            logger.warning("quadrature energy skipped at N=%d: %s", N, exc)
    energy = quad_value if config.energy == "quadrature" and quad_value is not None else cal * delta.value
    f_norm = caps.l2_norm_sq()

    rng = np.random.default_rng(seq)
    w = ExpSumWeight.from_lattice(lattice, R, moll)
    lower, line = sup_line_lower_bound(w, budget=config.line_budget, rng=rng)
    nus = np.vstack([
        np.eye(d),
        sample_directions(d, config.mixed_dirs, rng),
        line.direction.nu,
        np.asarray(report.slab_direction, dtype=float),
    ])
    uppers = [mixed_norm_bound(lattice, nu, R, 1.0, moll) for nu in nus]
    top = int(np.argmax(uppers))
    upper = float(uppers[top])
    if upper < lower:
        logger.warning("mixed-norm bound %.6g below the evaluated line integral %.6g at N=%d", upper, lower, N)

    row = RatioRow(
        N=N, R=R, log_R=math.log(R), lattice_size=lattice.size,
        delta_count=delta.value, calibration=cal, energy_delta=cal * delta.value,
        energy_quadrature=quad_value, energy_quadrature_error=quad_error, energy=energy,
        f_norm_sq=f_norm,
        sup_line_lower=lower, sup_line_direction=line.direction.nu.tolist(),
        mixed_norm_upper=upper, mixed_norm_direction=nus[top].tolist(),
        ratio_conservative=energy / (f_norm * upper) if upper > 0 else math.inf,
        ratio_observed=energy / (f_norm * lower) if lower > 0 else math.inf,
        gate_passed=report.passed, gate_failures=report.failures,
        max_bad_set=report.max_bad_set, max_plane_count=report.max_plane_count,
        max_slab_count=report.max_slab_count,
        tie_count=report.tie_count, tie_failures=report.tie_failures,
        max_box_overlap_set=report.max_box_overlap_set,
    )
    logger.info("N=%d R=%.4g |Q|=%d: conservative %.6g, observed %.6g", N, R, lattice.size,
                row.ratio_conservative, row.ratio_observed)
    return row


def ratio_sweep(config: ExperimentConfig, threads: Optional[int] = None) -> RatioReport:
    """One row per N in schedule order; row i draws from the i-th child of SeedSequence(seed)."""
    config = resolve_parameters(config)
    threads = config.threads if threads is None else threads
    seqs = np.random.SeedSequence(config.seed).spawn(len(config.N_schedule))
    rows = map_ordered(lambda task: ratio_row(config, *task), list(zip(config.N_schedule, seqs)), threads)
    report = RatioReport(
        config=config_record(config),
        rows=rows,
        conservative_increasing=_strictly_increasing([r.ratio_conservative for r in rows]),
    )
    if len(rows) >= 3:
        slope, intercept, r2 = log_fit(report)
        report.fit = FitResult(slope=slope, intercept=intercept, r_squared=r2)
    return report


def log_fit(report: Union[RatioReport, Sequence[RatioRow]]) -> Tuple[float, float, float]:
    """(slope, intercept, r^2) of ratio_conservative against log R; constant ratios give slope 0 and r^2 0."""
    rows = report.rows if isinstance(report, RatioReport) else list(report)
    if len(rows) < 3:
        raise ValueError(f"log fit needs at least 3 rows, got {len(rows)}")
    x = np.array([r.log_R for r in rows])
    y = np.array([r.ratio_conservative for r in rows])
    fit = linregress(x, y)
    return float(fit.slope), float(fit.intercept), float(fit.rvalue) ** 2


# --- writers ---

def _flat(value: Any) -> Any:
    if isinstance(value, list):
        return " ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return value


def write_rows_csv(rows: Sequence[Union[BaseModel, Dict[str, Any]]], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dicts = [r.model_dump() if isinstance(r, BaseModel) else dict(r) for r in rows]
    fields = list(dicts[0].keys()) if dicts else []
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        for d in dicts:
            writer.writerow({k: _flat(v) for k, v in d.items()})
    return path


def write_json(payload: Union[BaseModel, Dict[str, Any], List[Any]], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = payload.model_dump(mode="json") if isinstance(payload, BaseModel) else payload
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True, allow_nan=True)
        f.write("\n")
    return path
