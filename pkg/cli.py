"""
cli.py
------
Command-line entry point. Every subcommand writes its outputs (and the
resolved configuration) under --out-dir.

Usage example:
python cli.py points --d 2 --N 8
python cli.py points --surface paraboloid --d 3 --c 2 --R 4096 --out family.json
python cli.py incidence-check --family family.json --dirs 10000 --seed 7 --exhaustive-planes auto --out incidence.json
python cli.py xray --family family.json --nu-samples 4096 --out xray.csv
python cli.py incidence-check --d 3 --N 12 --dirs 10000 --threads 8
python cli.py xray-bound-check --d 2 --M 64 --draws 1000 --seed 11 --p all --out hy.csv
python cli.py ratio-sweep --config ./datasets/desk_schedule.yaml
python cli.py verify-all --config ./datasets/desk_schedule.yaml

Exit codes: 0 all gates pass, 1 an incidence gate or parameter search failed,
2 invalid input or an unresolvable computation.
"""
import argparse
import math
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from construction import ExpSumWeight, build_caps, build_lattice, shifted_membership
from estimates import parse_ps, sharpness_rows, xray_bound_suite
from experiment import (
    ExperimentConfig,
    build_family,
    config_record,
    points_for_scale,
    ratio_sweep,
    resolve_parameters,
    write_json,
    write_rows_csv,
)
from family_store import load_family, save_family
from incidence import incidence_suite, sample_directions
from mollifier import Mollifier
from surfaces import get_surface
from transforms import (
    calibration,
    energy_delta,
    energy_quadrature,
    expected_delta_energy,
    projection_slice_check,
    small_mass_check,
    sup_line_lower_bound,
    xray_samples,
)
from utils.config import settings
from utils.errors import IncidenceGateError, SearchError
from utils.logger import get_logger

logger = get_logger("cli")

SLICE_TOLERANCE = {2: 1e-2, 3: 5e-2}
_EXHAUSTIVE = {"auto": "auto", "always": True, "never": False}
ENERGY_FACTOR = 2.0


def _config(args) -> ExperimentConfig:
    overrides = {
        "d": getattr(args, "d", None),
        "surface": getattr(args, "surface", None),
        "c": getattr(args, "c", None),
        "b": getattr(args, "b", None),
        "n0": getattr(args, "n0", None),
        "stride": getattr(args, "stride", None),
        "scale_power": getattr(args, "scale_power", None),
        "n_dirs": getattr(args, "dirs", None),
        "seed": args.seed,
        "threads": args.threads,
        "out_dir": args.out_dir,
    }
    if getattr(args, "N", None) is not None:
        overrides["N_schedule"] = list(args.N)
    if args.config:
        return ExperimentConfig.from_file(args.config, **overrides)
    return ExperimentConfig.model_validate({k: v for k, v in overrides.items() if v is not None})


def _out(config: ExperimentConfig, name: str, explicit: Optional[str] = None) -> Path:
    return Path(explicit) if explicit else Path(config.out_dir) / name


def _single(config: ExperimentConfig, R: Optional[float] = None):
    """Surface, family and lattice for the largest N of the schedule."""
    return build_family(config, config.N_schedule[-1], R)


def _stored(args):
    """Config, surface, family and lattice of a saved family; c and b come from the file."""
    family, lattice = load_family(args.family)
    config = _config(args).model_copy(update={
        "d": family.d, "c": family.params.c, "b": family.params.b, "surface": family.surface,
        "stride": family.stride, "n0": family.indices[0] - family.stride, "N_schedule": [family.N],
    })
    return config, get_surface(family.surface, family.d), family, lattice or build_lattice(family)


# --- subcommands ---

def cmd_points(args) -> int:
    config = _config(args)
    if args.R is not None and getattr(args, "N", None) is None:
        config = resolve_parameters(config)
        config = config.model_copy(update={"N_schedule": [points_for_scale(config, args.R)]})
    config = resolve_parameters(config)
    _, family, lattice = _single(config, args.R)
    path = save_family(_out(config, "points.json", args.out), family, lattice)
    count, frac = shifted_membership(lattice, 0)
    write_json({"config": config_record(config), "N": family.N, "R": family.R,
                "lattice_size": lattice.size, "shifted_membership": {"count": count, "fraction": frac}},
               path.with_name(path.stem + "_summary.json"))
    logger.info("family N=%d R=%.4g |Q|=%d saved to %s", family.N, family.R, lattice.size, path)
    return 0


def cmd_incidence(args) -> int:
    if args.family:
        config, _, family, lattice = _stored(args)
    else:
        config = resolve_parameters(_config(args))
        _, family, lattice = _single(config)
    report = incidence_suite(family, lattice, n_dirs=config.n_dirs, seed=config.seed,
                             threads=config.threads, exhaustive=_EXHAUSTIVE[args.exhaustive])
    write_json({"config": config_record(config), "report": report.model_dump(mode="json")},
               _out(config, "incidence.json", args.out))
    if not report.passed:
        raise IncidenceGateError(f"incidence suite failed: {report.failures}", report)
    return 0


def _energy_payload(config: ExperimentConfig, surface, family, lattice, method: str) -> Dict[str, Any]:
    N = family.N
    moll = Mollifier(config.mollifier_C)
    caps = build_caps(family, surface, config.quad_order)
    delta = energy_delta(family, lattice)
    cal = calibration(caps, moll)
    payload: Dict[str, Any] = {
        "N": N, "R": family.R, "lattice_size": lattice.size,
        "delta_count": delta.value, "delta_expected": expected_delta_energy(N, lattice.k),
        "delta_details": delta.details, "calibration": cal, "energy_delta": cal * delta.value,
        "f_norm_sq": caps.l2_norm_sq(),
    }
    if method in ("quadrature", "both"):
        quad = energy_quadrature(family, lattice, caps, moll)
        payload.update(energy_quadrature=quad.value, quadrature_error=quad.error_bound,
                       quadrature_details=quad.details,
                       agreement=quad.value / (cal * delta.value) if delta.value else math.nan)
    uniform = small_mass_check(family, lattice, rng=np.random.default_rng(config.seed))
    payload["small_mass"] = uniform._asdict()
    return payload


def cmd_energy(args) -> int:
    if args.family:
        config, *built = _stored(args)
        rows = [_energy_payload(config, *built, args.method)]
    else:
        config = resolve_parameters(_config(args))
        rows = [_energy_payload(config, *build_family(config, N), args.method) for N in config.N_schedule]
    write_json({"config": config_record(config), "rows": rows}, _out(config, "energy.json"))
    return 0


def cmd_xray(args) -> int:
    if args.family:
        config, _, family, lattice = _stored(args)
    else:
        config = resolve_parameters(_config(args))
        _, family, lattice = _single(config)
    w = ExpSumWeight.from_lattice(lattice, family.R, Mollifier(config.mollifier_C))
    rng = np.random.default_rng(config.seed)
    nus = np.vstack([np.eye(config.d), sample_directions(config.d, args.samples, rng)])
    offsets = [float(o) * family.R for o in args.offsets]
    rows = xray_samples(w, nus, offsets)
    path = write_rows_csv(rows, _out(config, "xray.csv", args.out))
    value, line = sup_line_lower_bound(w, budget=config.line_budget, rng=rng)
    write_json({"config": config_record(config), "sup_line_lower": value,
                "direction": line.direction.nu.tolist(), "offset": line.offset.tolist()},
               path.with_suffix(".json"))
    return 0


def cmd_xray_bound(args) -> int:
    ps = parse_ps(args.p)
    rows = xray_bound_suite(args.d, args.M, args.draws, seed=args.seed, ps=ps, threads=args.threads)
    out = Path(args.out) if args.out else Path(args.out_dir or settings.out_dir) / "hy.csv"
    write_rows_csv([{k: r[k] for k in ("draw", "p", "lhs", "rhs", "margin")} for r in rows], out)
    failures = sum(not r["passed"] for r in rows)
    sharp = sharpness_rows(args.d, min(args.M, 32), seed=args.seed)
    write_json({"d": args.d, "M": args.M, "draws": args.draws, "seed": args.seed, "failures": failures,
                "sharpness": sharp}, out.with_suffix(".json"))
    return 0 if failures == 0 else 1


def cmd_ratio_sweep(args) -> int:
    config = _config(args)
    report = ratio_sweep(config)
    write_rows_csv(report.rows, _out(config, "ratio.csv"))
    write_json(report, _out(config, "ratio.json"))
    return 0


def cmd_verify_all(args) -> int:
    """Every gate in turn; the summary records each verdict."""
    config = resolve_parameters(_config(args))
    checks: Dict[str, Any] = {}

    incidence: List[Dict[str, Any]] = []
    for N in config.N_schedule:
        _, family, lattice = build_family(config, N)
        rep = incidence_suite(family, lattice, n_dirs=config.n_dirs, seed=config.seed, threads=config.threads)
        incidence.append({"N": N, "passed": rep.passed, "failures": rep.failures})
    checks["incidence"] = {"passed": all(r["passed"] for r in incidence), "rows": incidence}

    bound = xray_bound_suite(config.d, 16, args.draws, seed=config.seed, threads=config.threads)
    sharp = sharpness_rows(config.d, 16, seed=config.seed)
    checks["xray_bound"] = {
        "passed": all(r["passed"] for r in bound) and all(r["ratio"] >= 1.0 - 1e-9 for r in sharp),
        "failures": sum(not r["passed"] for r in bound),
        "min_sharpness": min(r["ratio"] for r in sharp),
    }

    if config.d in SLICE_TOLERANCE:
        small = [N for N in config.N_schedule if N <= 6] or [min(config.N_schedule)]
        _, family, lattice = build_family(config, small[-1])
        if lattice.size <= 64:
            nu = sample_directions(config.d, 1, np.random.default_rng(config.seed))[0]
            err = projection_slice_check(lattice, nu, family.R, z_samples=4)
            checks["projection_slice"] = {"passed": err < SLICE_TOLERANCE[config.d], "max_relative_error": err}

    energy_rows = [_energy_payload(config, *build_family(config, N), "both") for N in config.N_schedule if N <= config.quadrature_max_n]
    checks["energy"] = {
        "passed": all(1.0 / ENERGY_FACTOR <= r["agreement"] <= ENERGY_FACTOR for r in energy_rows),
        "agreement": [r["agreement"] for r in energy_rows],
    }

    report = ratio_sweep(config)
    fit = report.fit
    checks["growth"] = {
        "passed": report.conservative_increasing and (fit is None or (fit.slope > 0 and fit.r_squared >= 0.9)),
        "conservative_increasing": report.conservative_increasing,
        "fit": None if fit is None else fit.model_dump(),
    }
    write_rows_csv(report.rows, _out(config, "ratio.csv"))

    passed = all(c["passed"] for c in checks.values())
    write_json({"config": config_record(config), "checks": checks, "passed": passed},
               _out(config, "verify.json"))
    logger.info("verify-all: %s", "pass" if passed else [k for k, c in checks.items() if not c["passed"]])
    return 0 if passed else 1


# --- parser ---

def _family_flags(p: argparse.ArgumentParser, schedule: bool = False) -> None:
    p.add_argument("--config", default=None, help="YAML or JSON ExperimentConfig")
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--N", type=int, nargs="+" if schedule else 1, default=None)
    p.add_argument("--c", type=float, default=None)
    p.add_argument("--b", type=float, default=None)
    p.add_argument("--n0", type=int, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--scale-power", dest="scale_power", type=int, default=None)
    p.add_argument("--surface", choices=["paraboloid", "sphere", "quadratic"], default=None)
    p.add_argument("--dirs", type=int, default=None, help="sampled directions for the incidence suite")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--out-dir", dest="out_dir", default=None)

    ap = argparse.ArgumentParser(prog="mt-counterexample", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("points", parents=[common], help="build and save a point family")
    _family_flags(p)
    p.add_argument("--R", type=float, default=None, help="scale; N follows from the scale tie unless given")
    p.add_argument("--out", default=None, help="family JSON path")
    p.set_defaults(func=cmd_points)

    p = sub.add_parser("incidence-check", parents=[common], help="run the incidence gate suite")
    _family_flags(p)
    p.add_argument("--family", default=None, help="points.json written by `points`")
    p.add_argument("--exhaustive-planes", "--exhaustive", dest="exhaustive", choices=["auto", "always", "never"], default="auto")
    p.add_argument("--out", default=None, help="report JSON path")
    p.set_defaults(func=cmd_incidence)

    p = sub.add_parser("energy", parents=[common], help="delta-model and quadrature energies")
    _family_flags(p, schedule=True)
    p.add_argument("--family", default=None, help="points.json written by `points`")
    p.add_argument("--method", choices=["delta", "quadrature", "both"], default="both")
    p.set_defaults(func=cmd_energy)

    p = sub.add_parser("xray", parents=[common], help="sample line integrals and the sup-line bound")
    _family_flags(p)
    p.add_argument("--family", default=None, help="points.json written by `points`")
    p.add_argument("--nu-samples", "--samples", dest="samples", type=int, default=16, help="random directions besides the axes")
    p.add_argument("--out", default=None, help="CSV path; the JSON summary goes beside it")
    p.add_argument("--offsets", type=float, nargs="+", default=[0.0], help="line offsets in units of R")
    p.set_defaults(func=cmd_xray)

    p = sub.add_parser("xray-bound-check", parents=[common], help="exact grid check of the X-ray bound")
    p.add_argument("--d", type=int, default=2)
    p.add_argument("--M", type=int, default=32)
    p.add_argument("--draws", type=int, default=1000)
    p.add_argument("--p", default="all", help="'all' or a comma list like 1,2,inf")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_xray_bound)

    p = sub.add_parser("ratio-sweep", parents=[common], help="ratios over the N schedule")
    _family_flags(p, schedule=True)
    p.set_defaults(func=cmd_ratio_sweep)

    p = sub.add_parser("verify-all", parents=[common], help="every gate plus the sweep")
    _family_flags(p, schedule=True)
    p.add_argument("--draws", type=int, default=100)
    p.set_defaults(func=cmd_verify_all)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (IncidenceGateError, SearchError) as exc:
        logger.error("%s", exc)
        return 1
    except ValueError as exc:
        logger.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
