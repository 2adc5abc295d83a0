import csv
import json
import math
from pathlib import Path

import pytest
from pydantic import ValidationError

from experiment import (
    ExperimentConfig,
    RatioRow,
    build_family,
    config_record,
    log_fit,
    points_for_scale,
    ratio_sweep,
    resolve_parameters,
    write_json,
    write_rows_csv,
)
from utils.errors import IncidenceGateError

DATASETS = Path(__file__).resolve().parent.parent / "datasets"

# small enough to run every row on a laptop in seconds
QUICK = dict(n_dirs=200, line_budget=8, mixed_dirs=2, quad_order=4, quadrature_max_n=2, seed=5, threads=1)


def _row(log_R: float, ratio: float) -> RatioRow:
    return RatioRow.model_construct(log_R=log_R, ratio_conservative=ratio)


@pytest.mark.parametrize("kwargs", [
    dict(b=2.0),
    dict(c=2.0, b=3.0),
    dict(c=4.0, b=1.0),
    dict(N_schedule=[]),
    dict(N_schedule=[4, 4]),
    dict(N_schedule=[0, 2]),
    dict(d=1),
    dict(energy="exact"),
    dict(unknown=1),
])
def test_config_rejects(kwargs):
    with pytest.raises(ValidationError):
        ExperimentConfig(**kwargs)


def test_config_is_frozen():
    config = ExperimentConfig()
    with pytest.raises(ValidationError):
        config.d = 3
    assert config.power == 2
    assert ExperimentConfig(d=3, scale_power=1).power == 1


def test_config_from_yaml_with_overrides():
    config = ExperimentConfig.from_file(DATASETS / "desk_schedule.yaml", seed=99, threads=None)
    assert config.N_schedule == [4, 6, 8, 10, 12]
    assert config.seed == 99
    assert config.c is None


def test_config_from_json(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"d": 3, "c": 8.0, "N_schedule": [2, 3]}))
    config = ExperimentConfig.from_file(path)
    assert (config.d, config.c, config.b) == (3, 8.0, None)


@pytest.mark.parametrize("c,b", [(4.0, 2.0), (2.0, math.sqrt(2.0))])
def test_resolve_fills_the_box_factor(c, b):
    config = resolve_parameters(ExperimentConfig(c=c, N_schedule=[2]))
    assert config.b == pytest.approx(b)


def test_build_family_uses_the_scale_tie():
    config = resolve_parameters(ExperimentConfig(c=4.0, N_schedule=[3]))
    _, family, lattice = build_family(config, 3)
    assert family.R == 4.0 ** (2 * 5)
    assert lattice.size == 3


def test_log_fit_recovers_a_line():
    rows = [_row(x, 0.5 * x + 1.0) for x in (1.0, 2.0, 3.0, 4.0)]
    slope, intercept, r2 = log_fit(rows)
    assert slope == pytest.approx(0.5)
    assert intercept == pytest.approx(1.0)
    assert r2 == pytest.approx(1.0)


def test_log_fit_of_a_constant_ratio():
    slope, _, r2 = log_fit([_row(x, 2.0) for x in (1.0, 2.0, 3.0)])
    assert slope == pytest.approx(0.0)
    assert r2 == pytest.approx(0.0)


def test_log_fit_needs_three_rows():
    with pytest.raises(ValueError):
        log_fit([_row(1.0, 1.0), _row(2.0, 2.0)])


def test_quick_sweep_rows():
    report = ratio_sweep(ExperimentConfig(c=4.0, N_schedule=[1, 2], **QUICK))
    assert [r.N for r in report.rows] == [1, 2]
    assert report.fit is None
    for row in report.rows:
        assert row.gate_passed
        assert row.energy > 0 and row.f_norm_sq > 0
        assert row.sup_line_lower > 0
        assert row.mixed_norm_upper >= row.sup_line_lower * (1 - 1e-3)
        assert row.ratio_conservative <= row.ratio_observed * (1 + 1e-3)
    assert report.rows[0].lattice_size == 1
    assert report.rows[1].delta_count == 6
    assert all(r.tie_failures == 0 and r.tie_count >= 0 for r in report.rows)
    assert "threads" not in report.config and "out_dir" not in report.config


def test_sweep_output_does_not_depend_on_threads(tmp_path):
    config = ExperimentConfig(c=4.0, N_schedule=[1, 2], **QUICK)
    one = write_json(ratio_sweep(config, threads=1), tmp_path / "one.json")
    two = write_json(ratio_sweep(config, threads=2), tmp_path / "two.json")
    assert one.read_bytes() == two.read_bytes()


def test_recorded_config_leaves_out_run_settings(tmp_path):
    config = ExperimentConfig(c=4.0, N_schedule=[1, 2], **QUICK)
    other = config.model_copy(update={"threads": 4, "out_dir": str(tmp_path)})
    assert config_record(config) == config_record(other)
    assert config_record(config)["seed"] == 5


def test_points_for_scale_inverts_the_scale_tie():
    config = resolve_parameters(ExperimentConfig(c=4.0, N_schedule=[3]))
    assert points_for_scale(config, 4.0 ** (2 * 5)) == 3
    assert points_for_scale(config, 4.0 ** (2 * 5) * 3.0) == 3
    with pytest.raises(ValueError):
        points_for_scale(config, 16.0)


def test_build_family_accepts_an_explicit_scale():
    config = resolve_parameters(ExperimentConfig(c=4.0, N_schedule=[3]))
    _, family, _ = build_family(config, 3, R=2.0 ** 30)
    assert family.R == 2.0 ** 30


def test_colliding_base_is_refused():
    config = ExperimentConfig.from_file(DATASETS / "negative_control.yaml", n_dirs=200)
    with pytest.raises(IncidenceGateError) as info:
        ratio_sweep(config.model_copy(update={"N_schedule": [4]}))
    assert not info.value.report.passed


def test_linear_scale_tie_is_refused():
    config = ExperimentConfig(c=4.0, scale_power=1, N_schedule=[6], **QUICK)
    with pytest.raises(IncidenceGateError):
        ratio_sweep(config)


def test_csv_writer(tmp_path):
    rows = [{"N": 2, "value": 0.1, "direction": [1.0, 0.0]}]
    path = write_rows_csv(rows, tmp_path / "out" / "rows.csv")
    with open(path, newline="") as f:
        record = next(csv.DictReader(f))
    assert record == {"N": "2", "value": "0.1", "direction": "1.0 0.0"}


@pytest.mark.slow
def test_desk_schedule_grows_like_log_R():
    report = ratio_sweep(ExperimentConfig.from_file(DATASETS / "desk_schedule.yaml"))
    assert all(r.gate_passed for r in report.rows)
    assert report.conservative_increasing
    assert report.fit is not None and report.fit.slope > 0
    assert report.fit.r_squared >= 0.9
    assert all(r.tie_failures == 0 for r in report.rows)
