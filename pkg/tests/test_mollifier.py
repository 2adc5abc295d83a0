import json
import math
from dataclasses import replace

import numpy as np
import pytest

import mollifier
from mollifier import Mollifier, _record_checksum, _smooth_step, _table, sphere_area


def test_smooth_step_endpoints():
    np.testing.assert_allclose(_smooth_step(np.array([-1.0, 0.0, 0.5, 1.0, 2.0])), [0.0, 0.0, 0.5, 1.0, 1.0])


def test_profile_is_a_cutoff_between_the_radii():
    eta = Mollifier(2.0)
    r = np.linspace(0.0, 3.0, 601)
    g = eta.profile(r)
    assert np.all(g[r <= 0.5] == 1.0)
    assert np.all(g[r >= 2.0] == 0.0)
    assert np.all(np.diff(g) <= 0.0)
    with pytest.raises(ValueError):
        Mollifier(1.0)


def test_sphere_areas():
    assert sphere_area(1) == pytest.approx(2.0)
    assert sphere_area(2) == pytest.approx(2 * math.pi)
    assert sphere_area(3) == pytest.approx(4 * math.pi)


@pytest.mark.parametrize("d", [2, 3])
def test_kernel_at_origin_is_the_integral_of_the_cutoff(d):
    eta = Mollifier()
    ball = lambda r: math.pi ** (d / 2) / math.gamma(d / 2 + 1) * r ** d
    k0 = float(eta.kernel(d)(0.0))
    assert ball(eta.inner) < k0 < ball(eta.outer)
    assert 0.0 < float(eta.kernel(d, squared=True)(0.0)) <= k0


def test_line_mass():
    eta = Mollifier()
    assert 2.0 * eta.inner <= eta.line_mass() <= 2.0 * eta.outer
    assert eta.line_mass(eta.outer) == 0.0
    assert eta.line_mass(1.0) < eta.line_mass(0.0)


def test_slice_norms_are_even_and_nonnegative():
    table = Mollifier().slice_norms(2, 1.0)
    s = np.linspace(0.0, 10.0, 41)
    np.testing.assert_array_equal(table(s), table(-s))
    assert np.all(table.values >= 0.0)


def test_envelope_is_nonincreasing():
    env = Mollifier().kernel(2).envelope()
    assert np.all(np.diff(env.values) <= 0.0)
    assert np.all(env.values >= np.abs(Mollifier().kernel(2).values))


def test_tables_are_memoized():
    assert Mollifier(2.0).kernel(3) is Mollifier(2.0).kernel(3)


def test_checksum_record_notices_a_changed_table(tmp_path, monkeypatch):
    monkeypatch.setattr(mollifier, "settings", replace(mollifier.settings, table_cache=tmp_path))
    grid = np.linspace(0.0, 1.0, 5)
    _record_checksum("sample-table", _table(grid, grid))
    first = json.loads((tmp_path / "checksums.json").read_text())["sample-table"]
    _record_checksum("sample-table", _table(grid, grid ** 2))
    second = json.loads((tmp_path / "checksums.json").read_text())["sample-table"]
    assert first != second
