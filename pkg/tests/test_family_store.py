import json

import numpy as np

from construction import build_lattice
from family_store import load_family, save_family
from tests.conftest import make_family


def test_family_and_lattice_reload_bit_for_bit(tmp_path):
    family = make_family(d=3, N=5, stride=2)
    lattice = build_lattice(family)
    path = save_family(tmp_path / "nested" / "points.json", family, lattice)
    loaded, loaded_lattice = load_family(path)
    np.testing.assert_array_equal(loaded.xis, family.xis)
    np.testing.assert_array_equal(loaded.xi0, family.xi0)
    assert loaded.R == family.R
    assert loaded.indices == family.indices
    assert loaded.base == family.base
    np.testing.assert_array_equal(loaded_lattice.points, lattice.points)
    np.testing.assert_array_equal(loaded_lattice.bits, lattice.bits)
    assert loaded_lattice.k == lattice.k


def test_family_without_lattice(tmp_path):
    family = make_family(d=2, N=3)
    path = save_family(tmp_path / "points.json", family)
    assert json.loads(path.read_text())["lattice"] is None
    loaded, lattice = load_family(path)
    assert lattice is None
    assert loaded.surface == "paraboloid"
    np.testing.assert_array_equal(loaded.generators, family.generators)
