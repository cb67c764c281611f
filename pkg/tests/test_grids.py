import csv
import math

import numpy as np
import pytest

from mclab.grids import (GridFunction, GridFunction4, PhaseGrid, auto_vmax, dump_grid,
                         load_grid)
from mclab.observables import DEFAULT_FAMILY, family, get
from mclab.particles import InitialLaw


def test_velocity_nodes_are_interior_dirichlet_points():
    g = PhaseGrid(8, 6, 7.0, 1e-3)
    v = g.v
    assert v.size == 6
    assert v[0] == pytest.approx(-7 + g.dv) and v[-1] == pytest.approx(7 - g.dv)
    np.testing.assert_allclose(v, -v[::-1], atol=1e-14)


def test_grid_validation():
    for bad in [dict(n_x=7), dict(n_v=2), dict(v_max=0.0), dict(dt=0.0)]:
        with pytest.raises(ValueError):
            PhaseGrid(**bad)


def test_auto_vmax():
    assert auto_vmax(1.0, 0.1) == 8.0
    assert auto_vmax(1.0, 0.5) == pytest.approx(6 * math.sqrt(2))
    assert auto_vmax(1.0, 5.0) == pytest.approx(6 * math.sqrt(11))


def test_law_mass_and_moments():
    grid = PhaseGrid(32, 128, 8.0)
    f = GridFunction.from_law(grid, InitialLaw("one_mode", 0.5, 1.5))
    assert f.mass() == pytest.approx(1.0, abs=1e-10)
    assert f.velocity_moment(2) == pytest.approx(1.5, rel=1e-8)
    assert f.integrate(get("cos")) == pytest.approx(0.25, abs=1e-10)
    np.testing.assert_allclose(f.density(), 1 + 0.5 * np.cos(2 * np.pi * grid.x), atol=1e-10)


def test_grid_csv(tmp_path):
    grid = PhaseGrid(4, 4, 4.0)
    f = GridFunction(grid, np.arange(16.0).reshape(4, 4))
    f.to_csv(tmp_path / "f.csv")
    rows = list(csv.reader(open(tmp_path / "f.csv")))
    assert rows[0] == ["x", "v", "value"] and len(rows) == 17
    assert float(rows[6][2]) == 5.0


@pytest.mark.parametrize("four", [False, True])
def test_binary_round_trip(tmp_path, rng, four):
    grid = PhaseGrid(4, 6, 5.0, 2e-3)
    if four:
        g = GridFunction4(grid, rng.normal(size=(4, 6, 4, 6)), 0.25)
    else:
        g = GridFunction(grid, rng.normal(size=(4, 6)), 0.25)
    dump_grid(g, tmp_path / "g.bin")
    back = load_grid(tmp_path / "g.bin")
    assert back.grid == grid and back.time == 0.25
    np.testing.assert_array_equal(back.values, g.values)


def test_two_particle_projection_and_symmetry(rng):
    grid = PhaseGrid(4, 4, 4.0)
    a = rng.normal(size=(4, 4))
    b = rng.normal(size=(4, 4))
    g = GridFunction4(grid, np.einsum("ij,kl->ijkl", a, b))
    phi = get("cos")
    tab = phi.on_grid(grid)
    cv = grid.cell_volume
    assert g.project(phi) == pytest.approx(np.sum(tab * a) * np.sum(tab * b) * cv * cv)
    sym = GridFunction4(grid, g.values + g.swapped())
    assert sym.symmetry_defect() == 0.0
    np.testing.assert_allclose(g.marginal(), a * b.sum() * cv)


def test_observables():
    x = np.array([0.0, 0.25])
    v = np.array([2.0, 0.0])
    np.testing.assert_allclose(get("cos")(x, v), [1.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(get("vgauss")(x, v), [2 * math.exp(-1), 0.0])
    np.testing.assert_allclose(get("cosv")(x, v), [2.0, 0.0], atol=1e-15)
    np.testing.assert_allclose(get("c1c2")(x, v), [2.0, -1.0], atol=1e-15)
    assert [p.name for p in family()] == list(DEFAULT_FAMILY)
    xs = np.zeros((2, 3, 2))
    assert get("v2gauss")(xs, xs).shape == (2, 3)
    with pytest.raises(ValueError):
        get("nope")
