import math

import numpy as np
import pytest

from mclab.bogolyubov import (duhamel_first_step, limiting_variance,
                              limiting_variance_from_projection, marginal_defect,
                              solve_bogolyubov, solve_from_initial, write_projection_csv)
from mclab.grids import GridFunction, GridFunction4, PhaseGrid
from mclab.kernels import KernelSpec
from mclab.kinetic_pde import NegativeOvershootWarning, solve_fN, solve_vfp
from mclab.observables import family, get
from mclab.particles import InitialLaw

LAW = InitialLaw("one_mode", 0.9, 1.0)


@pytest.fixture(scope="module")
def base():
    grid = PhaseGrid(8, 24, 8.0, 4e-3)
    f0 = GridFunction.from_law(grid, LAW)
    kernel = KernelSpec.bounded(-(2 * np.pi) ** 2)
    with pytest.warns(NegativeOvershootWarning):
        f_traj = solve_vfp(f0, kernel, 0.2)
    g2 = solve_bogolyubov(f_traj, kernel, 0.2, family(["cos", "sin", "one"]), [0.2])
    return grid, f0, kernel, f_traj, g2


def test_zero_kernel_gives_zero_correlation():
    grid = PhaseGrid(8, 16, 8.0, 4e-3)
    f0 = GridFunction.from_law(grid, LAW)
    _, g2 = solve_from_initial(f0, KernelSpec.zero(), 0.1, family(["cos"]), [0.1])
    assert np.all(g2.final.values == 0)
    assert np.all(g2.projections["cos"] == 0)


def test_first_step_matches_duhamel(base):
    grid, f0, kernel, f_traj, _ = base
    one = solve_bogolyubov(f_traj, kernel, grid.dt, (), [grid.dt])
    approx = duhamel_first_step(f0, kernel)
    err = np.abs(one.final.values - approx).max()
    assert err < 0.05 * np.abs(approx).max()


def test_source_linearity(base):
    grid, f0, kernel, f_traj, g2 = base
    doubled = solve_bogolyubov(f_traj, kernel, 0.2, family(["cos", "sin"]), [0.2], source_scale=2.0)
    np.testing.assert_allclose(doubled.final.values, 2 * g2.final.values, atol=1e-12)
    np.testing.assert_allclose(doubled.projections["cos"], 2 * g2.projections["cos"], atol=1e-12)


def test_symmetry_and_marginal(base):
    _, _, _, _, g2 = base
    g = g2.final
    assert g.symmetry_defect() < 1e-12
    assert g2.diagnostics["symmetry_defect"] < 1e-12
    assert marginal_defect(g) < 1e-6 * np.abs(g.values).max() + 1e-12
    assert abs(g2.projection("one", 0.2)) < 1e-10
    # attraction builds positive cos-cos correlations
    assert g2.projection("cos", 0.2) > 0
    assert g.project(get("cos")) == pytest.approx(g2.projection("cos", 0.2), rel=1e-10)


def test_limiting_variance(base):
    grid, f0, _, f_traj, g2 = base
    f = f_traj.at(0.2)
    zero = GridFunction4(grid, np.zeros(grid.shape * 2), 0.2)
    cos = get("cos")
    tab = cos.on_grid(grid)
    mean = np.sum(tab * f.values) * grid.cell_volume
    var = np.sum((tab - mean) ** 2 * f.values) * grid.cell_volume
    assert limiting_variance(zero, f, cos) == pytest.approx(var, rel=1e-12)
    # uniform law: cos has mean 0 and variance 1/2
    u = GridFunction.from_law(PhaseGrid(16, 64, 8.0), InitialLaw())
    z = GridFunction4(u.grid, np.zeros(u.grid.shape * 2))
    assert limiting_variance(z, u, cos) == pytest.approx(0.5, abs=1e-9)
    assert limiting_variance(g2.final, f, get("one")) == pytest.approx(0.0, abs=1e-9)
    assert limiting_variance(g2.final, f, cos) == pytest.approx(var + g2.projection("cos", 0.2))
    with pytest.raises(ValueError):
        limiting_variance_from_projection(-1.0, f, cos)
    with pytest.raises(ValueError):
        limiting_variance(zero, f0, cos)


def test_projection_csv(base, tmp_path):
    *_, g2 = base
    write_projection_csv(g2, tmp_path / "p.csv", every=10)
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "time,phi_id,value"
    assert len(lines) == 1 + 3 * len(range(0, len(g2.times), 10))


def test_fN_tends_to_mean_field(base):
    grid, f0, kernel, f_traj, g2 = base
    f = f_traj.final.values
    big = solve_fN(f0, kernel, g2, 1e12, 0.2, f_traj, [0.2]).final.values
    np.testing.assert_allclose(big, f, atol=1e-10)
    small = solve_fN(f0, kernel, g2, 10, 0.2, f_traj, [0.2]).final.values
    mid = solve_fN(f0, kernel, g2, 20, 0.2, f_traj, [0.2]).final.values
    # the correction is linear in 1/N to leading order
    d10, d20 = small - f, mid - f
    assert np.abs(d10).max() > 1e-6
    assert np.abs(d10 - 2 * d20).max() < 0.05 * np.abs(d10).max()
    assert solve_fN(f0, kernel, g2, 10, 0.2, f_traj, [0.2]).final.mass() == pytest.approx(1, abs=1e-6)


def test_fN_requires_coverage(base):
    grid, f0, kernel, f_traj, g2 = base
    with pytest.raises(ValueError):
        solve_fN(f0, kernel, g2, 10, 0.4)
