"""Phase-space grids in ``d = 1``: periodic in ``x``, truncated in ``v``.

Velocity nodes are the interior points of a homogeneous Dirichlet problem on
``[-v_max, v_max]``: ``v_i = -v_max + (i + 1) h`` with ``h = 2 v_max / (n_v + 1)``,
so the (zero) boundary values are never stored.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .particles import _HEADER

_GRID_MAGIC = b"MCLABG1\x00"


@dataclass(frozen=True)
class PhaseGrid:
    n_x: int = 64
    n_v: int = 128
    v_max: float = 8.0
    dt: float = 1e-3

    def __post_init__(self):
        # even sizes rather than powers of two: the 48-point refinement level
        # used for self-convergence needs it
        for name in ("n_x", "n_v"):
            n = getattr(self, name)
            if int(n) != n or n < 4 or n % 2:
                raise ValueError(f"{name} must be an even integer >= 4")
        if not self.v_max > 0 or not math.isfinite(self.v_max):
            raise ValueError("v_max must be positive")
        if not self.dt > 0:
            raise ValueError("dt must be positive")

    @property
    def dx(self):
        return 1.0 / self.n_x

    @property
    def dv(self):
        return 2.0 * self.v_max / (self.n_v + 1)

    @property
    def cell_volume(self):
        return self.dx * self.dv

    @property
    def x(self):
        return np.arange(self.n_x) / self.n_x

    @property
    def v(self):
        return -self.v_max + self.dv * np.arange(1, self.n_v + 1)

    @property
    def shape(self):
        return (self.n_x, self.n_v)

    def refined(self, factor_x=2, factor_v=2, dt_factor=0.5):
        return PhaseGrid(int(self.n_x * factor_x), int(self.n_v * factor_v), self.v_max,
                         self.dt * dt_factor)

    def tabulate(self, func):
        """``func(x, v)`` evaluated on the grid."""
        return np.asarray(func(self.x[:, None], self.v[None, :]), dtype=float) + np.zeros(self.shape)

    @classmethod
    def from_config(cls, section, v_max=None):
        vm = section.get("vmax", "auto")
        vm = v_max if str(vm).strip() == "auto" else float(vm)
        return cls(int(section.get("nx", 64)), int(section.get("nv", 128)),
                   8.0 if vm is None else float(vm), float(section.get("dt", 1e-3)))


def auto_vmax(velocity_variance, t_end, floor=8.0):
    """Smallest admissible truncation: six free-diffusion standard deviations at ``t_end``."""
    return max(floor, 6.0 * math.sqrt(velocity_variance + 2.0 * t_end))


@dataclass
class GridFunction:
    grid: PhaseGrid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values of shape {self.values.shape} do not fit grid {self.grid.shape}")

    @classmethod
    def from_law(cls, grid, law, time=0.0):
        """Tabulate an :class:`~mclab.particles.InitialLaw` density."""
        return cls(grid, grid.tabulate(law.density), time)

    def mass(self):
        return float(self.values.sum() * self.grid.cell_volume)

    def density(self):
        """Spatial density ``int f dv`` on the ``x`` grid."""
        return self.values.sum(axis=1) * self.grid.dv

    def integrate(self, phi):
        """``int phi f``; ``phi`` is an observable or a callable ``(x, v)``."""
        table = phi.on_grid(self.grid) if hasattr(phi, "on_grid") else self.grid.tabulate(phi)
        return float(np.sum(table * self.values) * self.grid.cell_volume)

    def velocity_moment(self, order):
        return float(np.sum(self.values * self.grid.v[None, :] ** order) * self.grid.cell_volume)

    def min_relative(self):
        top = np.abs(self.values).max()
        return float(self.values.min() / top) if top > 0 else 0.0

    def copy(self):
        return GridFunction(self.grid, self.values.copy(), self.time)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("x", "v", "value"))
            for i, x in enumerate(self.grid.x):
                for j, v in enumerate(self.grid.v):
                    w.writerow((repr(float(x)), repr(float(v)), repr(float(self.values[i, j]))))


@dataclass
class GridFunction4:
    """Two-particle function on ``grid x grid``, axes ``(x1, v1, x2, v2)``."""

    grid: PhaseGrid
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape * 2:
            raise ValueError("values do not fit the two-particle grid")

    @property
    def grids(self):
        return (self.grid, self.grid)

    def swapped(self):
        return self.values.transpose(2, 3, 0, 1)

    def symmetry_defect(self):
        return float(np.abs(self.values - self.swapped()).max())

    def project(self, phi, psi=None):
        """``int phi(z1) psi(z2) G(z1, z2)`` (``psi`` defaults to ``phi``)."""
        a = phi.on_grid(self.grid)
        b = a if psi is None else psi.on_grid(self.grid)
        return float(np.einsum("ij,ijkl,kl->", a, self.values, b) * self.grid.cell_volume ** 2)

    def marginal(self):
        """``int G(z1, z2) dz2`` on the one-particle grid."""
        return self.values.sum(axis=(2, 3)) * self.grid.cell_volume


# ---------------------------------------------------------------------------
# binary layout shared with ensemble snapshots: same header record, then v_max
# and the float64 values in C order

def dump_grid(g, path, step=0):
    rank = g.values.ndim
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_GRID_MAGIC, g.grid.n_x, g.grid.n_v, rank, float(g.time), 0,
                              int(step), 0))
        fh.write(np.array([g.grid.v_max, g.grid.dt], dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(g.values, dtype="<f8").tobytes())


def load_grid(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, nx, nv, rank, t, _, _, _ = _HEADER.unpack_from(raw, 0)
    if magic != _GRID_MAGIC:
        raise ValueError("not a grid snapshot")
    vmax, dt = np.frombuffer(raw, "<f8", 2, _HEADER.size)
    grid = PhaseGrid(nx, nv, float(vmax), float(dt))
    vals = np.frombuffer(raw, "<f8", offset=_HEADER.size + 16).copy()
    if rank == 2:
        return GridFunction(grid, vals.reshape(nx, nv), t)
    return GridFunction4(grid, vals.reshape(nx, nv, nx, nv), t)
