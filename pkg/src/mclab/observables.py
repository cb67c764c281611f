"""Test functions projected against particle ensembles and grid densities."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class Observable:
    """Scalar test function of one particle's first position/velocity component."""

    name: str
    func: Callable

    def __call__(self, positions, velocities):
        x = np.asarray(positions)
        v = np.asarray(velocities)
        if x.ndim == 3:
            x = x[..., 0]
            v = v[..., 0]
        return self.func(x, v)

    def on_grid(self, grid):
        """Values on a phase grid, shape ``(n_x, n_v)``."""
        return self.func(grid.x[:, None], grid.v[None, :])

    def integrate(self, f):
        """``int phi f`` for a grid function."""
        return float(np.sum(self.on_grid(f.grid) * f.values) * f.grid.cell_volume)


def _cos(x, v):
    return np.cos(2 * np.pi * x) + 0.0 * v


def _sin(x, v):
    return np.sin(2 * np.pi * x) + 0.0 * v


def _vgauss(x, v):
    return v * np.exp(-0.25 * v * v) + 0.0 * x


def _cosv(x, v):
    return np.cos(2 * np.pi * x) * v


def _v2gauss(x, v):
    return v * v * np.exp(-0.25 * v * v) + 0.0 * x


def _cos2(x, v):
    return np.cos(4 * np.pi * x) + 0.0 * v


def _c1c2(x, v):
    return np.cos(2 * np.pi * x) + np.cos(4 * np.pi * x) + 0.0 * v


def _one(x, v):
    return np.ones(np.broadcast(x, v).shape)


OBSERVABLES = {
    "cos": Observable("cos", _cos),
    "sin": Observable("sin", _sin),
    "vgauss": Observable("vgauss", _vgauss),
    "cosv": Observable("cosv", _cosv),
    "v2gauss": Observable("v2gauss", _v2gauss),
    "cos2": Observable("cos2", _cos2),
    "c1c2": Observable("c1c2", _c1c2),
    "one": Observable("one", _one),
}
DEFAULT_FAMILY = ("cos", "sin", "vgauss", "cosv")


def get(name):
    try:
        return OBSERVABLES[name]
    except KeyError:
        raise ValueError(f"unknown observable {name!r}; known: {sorted(OBSERVABLES)}") from None


def family(names=DEFAULT_FAMILY):
    return [get(n) for n in names]
