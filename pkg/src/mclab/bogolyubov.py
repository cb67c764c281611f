"""Two-particle Bogolyubov correlation ``G2`` and the limiting CLT variance.

``G2(t, z1, z2)`` solves

    d_t G + (L_f (x) 1 + 1 (x) L_f) G = S,     G(0) = 0,
    L_f h = v d_x h - d_v^2 h + (K * f) d_v h + (K * h)(x) d_v f,
    S = -[K(x1 - x2) - (K * f)(x1)] d_v1 f(z1) f(z2) - (1 <-> 2),

on the product of two copies of a one-particle phase grid.  A step of size
``dt`` is the palindrome

    P(dt/2)  ->  B(dt)  ->  P(dt/2)^T,

where ``P`` applies the local one-particle flows (free transport, shift by
the mean field, velocity diffusion) along each particle's axes and ``B`` is a
midpoint Runge-Kutta step for the nonlocal terms ``(K * h) d_v f`` and the
source.  Only reduced quantities are stored along the run: projections
``int phi (x) phi G`` and the field ``T(z) = int K(x - x*) G(z, z*) dz*``
needed by the corrected one-particle equation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grids import GridFunction4
from .kernels import force
from .kinetic_pde import (apply_v, crank_nicolson, d_v, field_of, free_transport,
                          lagrange_shift_matrices, solve_vfp)

SYMMETRY_TOL = 1e-8


class SymmetryDriftError(RuntimeError):
    pass


@dataclass
class BogolyubovTrajectory:
    grid: object
    times: np.ndarray
    reduced: np.ndarray
    projections: dict
    snapshots: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    @property
    def final(self):
        t = max(self.snapshots)
        return self.snapshots[t]

    def at(self, t):
        for s, g in self.snapshots.items():
            if abs(s - t) <= 0.5 * self.grid.dt:
                return g
        raise ValueError(f"no stored two-particle field at t={t}")

    def projection(self, name, t):
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 0.5 * self.grid.dt:
            raise ValueError(f"time {t} outside the run")
        return float(self.projections[name][i])


class _Solver:
    def __init__(self, kernel, grid, source_scale=1.0):
        self.grid = grid
        # modes the grid cannot represent are dropped everywhere
        self.kernel = kernel.truncated(max(1, grid.n_x // 2 - 1))
        self.kxx = force(self.kernel, grid.x[:, None], grid.x[None, :])
        self.cn = crank_nicolson(grid, 0.5 * grid.dt)
        self.trans = self._transport_matrices(0.5 * grid.dt)
        k = np.arange(grid.n_x // 2 + 1)
        self.phase = np.exp(-1j * np.pi * grid.dt * k[:, None] * grid.v[None, :])
        self.source_scale = source_scale

    def _transport_matrices(self, tau):
        """``T[v]`` with ``(T[v] g)(x) = g(x - v tau)`` (exact for the grid's Fourier modes)."""
        nx, nv = self.grid.shape
        basis = np.broadcast_to(np.eye(nx)[:, None, :], (nx, nv, nx))
        return np.ascontiguousarray(free_transport(basis, self.grid, tau).transpose(1, 0, 2))

    def _local(self, g, field_x, reverse):
        """Local one-particle flows over ``dt/2`` along both particles' axes.

        Every sub-flow is a small matrix applied to strided views, so the
        four-dimensional array is never transposed.
        """
        grid = self.grid
        nx, nv = grid.shape
        shift = lagrange_shift_matrices(grid, field_x * 0.5 * grid.dt)
        trans, cn = self.trans, self.cn
        out = np.empty_like(g)

        def x1(a, b):
            for j in range(nv):
                np.matmul(trans[j], a[:, j].reshape(nx, -1), out=b[:, j].reshape(nx, -1))

        def v1(a, b):
            np.matmul(shift, a.reshape(nx, nv, -1), out=b.reshape(nx, nv, -1))

        def d1(a, b):
            np.matmul(cn, a.reshape(nx, nv, -1), out=b.reshape(nx, nv, -1))

        def x2(a, b):
            # strided small products are slow along this axis; a real FFT is not
            b[...] = np.fft.irfft(np.fft.rfft(a, axis=2) * self.phase, n=nx, axis=2)

        def v2(a, b):
            a3, b3 = a.reshape(-1, nx, nv), b.reshape(-1, nx, nv)
            for i in range(nx):
                np.matmul(a3[:, i, :], shift[i].T, out=b3[:, i, :])

        def d2(a, b):
            np.matmul(a.reshape(-1, nv), cn.T, out=b.reshape(-1, nv))

        ops = [x1, v1, d1, x2, v2, d2]
        if reverse:
            ops = [d2, v2, x2, d1, v1, x1]
        for op in ops:
            op(g, out)
            g, out = out, g
        return g

    def _half_rhs(self, g, f):
        """First-particle half of the right-hand side; the full one is ``r + swap(r)``.

        Both the source and the nonlocal term are sums of a first-particle
        term and its mirror image (the latter because ``g`` is symmetric).
        """
        grid = self.grid
        dvf = d_v(f, grid)
        fld = field_of(self.kernel, f, grid)
        e1 = field_of(self.kernel, g, grid)               # (x1, x2, v2)
        src = self.source_scale * (self.kxx - fld[:, None])[:, None, :, None] * f[None, None]
        return -dvf[:, :, None, None] * (src + e1[:, None, :, :])

    def source(self, f):
        a = self._half_rhs(np.zeros(self.grid.shape * 2), f)
        return a + a.transpose(2, 3, 0, 1)

    def rhs(self, g, f):
        a = self._half_rhs(g, f)
        return a + a.transpose(2, 3, 0, 1)

    def reduced(self, g):
        rho2 = g.sum(axis=3) * self.grid.dv                  # (x1, v1, x*)
        return np.einsum("ac,abc->ab", self.kxx, rho2) * self.grid.dx

    def step(self, g, f0, f1):
        dt = self.grid.dt
        g = self._local(g, field_of(self.kernel, f0, self.grid), False)
        fm = 0.5 * (f0 + f1)
        g_half = g + 0.5 * dt * self.rhs(g, f0)
        g = g + dt * self.rhs(g_half, fm)
        return self._local(g, field_of(self.kernel, f1, self.grid), True)

    def rate_bound(self, f):
        sup_k = float(np.abs(self.kernel.force_coeffs).sum())
        l1 = float(np.abs(d_v(f, self.grid)).sum() * self.grid.cell_volume)
        return 2.0 * sup_k * l1


def solve_bogolyubov(f_traj, kernel, t_end, family=(), store_times=(), source_scale=1.0):
    """Integrate the Bogolyubov equation along a stored mean-field trajectory.

    ``f_traj`` must hold every step of :func:`~mclab.kinetic_pde.solve_vfp` on
    the one-particle grid used here.  ``family`` lists observables whose
    projections ``int phi (x) phi G`` are recorded at every step; full fields
    are kept only at ``store_times``.  ``source_scale`` multiplies the source
    (test hook for the linearity check).
    """
    grid = f_traj.grid
    n = int(round((t_end - f_traj.times[0]) / grid.dt))
    if len(f_traj) < n + 1 or np.any(np.abs(np.diff(f_traj.times[:n + 1]) - grid.dt) > 1e-9):
        raise ValueError("mean-field trajectory must store every solver step up to t_end")
    sol = _Solver(kernel, grid, source_scale)
    nx, nv = grid.shape
    g = np.zeros((nx, nv, nx, nv))
    tabs = {phi.name: phi.on_grid(grid) for phi in family}
    keep = {int(round((t - f_traj.times[0]) / grid.dt)) for t in store_times}
    reduced = np.empty((n + 1, nx, nv))
    proj = {name: np.empty(n + 1) for name in tabs}
    snaps = {}
    worst_sym = 0.0
    worst_rate = 0.0
    cv2 = grid.cell_volume ** 2
    for s in range(n + 1):
        t = float(f_traj.times[s])
        reduced[s] = sol.reduced(g)
        for name, tab in tabs.items():
            proj[name][s] = np.einsum("ij,ijkl,kl->", tab, g, tab) * cv2
        if s in keep:
            snaps[t] = GridFunction4(grid, g.copy(), t)
        if s == n:
            break
        rate = sol.rate_bound(f_traj.values[s])
        worst_rate = max(worst_rate, rate * grid.dt)
        if rate * grid.dt > 1.0:
            raise ValueError(f"explicit nonlocal step violates its stability bound "
                             f"(dt * rate = {rate * grid.dt:.3g}); reduce dt")
        g = sol.step(g, f_traj.values[s], f_traj.values[s + 1])
        sym = float(np.abs(g - g.transpose(2, 3, 0, 1)).max())
        worst_sym = max(worst_sym, sym)
        if sym > SYMMETRY_TOL * max(1.0, float(np.abs(g).max())):
            raise SymmetryDriftError(f"swap symmetry defect {sym:.3g} at t={t + grid.dt:.6g}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite two-particle field")
    diag = {"symmetry_defect": worst_sym, "dt_rate": worst_rate,
            "k_max_used": sol.kernel.k_max, "k_max_requested": kernel.k_max}
    return BogolyubovTrajectory(grid, np.asarray(f_traj.times[:n + 1], dtype=float), reduced,
                                proj, snaps, diag)


def solve_from_initial(f0, kernel, t_end, family=(), store_times=()):
    """Mean-field run plus Bogolyubov run on the same grid."""
    f_traj = solve_vfp(f0, kernel, t_end)
    return f_traj, solve_bogolyubov(f_traj, kernel, t_end, family, store_times)


def limiting_variance(g2, f, phi, tol=1e-8):
    """``int phi (x) phi G2 + int (phi - int phi f)^2 f``."""
    if abs(g2.time - f.time) > 0.5 * f.grid.dt + 1e-12:
        raise ValueError("G2 and f are not at the same time")
    return limiting_variance_from_projection(g2.project(phi), f, phi, tol)


def limiting_variance_from_projection(proj, f, phi, tol=1e-8):
    """Same formula from a stored projection ``int phi (x) phi G2``."""
    tab = phi.on_grid(f.grid)
    mean = float(np.sum(tab * f.values) * f.grid.cell_volume)
    centred = float(np.sum((tab - mean) ** 2 * f.values) * f.grid.cell_volume)
    value = proj + centred
    if value < -tol:
        raise ValueError(f"negative limiting variance {value:.3g}: solver inconsistency")
    return max(value, 0.0)


def marginal_defect(g2):
    """``max_z1 |int G2(z1, z2) dz2|`` (zero for an exact Bogolyubov solution)."""
    return float(np.abs(g2.marginal()).max())


def write_projection_csv(traj, path, every=1):
    """Long format ``time, phi_id, value``."""
    with open(path, "w") as fh:
        fh.write("time,phi_id,value\n")
        for i in range(0, len(traj.times), every):
            for name in sorted(traj.projections):
                fh.write(f"{traj.times[i]!r},{name},{traj.projections[name][i]!r}\n")


def duhamel_first_step(f0, kernel):
    """``dt * S(f0)``: the one-step Duhamel approximation of ``G2(dt)``."""
    sol = _Solver(kernel, f0.grid)
    return f0.grid.dt * sol.source(f0.values)


def norm_inf(g):
    return float(np.abs(g.values).max())

