"""Vlasov-Fokker-Planck solvers in ``d = 1``.

The mean-field equation

    d_t f + v d_x f - d_v^2 f + (K * f) d_v f = 0

is advanced by Strang splitting: half a step of free transport in ``x``
(exact, spectral phase shift per velocity row), then the velocity block, then
another half transport step.  The velocity block freezes the field
``a(x) = (K * f)(x)`` at the half step and applies half a semi-Lagrangian shift
``v -> v - a tau`` (cubic Lagrange), a Crank-Nicolson diffusion step with
homogeneous Dirichlet walls at ``+-v_max``, and the second half shift.

On a uniform grid the cubic Lagrange weights sum to one for every node and a
row is shifted by a constant, so the shift conserves mass up to the small
flux through the walls.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .grids import GridFunction, PhaseGrid
from .kernels import convolve_density, weight_value

MASS_DRIFT_RATE = 1e-6
TOL_NEG = 1e-8


class MassDriftError(RuntimeError):
    """Mass drift exceeded the per-unit-time budget."""


class NegativeOvershootWarning(UserWarning):
    pass


# ---------------------------------------------------------------------------
# one-particle sub-flows, acting on arrays shaped (n_x, n_v, ...)

def lagrange_shift_matrices(grid, shifts):
    """Matrices ``M[x]`` with ``(M[x] g)(v_i) = g(v_i - shifts[x])`` (cubic Lagrange, zero walls)."""
    shifts = np.atleast_1d(np.asarray(shifts, dtype=float))
    nx, nv = shifts.size, grid.n_v
    p = np.arange(nv)[None, :] - shifts[:, None] / grid.dv
    j = np.floor(p)
    th = p - j
    j = j.astype(np.int64)
    w = ((-th * (th - 1) * (th - 2) / 6, (th + 1) * (th - 1) * (th - 2) / 2,
          -(th + 1) * th * (th - 2) / 2, (th + 1) * th * (th - 1) / 6))
    m = np.zeros((nx, nv, nv))
    xx, ii = np.meshgrid(np.arange(nx), np.arange(nv), indexing="ij")
    for off, wo in zip((-1, 0, 1, 2), w):
        col = j + off
        ok = (col >= 0) & (col < nv)
        m[xx[ok], ii[ok], col[ok]] += wo[ok]
    return m


def laplacian_v(grid):
    nv = grid.n_v
    d = (np.diag(np.full(nv - 1, 1.0), -1) - 2 * np.eye(nv) + np.diag(np.full(nv - 1, 1.0), 1))
    return d / grid.dv ** 2


def crank_nicolson(grid, tau):
    """Dense propagator of ``d_t g = d_v^2 g`` over ``tau`` with Dirichlet walls."""
    lap = laplacian_v(grid)
    eye = np.eye(grid.n_v)
    return np.linalg.solve(eye - 0.5 * tau * lap, eye + 0.5 * tau * lap)


def apply_v(a, m):
    """Apply ``m`` (``(n_v, n_v)`` or per-``x`` ``(n_x, n_v, n_v)``) along axis 1."""
    nx, nv = a.shape[:2]
    flat = a.reshape(nx, nv, -1)
    return np.matmul(m, flat).reshape(a.shape)


def free_transport(a, grid, tau):
    """Exact ``d_t g + v d_x g = 0`` over ``tau`` along axis 0."""
    k = np.arange(a.shape[0] // 2 + 1)
    phase = np.exp(-2j * np.pi * k[:, None] * grid.v[None, :] * tau)
    phase = phase.reshape(phase.shape + (1,) * (a.ndim - 2))
    return np.fft.irfft(np.fft.rfft(a, axis=0) * phase, n=a.shape[0], axis=0)


def d_v(a, grid):
    """Centred velocity derivative along axis 1 with zero wall values."""
    pad = [(0, 0)] * a.ndim
    pad[1] = (1, 1)
    b = np.pad(a, pad)
    return (b[:, 2:] - b[:, :-2]) / (2 * grid.dv)


def field_of(kernel, values, grid, which="force"):
    """``(K * g)(x)`` (or ``W * g``) for values shaped ``(n_x, n_v, ...)``."""
    rho = values.sum(axis=1) * grid.dv
    return convolve_density(kernel, rho, which, axis=0)


# ---------------------------------------------------------------------------
# trajectories

@dataclass
class Trajectory:
    """Solution snapshots ``values[i]`` at ``times[i]`` plus run diagnostics."""

    grid: PhaseGrid
    times: np.ndarray
    values: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.times)

    def index(self, t, tol=None):
        tol = 0.5 * self.grid.dt if tol is None else tol
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > tol:
            raise ValueError(f"time {t} not stored in trajectory")
        return i

    def at(self, t):
        i = self.index(t)
        return GridFunction(self.grid, self.values[i], float(self.times[i]))

    @property
    def final(self):
        return GridFunction(self.grid, self.values[-1], float(self.times[-1]))


def _check_initial(f0):
    if not np.all(np.isfinite(f0.values)):
        raise ValueError("initial data must be finite")
    if f0.values.min() < -TOL_NEG * f0.values.max():
        raise ValueError("initial data must be nonnegative")
    m = f0.mass()
    if abs(m - 1.0) > 1e-6:
        raise ValueError(f"initial data must have unit mass (got {m:.8g})")


def _steps(f0, t_end):
    if t_end < f0.time:
        raise ValueError("t_end precedes the initial time")
    return int(round((t_end - f0.time) / f0.grid.dt))


class _VFPStepper:
    """Strang step of the (possibly source-corrected) mean-field equation."""

    def __init__(self, grid, kernel):
        if kernel.dim != 1:
            raise ValueError("PDE solvers are implemented for d = 1 only")
        self.grid = grid
        self.kernel = kernel
        self.cn = crank_nicolson(grid, grid.dt)
        self.zero = kernel.is_zero

    def step(self, f, source=None):
        g = self.grid
        h = 0.5 * g.dt
        f = free_transport(f, g, h)
        field_x = None
        if not self.zero:
            field_x = field_of(self.kernel, f, g)
            m = lagrange_shift_matrices(g, field_x * h)
            f = apply_v(f, m)
        f = apply_v(f, self.cn)
        if source is not None:
            f = f + g.dt * source
        if not self.zero:
            f = apply_v(f, m)
        f = free_transport(f, g, h)
        return f, field_x


def _store_mask(n_steps, dt, t0, sample_times):
    if sample_times is None:
        return set(range(n_steps + 1))
    return {int(round((t - t0) / dt)) for t in sample_times}


def _field_diagnostics(kernel, f, grid, prev, dt):
    w = field_of(kernel, f, grid, "potential")
    dwx = np.gradient(np.concatenate([w[-1:], w, w[:1]]), grid.dx)[1:-1]
    dwt = 0.0 if prev is None else float(np.abs(w - prev).max() / dt)
    return w, float(np.abs(w).max()), float(np.abs(dwx).max()), dwt


def _solve(f0, kernel, t_end, sample_times, source_fn):
    _check_initial(f0)
    grid = f0.grid
    n = _steps(f0, t_end)
    keep = _store_mask(n, grid.dt, f0.time, sample_times)
    stepper = _VFPStepper(grid, kernel)
    f = f0.values.copy()
    m0 = f0.mass()
    times, snaps = [], []
    diag = {"mass_drift": 0.0, "min_relative": f0.min_relative(), "sup_W_f": 0.0,
            "sup_dx_W_f": 0.0, "sup_dt_W_f": 0.0, "steps": n, "negative_warning": False}
    prev_w = None
    for s in range(n + 1):
        t = f0.time + s * grid.dt
        if s in keep:
            times.append(t)
            snaps.append(f.copy())
        prev_w, w_sup, wx_sup, wt_sup = _field_diagnostics(kernel, f, grid, prev_w, grid.dt)
        diag["sup_W_f"] = max(diag["sup_W_f"], w_sup)
        diag["sup_dx_W_f"] = max(diag["sup_dx_W_f"], wx_sup)
        diag["sup_dt_W_f"] = max(diag["sup_dt_W_f"], wt_sup)
        if s == n:
            break
        src = None if source_fn is None else source_fn(s, t + 0.5 * grid.dt)
        f, _ = stepper.step(f, src)
        if not np.all(np.isfinite(f)):
            raise FloatingPointError(f"non-finite PDE state at t={t + grid.dt:.6g}")
        drift = abs(f.sum() * grid.cell_volume - m0)
        diag["mass_drift"] = max(diag["mass_drift"], drift)
        elapsed = t + grid.dt - f0.time
        if drift > MASS_DRIFT_RATE * elapsed + 1e-13:
            raise MassDriftError(f"mass drift {drift:.3g} at t={t + grid.dt:.6g} exceeds "
                                 f"{MASS_DRIFT_RATE:g} per unit time; increase v_max")
        rel = f.min() / max(np.abs(f).max(), 1e-300)
        diag["min_relative"] = min(diag["min_relative"], float(rel))
    if diag["min_relative"] < -TOL_NEG and source_fn is None:
        diag["negative_warning"] = True
        warnings.warn(f"negative overshoot {diag['min_relative']:.3g} x max(f)",
                      NegativeOvershootWarning, stacklevel=3)
    return Trajectory(grid, np.array(times), np.array(snaps), diag)


def solve_vfp(f0, kernel, t_end, sample_times=None):
    """Mean-field solution from ``f0`` to ``t_end``.

    Snapshots are kept at every step unless ``sample_times`` is given (times
    snap to the nearest step).  Diagnostics report the maximal mass drift, the
    most negative value relative to ``max f`` and the sup norms of ``W * f``
    and its ``x``/``t`` derivatives.
    """
    return _solve(f0, kernel, t_end, sample_times, None)


def _interp_x(a, n_x):
    """Trigonometric interpolation of axis 0 onto ``n_x`` points."""
    m = a.shape[0]
    if m == n_x:
        return a
    spec = np.fft.rfft(a, axis=0)
    keep = min(m, n_x) // 2
    out = np.zeros((n_x // 2 + 1,) + a.shape[1:], dtype=complex)
    out[:keep] = spec[:keep]
    return np.fft.irfft(out, n=n_x, axis=0) * (n_x / m)


def _interp_v(a, src_grid, dst_grid):
    if src_grid.n_v == dst_grid.n_v and src_grid.v_max == dst_grid.v_max:
        return a
    from scipy.interpolate import CubicSpline

    v = np.concatenate([[-src_grid.v_max], src_grid.v, [src_grid.v_max]])
    pad = np.zeros((a.shape[0], 1))
    spline = CubicSpline(v, np.hstack([pad, a, pad]), axis=1)
    out = spline(np.clip(dst_grid.v, -src_grid.v_max, src_grid.v_max))
    out[:, np.abs(dst_grid.v) > src_grid.v_max] = 0.0
    return out


def solve_fN(f0, kernel, g2, n_particles, t_end, f_traj=None, sample_times=None):
    """Bogolyubov-corrected one-particle density ``f_N``.

    ``g2`` is a :class:`~mclab.bogolyubov.BogolyubovTrajectory`; only its
    reduced field ``T(z) = int K(x - x*) G2(z, z*) dz*`` enters the source

        -(1/N) d_v T + (1/N) (K * f) d_v f,

    the second term being ``-(1/N) int K d_v (-f (x) f)``.  ``T`` is
    interpolated onto this solver's grid (trigonometric in ``x``, cubic in
    ``v``) and linearly in time.  ``f`` is the mean-field trajectory on the same
    grid; it is solved here when not supplied.
    """
    if not n_particles >= 1:
        raise ValueError("N must be positive")
    grid = f0.grid
    n = _steps(f0, t_end)
    if g2.times[0] > f0.time + 1e-12 or g2.times[-1] < t_end - 1e-9:
        raise ValueError("Bogolyubov trajectory does not cover the requested time span")
    if f_traj is None:
        f_traj = solve_vfp(f0, kernel, t_end)
    if len(f_traj) != n + 1 or abs(f_traj.times[-1] - (f0.time + n * grid.dt)) > 1e-9 \
            or f_traj.grid != grid:
        raise ValueError("mean-field trajectory is not aligned with the solver steps")
    src_grid = g2.grid
    inv_n = 1.0 / n_particles

    def reduced_at(t):
        k = np.searchsorted(g2.times, t) - 1
        k = min(max(k, 0), len(g2.times) - 2)
        lam = (t - g2.times[k]) / (g2.times[k + 1] - g2.times[k])
        red = (1 - lam) * g2.reduced[k] + lam * g2.reduced[k + 1]
        return _interp_v(_interp_x(red, grid.n_x), src_grid, grid)

    def source(s, t_mid):
        f_mid = 0.5 * (f_traj.values[s] + f_traj.values[s + 1])
        fld = field_of(kernel, f_mid, grid)
        return inv_n * (-d_v(reduced_at(t_mid), grid) + fld[:, None] * d_v(f_mid, grid))

    return _solve(f0, kernel, t_end, sample_times, None if kernel.is_zero else source)


def weighted_norm(g, w, t):
    """``(sum g^2 omega_beta(t) cellvol)^(1/2)``; two-particle functions use the product weight."""
    grid = g.grid
    beta = w.beta_at(t)
    if 0.5 * beta * grid.v_max ** 2 * max(1, g.values.ndim // 2) > 700:
        raise ValueError("weight overflows on the truncated velocity domain; reduce beta or v_max")
    om = weight_value(w, t, grid.v[:, None])
    vals = g.values
    if vals.ndim == 2:
        total = np.sum(vals ** 2 * om[None, :]) * grid.cell_volume
    else:
        total = np.sum(vals ** 2 * om[None, :, None, None] * om[None, None, None, :]) \
            * grid.cell_volume ** 2
    return float(math.sqrt(total))


@dataclass
class ProjectionError:
    """Signed errors ``int phi (F_{N,1} - f)`` per observable and their norm."""

    names: list
    values: np.ndarray
    stderr: np.ndarray
    norm: float
    norm_se: float
    time: float = 0.0


def projection_error(f_pde, state, family, twin_baseline=None):
    """Per-observable ``(1/NS) sum phi(Z) - int phi f_pde`` with replica standard errors.

    With ``twin_baseline`` (the PDE solution the ensemble's mean-field twins
    sample, on any grid) the estimator is the paired difference
    ``mean(phi(Z) - phi(Y)) + int phi (twin_baseline - f_pde)``, which has the
    same expectation up to the twins' own ``O(1/(NS))`` and discretisation
    errors, and far smaller variance.
    """
    if abs(f_pde.time - state.time) > 0.5 * f_pde.grid.dt + 1e-12:
        raise ValueError("PDE snapshot and ensemble are not time aligned")
    names = [phi.name for phi in family]
    if not family:
        return ProjectionError(names, np.zeros(0), np.zeros(0), 0.0, 0.0, state.time)
    s = state.n_replicas
    vals, ses = [], []
    for phi in family:
        per = phi(state.positions, state.velocities).mean(axis=1)
        offset = -f_pde.integrate(phi)
        if twin_baseline is not None:
            if not state.has_twin:
                raise ValueError("twin baseline requested but the state carries no twins")
            per = per - phi(state.twin_positions, state.twin_velocities).mean(axis=1)
            offset += twin_baseline.integrate(phi)
        vals.append(per.mean() + offset)
        ses.append(per.std(ddof=1) / math.sqrt(s) if s > 1 else float("nan"))
    vals = np.array(vals)
    ses = np.array(ses)
    norm = float(np.sqrt(np.sum(vals ** 2)))
    norm_se = float(np.sqrt(np.sum((vals * ses) ** 2)) / norm) if norm > 0 else float(
        np.sqrt(np.sum(ses ** 2)))
    return ProjectionError(names, vals, ses, norm, norm_se, state.time)


def hypothesis_report(traj):
    """Numerical check of the ``W * f`` regularity hypothesis along a run."""
    d = traj.diagnostics
    return {"sup_W_f": d["sup_W_f"], "sup_dx_W_f": d["sup_dx_W_f"], "sup_dt_W_f": d["sup_dt_W_f"]}
