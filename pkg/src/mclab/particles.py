"""Ensembles of mean-field Langevin particles on the torus.

``S`` independent replicas of ``N`` exchangeable particles are advanced with an
explicit Euler-Maruyama scheme.  The underdamped update is

    V <- V + dt * F(X) + sqrt(2 dt) xi
    X <- X + dt * V          (post-update velocity, symplectic-Euler flavour)

with ``F(X_i) = (1/N) sum_{j != i} K(X_i, X_j)`` evaluated in mode space in
``O(N k_max)``.  The noise ``xi`` of slot ``(replica, particle, step,
component)`` comes from :mod:`mclab.rng`, so trajectories are independent of
how replicas are split across worker threads.

An ensemble may carry a *mean-field twin*: a copy of every particle that feels
the field of the pooled cloud of all ``N*S`` twins instead of its own replica,
driven by the same noise.  Twin observables have (to ``O(1/(NS))``) the law of
the time-discretised mean-field limit and serve as control variates.
"""
from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .rng import INIT_TAG, MAX_DIM, check_seed, gaussians, uniform_pair


class NonFiniteStateError(FloatingPointError):
    """Raised when a step produces NaN or infinite coordinates."""


@dataclass(frozen=True)
class InitialLaw:
    """Product initial law: spatial density times a centred Gaussian in velocity.

    ``spatial`` is ``"uniform"`` or ``"one_mode"`` (density
    ``1 + amplitude * cos(2 pi x)`` in every coordinate).
    """

    spatial: str = "uniform"
    amplitude: float = 0.0
    velocity_variance: float = 1.0

    def __post_init__(self):
        if self.spatial not in ("uniform", "one_mode"):
            raise ValueError(f"unknown spatial law {self.spatial!r}")
        if self.spatial == "one_mode" and not -1.0 < self.amplitude < 1.0:
            raise ValueError("one_mode amplitude must lie in (-1, 1)")
        if not self.velocity_variance > 0:
            raise ValueError("velocity variance must be positive")

    @property
    def mode_amplitude(self):
        return self.amplitude if self.spatial == "one_mode" else 0.0

    def density(self, x, v):
        """Phase-space density in ``d = 1``."""
        s2 = self.velocity_variance
        gauss = np.exp(-0.5 * np.asarray(v) ** 2 / s2) / math.sqrt(2 * math.pi * s2)
        return (1.0 + self.mode_amplitude * np.cos(2 * np.pi * np.asarray(x))) * gauss

    @classmethod
    def from_config(cls, section):
        return cls(str(section.get("spatial", "uniform")).strip(),
                   float(section.get("amplitude", 0.0)),
                   float(section.get("velocity_variance", 1.0)))


@dataclass
class EnsembleState:
    """``S`` replicas of ``N`` particles; arrays are shaped ``(S, N, d)``."""

    positions: np.ndarray
    velocities: np.ndarray
    time: float = 0.0
    seed: int = 0
    step_count: int = 0
    replica_ids: np.ndarray | None = None
    particle_ids: np.ndarray | None = None
    twin_positions: np.ndarray | None = None
    twin_velocities: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=float)
        self.velocities = np.ascontiguousarray(self.velocities, dtype=float)
        if self.positions.ndim != 3 or self.positions.shape != self.velocities.shape:
            raise ValueError("positions and velocities must share shape (S, N, d)")
        s, n, _ = self.positions.shape
        if self.replica_ids is None:
            self.replica_ids = np.arange(s, dtype=np.int64)
        if self.particle_ids is None:
            self.particle_ids = np.arange(n, dtype=np.int64)
        self.replica_ids = np.ascontiguousarray(self.replica_ids, dtype=np.int64)
        self.particle_ids = np.ascontiguousarray(self.particle_ids, dtype=np.int64)

    @property
    def n_replicas(self):
        return self.positions.shape[0]

    @property
    def n_particles(self):
        return self.positions.shape[1]

    @property
    def dim(self):
        return self.positions.shape[2]

    @property
    def has_twin(self):
        return self.twin_positions is not None

    def copy(self):
        twin_x = None if self.twin_positions is None else self.twin_positions.copy()
        twin_v = None if self.twin_velocities is None else self.twin_velocities.copy()
        return replace(self, positions=self.positions.copy(),
                       velocities=self.velocities.copy(),
                       replica_ids=self.replica_ids.copy(),
                       particle_ids=self.particle_ids.copy(),
                       twin_positions=twin_x, twin_velocities=twin_v,
                       meta=dict(self.meta))

    def snapshot(self):
        """Read-only view handed to observers."""
        snap = self.copy()
        for arr in (snap.positions, snap.velocities, snap.twin_positions, snap.twin_velocities):
            if arr is not None:
                arr.setflags(write=False)
        return snap

    def with_twin(self):
        """Attach mean-field twins initialised on the current particles."""
        out = self.copy()
        out.twin_positions = self.positions.copy()
        out.twin_velocities = self.velocities.copy()
        return out

    def permuted(self, perm):
        """Relabel particles by ``perm`` (noise streams travel with their particle)."""
        perm = np.asarray(perm)
        out = self.copy()
        out.positions = np.ascontiguousarray(self.positions[:, perm])
        out.velocities = np.ascontiguousarray(self.velocities[:, perm])
        out.particle_ids = np.ascontiguousarray(self.particle_ids[perm])
        if self.has_twin:
            out.twin_positions = np.ascontiguousarray(self.twin_positions[:, perm])
            out.twin_velocities = np.ascontiguousarray(self.twin_velocities[:, perm])
        return out


# ---------------------------------------------------------------------------
# initial data

@njit(cache=True, nogil=True)
def _init_block(seed, replica_ids, particle_ids, amp, sigma, pos, vel):
    d = pos.shape[2]
    for r in range(pos.shape[0]):
        for p in range(pos.shape[1]):
            u0, u1 = uniform_pair(seed, replica_ids[r], particle_ids[p], 0, INIT_TAG)
            for c in range(d):
                u = u0 if c == 0 else u1
                x = u
                if amp != 0.0:
                    # invert the CDF x + amp sin(2 pi x) / (2 pi) by damped Newton
                    for _ in range(60):
                        g = x + amp * math.sin(2 * math.pi * x) / (2 * math.pi) - u
                        x_new = x - g / (1.0 + amp * math.cos(2 * math.pi * x))
                        x_new = min(max(x_new, 0.0), 1.0)
                        if abs(x_new - x) < 1e-15:
                            x = x_new
                            break
                        x = x_new
                if x >= 1.0:
                    x -= 1.0
                pos[r, p, c] = x
            u0, u1 = uniform_pair(seed, replica_ids[r], particle_ids[p], 1, INIT_TAG)
            rad = sigma * math.sqrt(-2.0 * math.log(u0))
            ang = 2.0 * math.pi * u1
            vel[r, p, 0] = rad * math.cos(ang)
            if d > 1:
                vel[r, p, 1] = rad * math.sin(ang)


def init_ensemble(n, s, d=1, law=None, seed=0, twin=False, replica_offset=0):
    """Draw ``S`` replicas of ``N`` i.i.d. particles from ``law``.

    Replica ids start at ``replica_offset``, so an ensemble can be built in
    batches whose replicas are the same as those of one large ensemble.
    """
    law = InitialLaw() if law is None else law
    if n < 1 or s < 1:
        raise ValueError("need at least one particle and one replica")
    if not 1 <= d <= MAX_DIM:
        raise ValueError(f"dim must be between 1 and {MAX_DIM}")
    seed = check_seed(seed)
    pos = np.empty((s, n, d))
    vel = np.empty((s, n, d))
    if replica_offset < 0:
        raise ValueError("replica_offset must be nonnegative")
    rid = np.arange(replica_offset, replica_offset + s, dtype=np.int64)
    pid = np.arange(n, dtype=np.int64)
    _init_block(int(seed), rid, pid, float(law.mode_amplitude),
                math.sqrt(law.velocity_variance), pos, vel)
    state = EnsembleState(pos, vel, 0.0, int(seed), 0, rid, pid)
    return state.with_twin() if twin else state


# ---------------------------------------------------------------------------
# stepping kernels

@njit(cache=True, nogil=True)
def _mode_sums(x, kmax, cos1, sin1, out_c, out_s):
    """``out_c[k-1] = sum_j cos(2 pi k x_j)`` (and sine); caches the first harmonic."""
    for k in range(kmax):
        out_c[k] = 0.0
        out_s[k] = 0.0
    for j in range(x.shape[0]):
        c1 = math.cos(2 * math.pi * x[j])
        s1 = math.sin(2 * math.pi * x[j])
        cos1[j] = c1
        sin1[j] = s1
        ck = c1
        sk = s1
        for k in range(kmax):
            out_c[k] += ck
            out_s[k] += sk
            ck, sk = ck * c1 - sk * s1, sk * c1 + ck * s1


@njit(cache=True, nogil=True)
def _field_at(c1, s1, fc, sum_c, sum_s, norm):
    """``norm * sum_k fc_k (sin(2 pi k x) C_k - cos(2 pi k x) S_k)`` given ``cos/sin(2 pi x)``."""
    ck = c1
    sk = s1
    acc = 0.0
    for k in range(fc.shape[0]):
        acc += fc[k] * (sk * sum_c[k] - ck * sum_s[k])
        ck, sk = ck * c1 - sk * s1, sk * c1 + ck * s1
    return acc * norm


@njit(cache=True, nogil=True)
def _wrap(x):
    y = x - math.floor(x)
    if y >= 1.0:
        y -= 1.0
    return y


@njit(cache=True, nogil=True)
def _advance_block(pos, vel, fc, seed, replica_ids, particle_ids, step0, nsteps,
                   dt, underdamped, noise_scale, override, has_override,
                   tpos, tvel, twin_c, twin_s, twin_norm, has_twin,
                   part_c, part_s):
    """Advance a block of replicas by ``nsteps``.

    With twins, ``nsteps`` must be 1; ``twin_c/twin_s`` hold the pooled mode
    sums (shape ``(d, kmax)``) and the new per-replica twin sums are written to
    ``part_c/part_s`` (shape ``(S_block, d, kmax)``).
    """
    n_rep, n, d = pos.shape
    kmax = fc.shape[0]
    sq = math.sqrt(2.0 * dt) * noise_scale
    inv_n = 1.0 / n
    xi = np.empty(2)
    sum_c = np.empty(kmax)
    sum_s = np.empty(kmax)
    xc = np.empty(n)
    cos1 = np.empty(n)
    sin1 = np.empty(n)
    frc = np.empty((n, d))
    tfrc = np.empty((n, d))
    for r in range(n_rep):
        for st in range(nsteps):
            step = step0 + st
            for c in range(d):
                for j in range(n):
                    xc[j] = pos[r, j, c]
                _mode_sums(xc, kmax, cos1, sin1, sum_c, sum_s)
                for j in range(n):
                    frc[j, c] = _field_at(cos1[j], sin1[j], fc, sum_c, sum_s, inv_n)
                if has_twin:
                    for j in range(n):
                        ang = 2 * math.pi * tpos[r, j, c]
                        tfrc[j, c] = _field_at(math.cos(ang), math.sin(ang), fc,
                                               twin_c[c], twin_s[c], twin_norm)
            for j in range(n):
                if has_override:
                    for c in range(d):
                        xi[c] = override[r, j, st, c]
                elif noise_scale != 0.0:
                    gaussians(seed, replica_ids[r], particle_ids[j], step, xi, d)
                else:
                    for c in range(d):
                        xi[c] = 0.0
                for c in range(d):
                    kick = sq * xi[c]
                    if underdamped:
                        v = vel[r, j, c] + dt * frc[j, c] + kick
                        vel[r, j, c] = v
                        pos[r, j, c] = _wrap(pos[r, j, c] + dt * v)
                        if has_twin:
                            tv = tvel[r, j, c] + dt * tfrc[j, c] + kick
                            tvel[r, j, c] = tv
                            tpos[r, j, c] = _wrap(tpos[r, j, c] + dt * tv)
                    else:
                        pos[r, j, c] = _wrap(pos[r, j, c] + dt * frc[j, c] + kick)
                        if has_twin:
                            tpos[r, j, c] = _wrap(tpos[r, j, c] + dt * tfrc[j, c] + kick)
        if has_twin:
            for c in range(d):
                for j in range(n):
                    xc[j] = tpos[r, j, c]
                _mode_sums(xc, kmax, cos1, sin1, sum_c, sum_s)
                for k in range(kmax):
                    part_c[r, c, k] = sum_c[k]
                    part_s[r, c, k] = sum_s[k]


@njit(cache=True, nogil=True)
def _twin_sums_block(tpos, kmax, part_c, part_s):
    n_rep, n, d = tpos.shape
    sum_c = np.empty(kmax)
    sum_s = np.empty(kmax)
    xc = np.empty(n)
    cos1 = np.empty(n)
    sin1 = np.empty(n)
    for r in range(n_rep):
        for c in range(d):
            for j in range(n):
                xc[j] = tpos[r, j, c]
            _mode_sums(xc, kmax, cos1, sin1, sum_c, sum_s)
            for k in range(kmax):
                part_c[r, c, k] = sum_c[k]
                part_s[r, c, k] = sum_s[k]


def _blocks(s, threads):
    """Contiguous replica slices; the split never changes any replica's arithmetic."""
    nblk = max(1, min(s, 4 * threads))
    edges = np.linspace(0, s, nblk + 1).astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


class Integrator:
    """Steps an :class:`EnsembleState` in place.

    ``threads`` only changes scheduling; outputs are bitwise identical for any
    value.  ``noise_scale`` and ``noise_override`` are test hooks (noise off,
    forced noise of shape ``(S, N, nsteps, d)``).
    """

    def __init__(self, kernel, dt, dynamics="underdamped", threads=1,
                 noise_scale=1.0, noise_override=None):
        if not dt > 0:
            raise ValueError("dt must be positive")
        if dynamics not in ("underdamped", "overdamped"):
            raise ValueError(f"unknown dynamics {dynamics!r}")
        self.kernel = kernel
        self.dt = float(dt)
        self.dynamics = dynamics
        self.threads = max(1, int(threads))
        self.noise_scale = float(noise_scale)
        self.noise_override = noise_override
        self._fc = np.ascontiguousarray(kernel.force_coeffs, dtype=float)
        self._pool = ThreadPoolExecutor(self.threads) if self.threads > 1 else None

    def close(self):
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _map(self, fn, blocks):
        if self._pool is None:
            for b in blocks:
                fn(b)
        else:
            list(self._pool.map(fn, blocks))

    def _twin_sums(self, state):
        s, _, d = state.positions.shape
        kmax = self._fc.shape[0]
        part_c = np.empty((s, d, kmax))
        part_s = np.empty((s, d, kmax))
        self._map(lambda b: _twin_sums_block(state.twin_positions[b], kmax,
                                             part_c[b], part_s[b]), _blocks(s, self.threads))
        return part_c, part_s

    def advance(self, state, nsteps):
        """Advance ``state`` in place by ``nsteps`` steps."""
        if state.dim != self.kernel.dim:
            raise ValueError("state and kernel dimensions differ")
        if nsteps <= 0:
            return state
        s, n, d = state.positions.shape
        kmax = self._fc.shape[0]
        override = self.noise_override
        has_override = override is not None
        if not has_override:
            override = np.zeros((1, 1, 1, 1))
        underdamped = self.dynamics == "underdamped"
        blocks = _blocks(s, self.threads)

        if not state.has_twin:
            dummy3 = np.zeros((1, 1, 1))
            dummy2 = np.zeros((d, kmax))

            def work(b):
                ov = override[b] if has_override else override
                _advance_block(state.positions[b], state.velocities[b], self._fc, state.seed,
                               state.replica_ids[b], state.particle_ids, state.step_count,
                               nsteps, self.dt, underdamped, self.noise_scale, ov,
                               has_override, dummy3, dummy3, dummy2, dummy2, 0.0, False,
                               dummy3, dummy3)

            self._map(work, blocks)
        else:
            part_c, part_s = self._twin_sums(state)
            norm = 1.0 / (n * s)
            for st in range(nsteps):
                # fixed-order pooled reduction keeps thread count irrelevant
                twin_c = np.ascontiguousarray(part_c.sum(axis=0))
                twin_s = np.ascontiguousarray(part_s.sum(axis=0))
                step = state.step_count + st

                def work(b, st=st, step=step, twin_c=twin_c, twin_s=twin_s):
                    ov = override[b, :, st:st + 1] if has_override else override
                    _advance_block(state.positions[b], state.velocities[b], self._fc,
                                   state.seed, state.replica_ids[b], state.particle_ids,
                                   step, 1, self.dt, underdamped, self.noise_scale, ov,
                                   has_override, state.twin_positions[b],
                                   state.twin_velocities[b], twin_c, twin_s, norm, True,
                                   part_c[b], part_s[b])

                self._map(work, blocks)
        state.step_count += nsteps
        state.time = state.time + nsteps * self.dt
        if not (np.isfinite(state.positions).all() and np.isfinite(state.velocities).all()):
            raise NonFiniteStateError(
                f"non-finite particle state after step {state.step_count} (t={state.time:.6g})")
        return state


def step_underdamped(state, kernel, dt, **hooks):
    """One underdamped step; returns a new state."""
    out = state.copy()
    with Integrator(kernel, dt, "underdamped", **hooks) as integ:
        integ.advance(out, 1)
    return out


def step_overdamped(state, kernel, dt, **hooks):
    """One overdamped step ``X <- X + dt F(X) + sqrt(2 dt) xi``; returns a new state."""
    out = state.copy()
    with Integrator(kernel, dt, "overdamped", **hooks) as integ:
        integ.advance(out, 1)
    return out


def sample_steps(times, dt, t0=0.0):
    """Step indices for the requested times, snapped to the nearest step boundary."""
    return [int(round((t - t0) / dt)) for t in times]


def run(state, kernel, dt, t_end, observers=(), dynamics="underdamped", threads=1, **hooks):
    """Step from ``state.time`` to ``t_end`` and call observers at their sample times.

    ``observers`` is a sequence of ``(times, callback)`` pairs.  Each time is
    snapped to the nearest step boundary; ``callback(snapshot)`` receives a
    read-only copy and its return value is collected.  Returns the final state
    and, per observer, the list of ``(snapped_time, result)`` pairs.
    """
    if t_end < state.time - 1e-12:
        raise ValueError("t_end precedes the current time")
    out = state.copy()
    t0 = out.time
    total = int(round((t_end - t0) / dt))
    schedule = {}
    for idx, (times, _) in enumerate(observers):
        for s in sample_steps(times, dt, t0):
            if not 0 <= s <= total:
                raise ValueError("observer time outside the run interval")
            schedule.setdefault(s, []).append(idx)
    results = [[] for _ in observers]
    with Integrator(kernel, dt, dynamics, threads=threads, **hooks) as integ:
        done = 0
        for s in sorted(schedule) + [total]:
            integ.advance(out, s - done)
            done = s
            for idx in schedule.pop(s, []):
                snap = out.snapshot()
                results[idx].append((snap.time, observers[idx][1](snap)))
    return out, results


def energy(state, kernel, twin=False):
    """Per-replica ``sum |V|^2 / 2 + (1/2N) sum_{i != j} W(X_i - X_j)``."""
    x = state.twin_positions if twin else state.positions
    v = state.twin_velocities if twin else state.velocities
    n = x.shape[1]
    kin = 0.5 * np.sum(v * v, axis=(1, 2))
    pot = np.zeros(x.shape[0])
    for k, w in enumerate(kernel.coeffs, start=1):
        if w == 0.0:
            continue
        for c in range(x.shape[2]):
            ang = 2 * np.pi * k * x[:, :, c]
            cs = np.cos(ang).sum(axis=1)
            sn = np.sin(ang).sum(axis=1)
            # sum_{i,j} cos(2 pi k (x_i - x_j)) = C^2 + S^2, diagonal contributes n
            pot += w * (cs * cs + sn * sn - n)
    return kin + pot / (2 * n)


# ---------------------------------------------------------------------------
# binary snapshots: little-endian header then float64 arrays

_MAGIC = b"MCLAB01\x00"
_HEADER = struct.Struct("<8sqqqdqqq")


def dump_state(state, path):
    """Write ``state`` as: magic, N, S, d, t, seed, step_count, twin flag, arrays."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, state.n_particles, state.n_replicas, state.dim,
                              float(state.time), int(state.seed), int(state.step_count),
                              int(state.has_twin)))
        arrays = [state.positions, state.velocities]
        if state.has_twin:
            arrays += [state.twin_positions, state.twin_velocities]
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(state.replica_ids, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(state.particle_ids, dtype="<i8").tobytes())


def load_state(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, n, s, d, t, seed, steps, twin = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise ValueError("not an ensemble snapshot")
    off = _HEADER.size
    size = s * n * d

    def take(count, dtype):
        nonlocal off
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=off).copy()
        off += count * 8
        return arr

    pos = take(size, "<f8").reshape(s, n, d)
    vel = take(size, "<f8").reshape(s, n, d)
    tpos = tvel = None
    if twin:
        tpos = take(size, "<f8").reshape(s, n, d)
        tvel = take(size, "<f8").reshape(s, n, d)
    rid = take(s, "<i8")
    pid = take(n, "<i8")
    return EnsembleState(pos, vel, t, seed, steps, rid, pid, tpos, tvel)
