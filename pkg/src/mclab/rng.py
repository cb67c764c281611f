"""Counter-based Gaussian noise.

Every normal variate is a pure function of ``(seed, replica, particle, step,
component)``, so results never depend on how replicas are scheduled across
workers.  The block cipher is Philox4x32-10 of the Random123 family: one
call on the counter ``(step, particle, replica, tag)`` with key
``(seed_lo, seed_hi)`` yields 128 bits, i.e. two 53-bit uniforms or one
Box-Muller pair of normals.
"""
import math

import numpy as np
from numba import njit

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint32(0x9E3779B9)
_W1 = np.uint32(0xBB67AE85)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S21 = np.uint64(21)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0
MAX_DIM = 2
NOISE_TAG = 0
INIT_TAG = 1


@njit(cache=True, inline="always")
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Ten rounds of Philox4x32 on one counter block (all arguments uint32)."""
    for _ in range(10):
        p0 = _M0 * np.uint64(c0)
        p1 = _M1 * np.uint64(c2)
        c0, c1, c2, c3 = (np.uint32(p1 >> _S32) ^ c1 ^ k0, np.uint32(p1 & _MASK32),
                          np.uint32(p0 >> _S32) ^ c3 ^ k1, np.uint32(p0 & _MASK32))
        k0 = np.uint32(k0 + _W0)
        k1 = np.uint32(k1 + _W1)
    return c0, c1, c2, c3


@njit(cache=True, inline="always")
def _u53(hi, lo):
    # (0, 1]: never zero so the logarithm below is finite
    bits = (np.uint64(hi) << _S21) | (np.uint64(lo) >> _S11)
    return (bits + np.uint64(1)) * _INV53


@njit(cache=True, inline="always")
def _block(seed, replica, particle, step, tag):
    return philox4x32(np.uint32(step & 0xFFFFFFFF), np.uint32(particle & 0xFFFFFFFF),
                      np.uint32(replica & 0xFFFFFFFF), np.uint32(tag),
                      np.uint32(seed & 0xFFFFFFFF), np.uint32((seed >> 32) & 0xFFFFFFFF))


@njit(cache=True, nogil=True)
def uniform_pair(seed, replica, particle, step, tag):
    w0, w1, w2, w3 = _block(seed, replica, particle, step, tag)
    return _u53(w0, w1), _u53(w2, w3)


@njit(cache=True, nogil=True)
def gaussians(seed, replica, particle, step, out, dim):
    """Write ``dim`` (<= 2) standard normals for one slot into ``out[:dim]``."""
    u1, u2 = uniform_pair(seed, replica, particle, step, NOISE_TAG)
    r = math.sqrt(-2.0 * math.log(u1))
    a = 2.0 * math.pi * u2
    out[0] = r * math.cos(a)
    if dim > 1:
        out[1] = r * math.sin(a)


@njit(cache=True)
def _fill(seed, replica_ids, particle_ids, step0, nsteps, dim, out):
    buf = np.empty(2)
    for r in range(replica_ids.shape[0]):
        for p in range(particle_ids.shape[0]):
            for s in range(nsteps):
                gaussians(seed, replica_ids[r], particle_ids[p], step0 + s, buf, dim)
                for c in range(dim):
                    out[r, p, s, c] = buf[c]


def check_seed(seed):
    seed = int(seed)
    if not 0 <= seed < 2 ** 63:
        raise ValueError("seed must be a nonnegative 63-bit integer")
    return seed


def noise(seed, replicas, particles, step0, nsteps, dim):
    """Materialise the noise array indexed ``(replica, particle, step, component)``.

    Reference path for tests and diagnostics; the integrators draw the same
    numbers inline.
    """
    if not 1 <= dim <= MAX_DIM:
        raise ValueError(f"dim must be between 1 and {MAX_DIM}")
    replicas = np.asarray(replicas, dtype=np.int64)
    particles = np.asarray(particles, dtype=np.int64)
    out = np.empty((replicas.size, particles.size, nsteps, dim))
    _fill(check_seed(seed), replicas, particles, int(step0), int(nsteps), int(dim), out)
    return out
