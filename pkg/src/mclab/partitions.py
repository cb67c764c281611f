"""Set partitions, moment/cumulant transforms and ensemble estimators.

For exchangeable particles and a single observable ``phi``, every projection
``int phi^{(x)k} F_{N,k}`` depends only on ``k``, so the cluster expansion and
its Moebius inverse reduce to sums over set partitions of ``[m]`` weighted by
products of block-size moments.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

MAX_ORDER = 12
BELL = (1, 1, 2, 5, 15, 52, 203, 877, 4140, 21147, 115975, 678570, 4213597)


@dataclass(frozen=True)
class PartitionTable:
    """All partitions of ``{1..m}`` in restricted-growth-string order."""

    m: int
    partitions: tuple
    mobius: tuple

    def __len__(self):
        return len(self.partitions)

    @property
    def block_sizes(self):
        return tuple(tuple(len(b) for b in p) for p in self.partitions)


def _restricted_growth_strings(m):
    a = [0] * m
    top = [0] * m  # top[i] = max(a[:i]) + 1

    def rec(i):
        if i == m:
            yield tuple(a)
            return
        for v in range(top[i - 1] + 1 if i else 1):
            a[i] = v
            if i + 1 < m:
                top[i] = max(top[i - 1], v + 1) if i else 1
            yield from rec(i + 1)

    yield from rec(0)


@lru_cache(maxsize=None)
def enumerate_partitions(m):
    """Partitions of ``{1..m}`` with Moebius weights ``(#pi - 1)! (-1)^(#pi - 1)``."""
    if not 1 <= m <= MAX_ORDER:
        raise ValueError(f"order must be between 1 and {MAX_ORDER}")
    parts = []
    weights = []
    for rgs in _restricted_growth_strings(m):
        nb = max(rgs) + 1
        blocks = [[] for _ in range(nb)]
        for i, b in enumerate(rgs, start=1):
            blocks[b].append(i)
        parts.append(tuple(tuple(b) for b in blocks))
        weights.append(math.factorial(nb - 1) * (-1) ** (nb - 1))
    return PartitionTable(m, tuple(parts), tuple(weights))


@lru_cache(maxsize=None)
def _block_profiles(m):
    """Distinct block-size multisets of partitions of ``[m]`` with their counts.

    Returns ``[(sizes, count, mobius)]``; collapses the set-partition sum for
    exchangeable inputs.
    """
    table = enumerate_partitions(m)
    acc = {}
    for sizes, w in zip(table.block_sizes, table.mobius):
        key = tuple(sorted(sizes, reverse=True))
        cnt, mob = acc.get(key, (0, w))
        acc[key] = (cnt + 1, mob)
    return [(k, c, w) for k, (c, w) in acc.items()]


def _products(values, sizes):
    out = 1.0
    for s in sizes:
        out = out * values[s - 1]
    return out


def _cluster_sum(values, m, signed):
    total = 0.0
    for sizes, count, mob in _block_profiles(m):
        term = count * _products(values, sizes)
        total = total + (mob * term if signed else term)
    return total


def connected_from_plain(plain):
    """``g_m = sum_pi (#pi-1)!(-1)^(#pi-1) prod_B M_{#B}`` for ``m = 1..len(plain)``.

    Entries may be arrays (vectorised over trailing axes).
    """
    plain = [np.asarray(p, dtype=float) for p in plain]
    return [_cluster_sum(plain, m, True) for m in range(1, len(plain) + 1)]


def plain_from_connected(connected):
    """Cluster expansion ``M_m = sum_pi prod_B g_{#B}``."""
    connected = [np.asarray(g, dtype=float) for g in connected]
    return [_cluster_sum(connected, m, False) for m in range(1, len(connected) + 1)]


def linear_from_connected(connected_tilde):
    """``h_m = sum_pi prod_B g~_{#B}`` where ``g~_1`` is the centred one-point value."""
    return plain_from_connected(connected_tilde)


def connected_from_linear(linear):
    """Inverse of :func:`linear_from_connected` by induction on the order.

    ``g~_{n+1} = h_{n+1} - sum_{#pi > 1} prod_B g~_{#B}``.
    """
    linear = [np.asarray(h, dtype=float) for h in linear]
    out = []
    for m in range(1, len(linear) + 1):
        rest = 0.0
        for sizes, count, _ in _block_profiles(m):
            if len(sizes) > 1:
                rest = rest + count * _products(out, sizes)
        out.append(linear[m - 1] - rest)
    return out


# ---------------------------------------------------------------------------
# U-statistics over distinct tuples

def distinct_tuple_sums(values, m_max):
    """``D_k = sum over distinct ordered k-tuples of prod values`` for ``k <= m_max``.

    ``values`` has particles on the last axis.  Uses power sums and the
    recursion ``D_k = sum_j (-1)^(j-1) (k-1)!/(k-j)! p_j D_{k-j}``.
    """
    x = np.asarray(values, dtype=float)
    p = [None] + [np.sum(x ** j, axis=-1) for j in range(1, m_max + 1)]
    d = [np.ones(x.shape[:-1])]
    for k in range(1, m_max + 1):
        acc = np.zeros(x.shape[:-1])
        for j in range(1, k + 1):
            coef = (-1) ** (j - 1) * math.perm(k - 1, j - 1)
            acc = acc + coef * p[j] * d[k - j]
        d.append(acc)
    return d[1:]


def replica_ustats(values, m_max):
    """Per-replica U-statistics ``D_k / (N (N-1) ... (N-k+1))``; shape ``(S, m_max)``."""
    x = np.asarray(values, dtype=float)
    n = x.shape[-1]
    if m_max > n:
        raise ValueError("m_max exceeds the number of particles")
    sums = distinct_tuple_sums(x, m_max)
    return np.stack([sums[k - 1] / math.perm(n, k) for k in range(1, m_max + 1)], axis=-1)


def _jackknife(per_replica, transform):
    """Delete-one jackknife of ``transform(replica means)``; returns (estimate, stderr, bias)."""
    s = per_replica.shape[0]
    mean = per_replica.mean(axis=0)
    est = np.asarray(transform(mean))
    loo = (s * mean[None, :] - per_replica) / (s - 1)
    reps = np.asarray(transform(loo.T)).T  # (S, m)
    rbar = reps.mean(axis=0)
    se = np.sqrt((s - 1) / s * np.sum((reps - rbar) ** 2, axis=0))
    bias = (s - 1) * (rbar - est)
    return est, se, bias


@dataclass
class MomentTable:
    """Replica-averaged plain, centred and connected moments of one observable."""

    m_max: int
    plain: np.ndarray
    plain_se: np.ndarray
    connected: np.ndarray
    connected_se: np.ndarray
    centered: np.ndarray | None = None
    centered_se: np.ndarray | None = None
    connected_bias: np.ndarray | None = None
    n_particles: int = 0
    n_replicas: int = 0
    time: float = 0.0
    meta: dict = field(default_factory=dict)

    def rows(self):
        for k in range(1, self.m_max + 1):
            i = k - 1
            cen = "" if self.centered is None else repr(float(self.centered[i]))
            cen_se = "" if self.centered_se is None else repr(float(self.centered_se[i]))
            yield {"time": repr(float(self.time)), "k": k,
                   "plain": repr(float(self.plain[i])), "plain_se": repr(float(self.plain_se[i])),
                   "centered": cen, "centered_se": cen_se,
                   "connected": repr(float(self.connected[i])),
                   "connected_se": repr(float(self.connected_se[i])),
                   "N": self.n_particles, "S": self.n_replicas}


CSV_COLUMNS = ("time", "k", "plain", "plain_se", "centered", "centered_se",
               "connected", "connected_se", "N", "S")


def write_moment_csv(tables, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for table in tables:
            for row in table.rows():
                w.writerow(row)


def read_moment_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _connected_transform(m_max):
    def tf(mean):
        return np.stack(connected_from_plain([mean[k] for k in range(m_max)]))
    return tf


def moment_table(values, m_max, center=None, control=None, time=0.0):
    """Moment table from per-particle observable values shaped ``(S, N)``.

    ``center`` (the reference mean ``int phi f``) adds the centred table.
    ``control`` holds twin values (same shape) whose connected moments vanish
    in expectation; when given, connected moments and their standard errors
    are those of the difference estimator ``g(values) - g(control)``.
    """
    x = np.asarray(values, dtype=float)
    s, n = x.shape
    if m_max > n:
        raise ValueError("m_max exceeds N")
    u = replica_ustats(x, m_max)
    uc = None if control is None else replica_ustats(np.asarray(control, dtype=float), m_max)
    ucen = None if center is None else replica_ustats(x - center, m_max)
    return table_from_ustats(u, n, control=uc, centered=ucen, time=time)


def table_from_ustats(u, n, control=None, centered=None, time=0.0):
    """Moment table from per-replica U-statistics ``(S, m_max)``.

    Replicas simulated in separate batches can be pooled by stacking their
    U-statistic rows; ``control`` and ``centered`` are the matching rows for
    twin values and for centred values.
    """
    u = np.asarray(u, dtype=float)
    s, m_max = u.shape
    if s < 2:
        raise ValueError("need at least two replicas for standard errors")
    plain = u.mean(axis=0)
    plain_se = u.std(axis=0, ddof=1) / math.sqrt(s)
    tf = _connected_transform(m_max)
    if control is None:
        conn, conn_se, bias = _jackknife(u, tf)
    else:
        both = np.concatenate([u, np.asarray(control, dtype=float)], axis=1)

        def tf2(mean):
            return tf(mean[:m_max]) - tf(mean[m_max:])

        conn, conn_se, bias = _jackknife(both, tf2)
    table = MomentTable(m_max, plain, plain_se, conn, conn_se, connected_bias=bias,
                        n_particles=n, n_replicas=s, time=time)
    if centered is not None:
        table.centered = centered.mean(axis=0)
        table.centered_se = centered.std(axis=0, ddof=1) / math.sqrt(s)
    return table


def ustat_moments(state, phi, f_ref=None, m_max=4, twin_control=False):
    """Moment table of observable ``phi`` over an ensemble.

    ``phi`` maps ``(positions, velocities)`` arrays (``(S, N, d)``) to values
    ``(S, N)``.  ``f_ref`` is either a number (``int phi f``) or an object with
    ``integrate(phi)``; it enables the centred table.
    """
    if m_max > min(state.n_particles, 8):
        raise ValueError("m_max must not exceed min(N, 8)")
    vals = phi(state.positions, state.velocities)
    center = None
    if f_ref is not None:
        center = float(f_ref) if np.isscalar(f_ref) else float(f_ref.integrate(phi))
    control = None
    if twin_control:
        if not state.has_twin:
            raise ValueError("twin control requested but the state carries no twins")
        control = phi(state.twin_positions, state.twin_velocities)
    return moment_table(vals, m_max, center, control, time=state.time)


# ---------------------------------------------------------------------------
# k-statistics

@dataclass
class CumulantEstimate:
    values: np.ndarray
    stderr: np.ndarray
    biased: tuple

    def standardized(self, order):
        return self.values[order - 1] / self.values[1] ** (order / 2)


def _kstats_from_sums(n, s1, s2, s3, s4):
    k1 = s1 / n
    k2 = (n * s2 - s1 ** 2) / (n * (n - 1))
    k3 = (2 * s1 ** 3 - 3 * n * s1 * s2 + n ** 2 * s3) / (n * (n - 1) * (n - 2))
    k4 = (-6 * s1 ** 4 + 12 * n * s1 ** 2 * s2 - 3 * n * (n - 1) * s2 ** 2
          - 4 * n * (n + 1) * s1 * s3 + n ** 2 * (n + 1) * s4) / (n * (n - 1) * (n - 2) * (n - 3))
    return k1, k2, k3, k4


def _plugin_high(n, s):
    """Plug-in cumulants 5 and 6 from central power sums ``s[j] = sum (y - ybar)^j``."""
    mu = {j: s[j] / n for j in s}
    k5 = mu[5] - 10 * mu[3] * mu[2]
    k6 = mu[6] - 15 * mu[4] * mu[2] - 10 * mu[3] ** 2 + 30 * mu[2] ** 3
    return k5, k6


def kstat_cumulants(samples, m_max=4):
    """Unbiased k-statistics up to order 4, plug-in cumulants for 5 and 6.

    Standard errors are delete-one jackknife.  Orders 5 and 6 are flagged in
    ``biased``.
    """
    y = np.asarray(samples, dtype=float).ravel()
    n = y.size
    if not 1 <= m_max <= 6:
        raise ValueError("m_max must be between 1 and 6")
    if n <= max(m_max, 4):
        raise ValueError("need more samples than the cumulant order (and at least 5)")
    shift = y.mean()
    z = y - shift
    pw = {j: z ** j for j in range(1, 7)}
    tot = {j: pw[j].sum() for j in pw}

    def compute(cnt, sums, mean_shift):
        k = list(_kstats_from_sums(cnt, sums[1], sums[2], sums[3], sums[4]))
        k[0] = k[0] + mean_shift
        if m_max > 4:
            mbar = sums[1] / cnt
            cs = {2: sums[2] - cnt * mbar ** 2,
                  3: sums[3] - 3 * mbar * sums[2] + 2 * cnt * mbar ** 3,
                  4: sums[4] - 4 * mbar * sums[3] + 6 * mbar ** 2 * sums[2] - 3 * cnt * mbar ** 4,
                  5: sums[5] - 5 * mbar * sums[4] + 10 * mbar ** 2 * sums[3]
                  - 10 * mbar ** 3 * sums[2] + 4 * cnt * mbar ** 5,
                  6: sums[6] - 6 * mbar * sums[5] + 15 * mbar ** 2 * sums[4]
                  - 20 * mbar ** 3 * sums[3] + 15 * mbar ** 4 * sums[2] - 5 * cnt * mbar ** 6}
            k.extend(_plugin_high(cnt, cs))
        return np.array(k[:m_max]) if np.ndim(k[0]) == 0 else np.stack(k[:m_max])

    est = compute(n, tot, shift)
    loo = {j: tot[j] - pw[j] for j in pw}
    reps = compute(n - 1, loo, shift)  # (m_max, n)
    rbar = reps.mean(axis=1)
    se = np.sqrt((n - 1) / n * np.sum((reps - rbar[:, None]) ** 2, axis=1))
    biased = tuple(k for k in range(1, m_max + 1) if k > 4)
    return CumulantEstimate(est, se, biased)
