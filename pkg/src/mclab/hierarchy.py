"""Stress harness for hierarchies of differential inequalities.

The saturated system turns

    a_n' <= n (a_n + a_{n+1}) + n^3 R^-2 (a_{n-1} + a_{n-2}),   a_n <= B^n,
    a_n(0) <= n^{2n} (A / R)^n

into equalities (with the cap ``a_n <- min(a_n, B^n)`` after every step),
which is the largest trace the hypotheses admit.  Indices ``k <= 0`` carry
``a_k = 0`` and the top equation is closed with ``a_{n_max + 1} = B^{n_max+1}``.
Values are integrated in log space so ``n_max`` well beyond 15 is safe; a
linear-space twin of the same RK4 scheme exists for cross-checks.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

NEG_INF = -np.inf


@dataclass(frozen=True)
class HierarchyParams:
    A: float = 1.0
    R: float = 100.0
    B: float = 2.0
    n_max: int = 20
    t_end: float = 1.0

    def __post_init__(self):
        if self.n_max < 4:
            raise ValueError("n_max must be at least 4")
        if self.A < 0 or not self.R > 0 or not self.B > 0 or self.t_end < 0:
            raise ValueError("need A >= 0, R > 0, B > 0, t_end >= 0")


@dataclass
class HierarchyTrace:
    params: HierarchyParams
    t: np.ndarray
    log_a: np.ndarray               # (len(t), n_max), column n-1 holds log a_n
    closure: str = "a_{n_max+1} = B^(n_max+1)"

    @property
    def values(self):
        return np.exp(self.log_a)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("t", "n", "log_a_n"))
            for i, t in enumerate(self.t):
                for n in range(1, self.params.n_max + 1):
                    w.writerow((repr(float(t)), n, repr(float(self.log_a[i, n - 1]))))


def initial_log(p):
    n = np.arange(1, p.n_max + 1, dtype=float)
    with np.errstate(divide="ignore"):
        data = n * (2 * np.log(n) + math.log(p.A / p.R)) if p.A > 0 else np.full(n.shape, NEG_INF)
    return np.minimum(data, n * math.log(p.B))


def _lae(a, b):
    return np.logaddexp(a, b)


def _log_rhs(la, p):
    """``log`` of the saturated right-hand side."""
    nm = p.n_max
    n = np.arange(1, nm + 1, dtype=float)
    ext = np.concatenate([[NEG_INF, NEG_INF], la, [(nm + 1) * math.log(p.B)]])
    cur, up = ext[2:nm + 2], ext[3:nm + 3]
    down1, down2 = ext[1:nm + 1], ext[0:nm]
    lin = np.log(n) + _lae(cur, up)
    coupling = 3 * np.log(n) - 2 * math.log(p.R) + _lae(down1, down2)
    return _lae(lin, coupling)


def _rhs(a, p):
    nm = p.n_max
    n = np.arange(1, nm + 1, dtype=float)
    ext = np.concatenate([[0.0, 0.0], a, [p.B ** (nm + 1)]])
    return n * (ext[2:nm + 2] + ext[3:nm + 3]) + n ** 3 / p.R ** 2 * (ext[1:nm + 1] + ext[0:nm])


def _time_grid(t_end, dt):
    steps = max(1, int(round(t_end / dt)))
    return np.linspace(0.0, t_end, steps + 1), t_end / steps


def integrate_saturated(params, dt=1e-3):
    """RK4 in log space for the capped equality system."""
    t, h = _time_grid(params.t_end, dt)
    cap = np.arange(1, params.n_max + 1) * math.log(params.B)
    la = initial_log(params)
    out = np.empty((t.size, params.n_max))
    out[0] = la
    lh, lh2, lh6 = math.log(h), math.log(h / 2), math.log(h / 6)
    for i in range(1, t.size):
        k1 = _log_rhs(la, params)
        k2 = _log_rhs(_lae(la, lh2 + k1), params)
        k3 = _log_rhs(_lae(la, lh2 + k2), params)
        k4 = _log_rhs(_lae(la, lh + k3), params)
        incr = np.logaddexp.reduce(np.stack([k1, k2 + math.log(2), k3 + math.log(2), k4]), axis=0)
        la = np.minimum(_lae(la, lh6 + incr), cap)
        out[i] = la
    return HierarchyTrace(params, t, out)


def integrate_saturated_linear(params, dt=1e-3):
    """The same scheme in linear arithmetic (overflows for large ``n_max``)."""
    t, h = _time_grid(params.t_end, dt)
    cap = params.B ** np.arange(1, params.n_max + 1, dtype=float)
    a = np.exp(initial_log(params))
    out = np.empty((t.size, params.n_max))
    out[0] = a
    for i in range(1, t.size):
        k1 = _rhs(a, params)
        k2 = _rhs(a + h / 2 * k1, params)
        k3 = _rhs(a + h / 2 * k2, params)
        k4 = _rhs(a + h * k3, params)
        a = np.minimum(a + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4), cap)
        out[i] = a
    return t, out


@dataclass
class BoundCheck:
    passed: bool
    worst_margin: float          # max of log a_n - log bound (<= 0 means the bound holds)
    where: tuple                 # (n, t) of the worst margin


def log_bound(params, c, n, t):
    """``log[e^{C n t} (C n^2)^n (A/R)^n]``."""
    if params.A == 0:
        return np.full(np.broadcast(n, t).shape, NEG_INF)
    return c * n * t + n * np.log(c * n * n) + n * math.log(params.A / params.R)


def check_conclusion(trace, c, n_limit=None, tol=1e-12):
    """Evaluate ``a_n(t) <= e^{Cnt} (C n^2)^n (A/R)^n`` over the trace in log space."""
    if not c >= 1:
        raise ValueError("C must be at least 1")
    p = trace.params
    nmax = p.n_max if n_limit is None else min(n_limit, p.n_max)
    n = np.arange(1, nmax + 1, dtype=float)[None, :]
    la = trace.log_a[:, :nmax]
    lb = log_bound(p, c, n, trace.t[:, None])
    with np.errstate(invalid="ignore"):
        margin = np.where(np.isneginf(la), NEG_INF, la - lb)
    idx = np.unravel_index(int(np.argmax(margin)), margin.shape)
    worst = float(margin[idx])
    return BoundCheck(bool(worst <= tol), worst, (int(idx[1]) + 1, float(trace.t[idx[0]])))


def bisect_constant(trace, c_hi=1e6, rtol=1e-9, n_limit=None):
    """Smallest ``C >= 1`` for which :func:`check_conclusion` passes (``inf`` if none below ``c_hi``)."""
    if check_conclusion(trace, 1.0, n_limit).passed:
        return 1.0
    if not check_conclusion(trace, c_hi, n_limit).passed:
        return math.inf
    lo, hi = 1.0, c_hi
    while hi - lo > rtol * hi:
        mid = math.sqrt(lo * hi) if hi / lo > 4 else 0.5 * (lo + hi)
        if check_conclusion(trace, mid, n_limit).passed:
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class GeneratingFunctionCheck:
    passed: bool
    verdict: str                 # "pass", "fail" or "inconclusive"
    worst_excess: float          # max_t Z(t, r0 - Ct) - 1
    where: float                 # time of the worst excess
    tail: float                  # truncation-tail estimate
    times: np.ndarray
    z: np.ndarray


def integrate_moment_system(c, t_end, m_max, dt=1e-3):
    """``A_m' = C m (A_{m-2} + A_{m-1} + A_m + A_{m+1})``, ``A_m(0) = 1_{m=0}``, ``A_{m_max+1} = 0``.

    Returns times and ``A`` shaped ``(len(t), m_max + 1)``.
    """
    t, h = _time_grid(t_end, dt)
    m = np.arange(m_max + 1, dtype=float)

    def rhs(a):
        ext = np.concatenate([[0.0, 0.0], a, [0.0]])
        return c * m * (ext[0:m_max + 1] + ext[1:m_max + 2] + ext[2:m_max + 3] + ext[3:m_max + 4])

    a = np.zeros(m_max + 1)
    a[0] = 1.0
    out = np.empty((t.size, m_max + 1))
    out[0] = a
    for i in range(1, t.size):
        k1 = rhs(a)
        k2 = rhs(a + h / 2 * k1)
        k3 = rhs(a + h / 2 * k2)
        k4 = rhs(a + h * k3)
        a = a + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[i] = a
    return t, out


def generating_function_check(c, r0, t_end, m_max=40, dt=1e-3, rel_tol=1e-8, tail_tol=1e-10):
    """Check ``Z(t, r0 - Ct) <= Z(0, r0) (1 + rel_tol)`` along the equality trace.

    ``Z(t, r) = sum_m r^m A_m(t)`` is truncated at ``m_max``; the tail is
    estimated by the change when the truncation is doubled.
    """
    if not 0 < r0 < 1:
        raise ValueError("r0 must lie in (0, 1)")
    if c > 0 and t_end > r0 / c + 1e-12:
        raise ValueError("need t_end <= r0 / C")
    t, a = integrate_moment_system(c, t_end, m_max, dt)
    _, a2 = integrate_moment_system(c, t_end, 2 * m_max, dt)
    r = r0 - c * t
    powers = r[:, None] ** np.arange(m_max + 1)[None, :]
    z = np.sum(powers * a, axis=1)
    z2 = np.sum((r[:, None] ** np.arange(2 * m_max + 1)[None, :]) * a2, axis=1)
    tail = float(np.abs(z2 - z).max())
    z0 = 1.0                                   # A_m(0) = 1_{m=0}
    excess = z - z0 * (1 + rel_tol)
    i = int(np.argmax(excess))
    if tail > tail_tol:
        verdict = "inconclusive"
    else:
        verdict = "pass" if excess[i] <= 0 else "fail"
    return GeneratingFunctionCheck(verdict == "pass", verdict, float(z[i] - z0), float(t[i]),
                                   tail, t, z)
