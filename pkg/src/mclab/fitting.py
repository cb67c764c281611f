"""Power-law slopes with confidence intervals, and the verdict rules built on them."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats


class InsufficientPointsError(ValueError):
    pass


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    stderr: float
    ci: tuple
    used: list
    excluded: list = field(default_factory=list)
    signs: list = field(default_factory=list)
    method: str = "wls"

    @property
    def halfwidth(self):
        return 0.5 * (self.ci[1] - self.ci[0])


def fit_slope(points, level=0.95, min_points=3):
    """Fit ``log|value| = intercept + slope * log N``.

    ``points`` are ``(N, value, stderr)`` triples.  Points whose ``level``
    interval contains zero are excluded (and listed).  With positive standard
    errors the fit is weighted least squares on the logs with
    ``sigma_log = stderr / |value|`` and the interval comes from those
    standard errors, widened by the Birge ratio when the scatter exceeds them.
    When any standard error is zero the fit falls back to ordinary least
    squares with a residual-based Student interval.
    """
    z = stats.norm.ppf(0.5 + level / 2)
    used, excluded = [], []
    for n, v, se in points:
        if not (n > 0 and math.isfinite(v) and math.isfinite(se) and se >= 0):
            excluded.append((n, v, se))
        elif v == 0 or abs(v) <= z * se:
            excluded.append((n, v, se))
        else:
            used.append((n, v, se))
    if len(used) < min_points:
        raise InsufficientPointsError(
            f"only {len(used)} point(s) with intervals excluding zero; need {min_points}")
    n = np.array([p[0] for p in used], dtype=float)
    v = np.array([p[1] for p in used], dtype=float)
    se = np.array([p[2] for p in used], dtype=float)
    x = np.log(n)
    y = np.log(np.abs(v))
    design = np.column_stack([np.ones_like(x), x])
    dof = len(used) - 2
    if np.all(se > 0):
        w = (np.abs(v) / se) ** 2
        cov = np.linalg.inv(design.T @ (design * w[:, None]))
        beta = cov @ (design.T @ (w * y))
        chi2 = float(np.sum(w * (y - design @ beta) ** 2))
        if dof > 0 and chi2 / dof > 1:
            cov = cov * (chi2 / dof)
        sd = math.sqrt(cov[1, 1])
        half = z * sd
        method = "wls"
    else:
        beta, *_ = np.linalg.lstsq(design, y, rcond=None)
        resid = y - design @ beta
        s2 = float(resid @ resid) / dof if dof > 0 else 0.0
        cov = s2 * np.linalg.inv(design.T @ design)
        sd = math.sqrt(max(cov[1, 1], 0.0))
        half = (stats.t.ppf(0.5 + level / 2, dof) if dof > 0 else math.inf) * sd if sd > 0 else 0.0
        method = "ols"
    slope = float(beta[1])
    return SlopeFit(slope, float(beta[0]), sd, (slope - half, slope + half),
                    [p[0] for p in used], [p[0] for p in excluded],
                    [int(np.sign(p[1])) for p in used], method)


def band_verdict(value, halfwidth, reference, tol):
    """Verdict for ``|value - reference| <= tol`` given a CI of half-width ``halfwidth``.

    ``pass`` needs the point estimate inside the band and a CI no wider than
    the band; ``fail`` needs the whole CI outside the band; anything else is
    ``inconclusive``.
    """
    if not (math.isfinite(value) and math.isfinite(halfwidth)):
        return "inconclusive"
    dev = abs(value - reference)
    if dev - halfwidth > tol:
        return "fail"
    if halfwidth <= tol and dev <= tol:
        return "pass"
    return "inconclusive"


def two_sided_verdict(fit, reference, tol):
    """:func:`band_verdict` applied to a fitted slope."""
    if fit is None:
        return "inconclusive"
    return band_verdict(fit.slope, fit.halfwidth, reference, tol)


def upper_bound_verdict(fit, bound):
    """``pass`` iff the whole slope CI lies at or below ``bound``; ``fail`` iff it lies above."""
    if fit is None:
        return "inconclusive"
    if fit.ci[1] <= bound:
        return "pass"
    if fit.ci[0] > bound:
        return "fail"
    return "inconclusive"


def safe_fit(points, **kw):
    """:func:`fit_slope` returning ``(None, reason)`` instead of raising."""
    try:
        return fit_slope(points, **kw), ""
    except InsufficientPointsError as exc:
        return None, str(exc)
