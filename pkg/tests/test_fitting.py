import math

import numpy as np
import pytest

from mclab.fitting import (InsufficientPointsError, band_verdict, fit_slope, safe_fit,
                           two_sided_verdict, upper_bound_verdict)

NS = [32, 64, 128, 256, 512]


def test_exact_power_law_with_zero_errors():
    fit = fit_slope([(n, 3.0 * n ** -1.5, 0.0) for n in NS])
    assert fit.method == "ols"
    assert fit.slope == pytest.approx(-1.5, abs=1e-12)
    assert math.exp(fit.intercept) == pytest.approx(3.0)
    assert fit.halfwidth == pytest.approx(0.0, abs=1e-9)


def test_negative_values_use_magnitudes():
    fit = fit_slope([(n, -2.0 / n, 1e-3 / n) for n in NS])
    assert fit.slope == pytest.approx(-1.0)
    assert fit.signs == [-1] * 5


def test_constant_series():
    fit = fit_slope([(n, 0.7, 0.01) for n in NS])
    assert fit.slope == pytest.approx(0.0, abs=1e-12)


def test_weighted_interval_matches_analytic():
    # equal relative errors: the WLS slope variance is s^2 / sum (x - xbar)^2
    rel = 0.05
    x = np.log(NS)
    pts = [(n, 1.0 / n, rel / n) for n in NS]
    fit = fit_slope(pts)
    sd = rel / math.sqrt(np.sum((x - x.mean()) ** 2))
    assert fit.stderr == pytest.approx(sd, rel=1e-10)
    assert fit.halfwidth == pytest.approx(1.959963984540054 * sd, rel=1e-9)


def test_noisy_recovery(rng):
    hits = 0
    for _ in range(200):
        pts = [(n, (1 + 0.05 * rng.normal()) / n, 0.05 / n) for n in NS]
        fit = fit_slope(pts)
        hits += fit.ci[0] <= -1.0 <= fit.ci[1]
        assert abs(fit.slope + 1) < 0.15
    assert hits >= 180


def test_zero_crossing_points_are_excluded():
    pts = [(n, 1.0 / n, 1e-4) for n in NS[:3]] + [(256, 1e-4, 1e-3), (512, 0.0, 1e-3)]
    fit = fit_slope(pts)
    assert fit.used == [32, 64, 128] and fit.excluded == [256, 512]
    with pytest.raises(InsufficientPointsError):
        fit_slope(pts[2:])
    none, reason = safe_fit(pts[2:])
    assert none is None and "need 3" in reason


def test_band_verdicts():
    assert band_verdict(-1.05, 0.1, -1.0, 0.2) == "pass"
    assert band_verdict(-1.05, 0.3, -1.0, 0.2) == "inconclusive"      # CI wider than band
    assert band_verdict(-1.5, 0.1, -1.0, 0.2) == "fail"
    assert band_verdict(-1.25, 0.1, -1.0, 0.2) == "inconclusive"
    assert band_verdict(float("nan"), 0.1, -1.0, 0.2) == "inconclusive"
    assert two_sided_verdict(None, -1.0, 0.2) == "inconclusive"


def test_upper_bound_verdict():
    fit = fit_slope([(n, n ** -2.0, 0.05 * n ** -2.0) for n in NS])
    assert upper_bound_verdict(fit, -1.2) == "pass"
    assert upper_bound_verdict(fit, -2.5) == "fail"
    assert upper_bound_verdict(fit, -2.0) == "inconclusive"
    assert upper_bound_verdict(None, -1.2) == "inconclusive"
