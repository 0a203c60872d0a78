"""Intensity curves, state paths and scenario validation."""

import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from codefault.model import (
    AffineState,
    Constant,
    DestructiveCompetition,
    IntensityCurve,
    MarketModel,
    PathRequiredError,
    PiecewiseDeterministic,
    ProbabilityReport,
    Quantity,
    StatePath,
    compile_intensity,
    constant_rate,
    integrated_intensity,
    inverse_integrated_intensity,
    validate,
)


def test_constant_integral():
    assert integrated_intensity(Constant(0.05), None, 2.0) == pytest.approx(0.1, abs=0)
    assert integrated_intensity(Constant(0.05), None, 0.0) == 0.0
    assert integrated_intensity(PiecewiseDeterministic([0, 1], [2, 4]), None, 0.0) == 0.0


def test_piecewise_integral_matches_riemann():
    spec = PiecewiseDeterministic([0, 1, 2], [1, 3, 3])
    got = integrated_intensity(spec, None, 2.0)
    # independent oracle: fine Riemann sum of the linear interpolant
    ts = np.linspace(0.0, 2.0, 2_000_001)
    alpha = np.interp(ts, spec.grid, spec.values)
    riemann = float(np.trapezoid(alpha, ts))
    assert got == pytest.approx(5.0, rel=1e-12)
    assert got == pytest.approx(riemann, rel=1e-9)


def test_inverse_constant():
    assert inverse_integrated_intensity(Constant(0.05), None, 0.1) == pytest.approx(2.0, rel=1e-12)
    assert inverse_integrated_intensity(Constant(0.05), None, 0.0) == 0.0
    assert inverse_integrated_intensity(PiecewiseDeterministic([0, 1], [1, 2]), None, 0.0) == 0.0


def test_inverse_piecewise_bisection_oracle():
    spec = PiecewiseDeterministic([0, 1, 2], [1, 3, 3])
    curve = compile_intensity(spec, None)
    # oracle: bisect the integral of the same interpolant
    oracle = brentq(lambda t: curve.integral(t) - 2.5, 0.0, 2.0, xtol=1e-13)
    got = inverse_integrated_intensity(spec, None, 2.5)
    assert got == pytest.approx(oracle, abs=1e-10)
    assert curve.integral(got) == pytest.approx(2.5, rel=1e-12)


def test_inverse_unreachable_is_infinite():
    with pytest.warns(UserWarning):
        curve = compile_intensity(PiecewiseDeterministic([0, 1], [1, 0]), None)
    assert curve.integral(10.0) == pytest.approx(0.5)
    assert math.isinf(curve.inverse(0.6))
    assert curve.inverse(0.4) < 1.0


def test_inverse_is_monotone_in_z():
    curve = compile_intensity(PiecewiseDeterministic([0, 1, 3], [0.5, 2.0, 0.1]), None)
    zs = np.linspace(0.0, curve.integral(20.0), 400)
    ts = curve.inverse(zs)
    assert np.all(np.diff(ts) >= 0.0)


@st.composite
def _piecewise_specs(draw):
    n = draw(st.integers(min_value=1, max_value=6))
    steps = draw(st.lists(st.floats(0.05, 3.0), min_size=n, max_size=n))
    grid = [0.0]
    for s in steps:
        grid.append(grid[-1] + s)
    vals = draw(st.lists(st.floats(0.0, 5.0), min_size=n, max_size=n))
    tail = draw(st.floats(0.05, 5.0))  # positive tail keeps the integral proper
    return PiecewiseDeterministic(grid, vals + [tail])


@settings(max_examples=60, deadline=None)
@given(_piecewise_specs(), st.floats(0.0, 50.0))
def test_integral_nondecreasing_and_zero_at_zero(spec, t):
    curve = compile_intensity(spec, None)
    assert curve.integral(0.0) == 0.0
    assert curve.integral(t) <= curve.integral(t + 1.0) + 1e-12


@settings(max_examples=60, deadline=None)
@given(_piecewise_specs(), st.floats(0.0, 1.0))
def test_integral_inverse_round_trip(spec, frac):
    curve = compile_intensity(spec, None)
    z = frac * curve.integral(spec.grid[-1])
    t = curve.inverse(z)
    assert abs(curve.integral(t) - z) <= 1e-9 * (1.0 + z)


def test_destructive_competition_adds_log_k():
    base = PiecewiseDeterministic([0, 1, 2], [1, 3, 3])
    dc = DestructiveCompetition(base, 7)
    for t in (0.0, 0.4, 1.9, 6.0):
        expected = t * math.log(7) + integrated_intensity(base, None, t)
        assert integrated_intensity(dc, None, t) == pytest.approx(expected, rel=1e-12)
    assert constant_rate(DestructiveCompetition(Constant(0.2), 4)) == pytest.approx(
        math.log(4) + 0.2)
    assert constant_rate(AffineState([0.1])) is None


def test_affine_needs_path_piecewise_does_not():
    with pytest.raises(PathRequiredError):
        integrated_intensity(AffineState([0.1, 0.2]), None, 1.0)
    # deterministic-in-time specs evaluate without any path
    assert integrated_intensity(PiecewiseDeterministic([0, 1], [1, 1]), None, 1.0) == 1.0


def test_affine_along_path():
    path = StatePath([0, 1, 2], [[1, 2], [2, 1], [0.5, 0.5]])
    curve = compile_intensity(AffineState([0.5, 1.0]), path)
    assert curve.alpha(0.0) == pytest.approx(2.5)
    assert curve.integral(2.0) == pytest.approx(3.625)
    # frozen beyond the horizon
    assert curve.alpha(10.0) == pytest.approx(0.75)


def test_merge_is_pointwise_sum():
    a = compile_intensity(PiecewiseDeterministic([0, 2], [1.0, 2.0]), None)
    b = compile_intensity(Constant(0.5), None)
    merged = IntensityCurve.merge([a, b])
    for t in (0.0, 0.7, 2.0, 5.0):
        assert merged.integral(t) == pytest.approx(a.integral(t) + b.integral(t), rel=1e-12)


def test_spec_invariants_rejected():
    with pytest.raises(ValueError):
        Constant(-0.1)
    with pytest.raises(ValueError):
        PiecewiseDeterministic([0, 1], [1, -1])
    with pytest.raises(ValueError):
        PiecewiseDeterministic([1, 2], [1, 1])  # must start at 0
    with pytest.raises(ValueError):
        PiecewiseDeterministic([0, 0], [1, 1])  # strictly increasing
    with pytest.raises(ValueError):
        AffineState([-0.2])
    with pytest.raises(ValueError):
        DestructiveCompetition(Constant(0.1), 0)
    with pytest.raises(ValueError):
        StatePath([0.5, 1], [[1], [1]])
    with pytest.raises(ValueError):
        StatePath([0, 1], [[1, 2], [1]])
    with pytest.raises(ValueError):
        MarketModel([Constant(0.1)], Constant(0.1), 0.0)


def test_validate_examples():
    ok = validate(MarketModel([Constant(0.05)] * 3, Constant(0.01), 1.0))
    assert ok.ok
    assert ok.backends == ("analytic", "mc", "pathwise") or set(ok.backends) == {
        "analytic", "pathwise", "simulate"}

    single = validate(MarketModel([Constant(0.05)], Constant(0.01), 1.0))
    assert any("K >= 2" in v for v in single.violations)

    with pytest.raises(ValueError):
        AffineState([-0.1, 0.2])  # negative loading caught at construction

    mismatch = validate(
        MarketModel([AffineState([0.1, 0.2, 0.3])] * 2, Constant(0.01), 1.0),
        StatePath([0, 1], [[1, 2], [1, 2]]),
    )
    assert any("does not match state dimension" in v for v in mismatch.violations)


def test_backend_eligibility():
    path = StatePath([0, 1], [[1.0], [1.0]])
    affine = MarketModel([AffineState([0.1])] * 2, Constant(0.01), 1.0)
    assert "pathwise" not in validate(affine).backends
    assert "pathwise" in validate(affine, path).backends
    assert "analytic" not in validate(affine, path).backends
    assert "simulate" in validate(affine).backends


def test_probability_report_sandwich():
    ProbabilityReport(Quantity.MARKET_FAILURE, exact=0.5, lower_bound=0.4, upper_bound=0.6)
    with pytest.raises(ValueError):
        ProbabilityReport(Quantity.MARKET_FAILURE, exact=0.7, lower_bound=0.4, upper_bound=0.6)
