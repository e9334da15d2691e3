import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slipflow.errors import BetaZero, DegenerateWindow, DerivativeBoundViolated, NonPositiveWidth
from slipflow.geometry import (
    ChannelProfile,
    TruncatedDomain,
    build_reparametrization,
    classify_case,
    energy_windows,
    validate_profile,
    weight_integral,
)


def test_straight_profile_constants(straight):
    rep = validate_profile(straight, np.linspace(-10, 10, 101))
    assert rep.passed
    assert (straight.d, straight.beta, straight.gamma_pp) == (2.0, 0.0, 0.0)
    with pytest.raises(BetaZero):
        straight.beta_star


def test_sine_wall_against_declared_constants():
    p = ChannelProfile.symmetric("1+0.5*sin(x)", d=1.0, beta=0.5, gamma_pp=1.5)
    grid = np.linspace(-20, 20, 40001)
    rep = validate_profile(p, grid)
    assert rep.passed
    assert rep.inf_width == pytest.approx(1.0, abs=1e-6)
    assert rep.sup_slope == pytest.approx(0.5, abs=1e-6)


def test_power_wall_derivatives_against_finite_differences():
    p = ChannelProfile.symmetric("(1+x^2)^0.4", sample=np.linspace(-50, 50, 20001))
    grid = np.linspace(-50, 50, 2001)
    rep = validate_profile(p, grid)
    assert rep.passed
    h = 1e-4
    fd = (p.f2(grid + h) - p.f2(grid - h)) / (2 * h)
    assert np.max(np.abs(fd - p.f2.d1(grid))) < 1e-8
    assert p.beta_star == 1.0 / (4.0 * p.beta)


def test_validation_errors():
    p = ChannelProfile.from_expressions("x", "1", d=0.1, beta=1.0, gamma_pp=0.0)
    with pytest.raises(NonPositiveWidth):
        validate_profile(p, np.linspace(0, 2, 11))
    q = ChannelProfile.symmetric("1+0.5*sin(x)", d=1.0, beta=0.25)
    with pytest.raises(DerivativeBoundViolated):
        validate_profile(q, np.linspace(-5, 5, 101))


def test_weight_integral_constant():
    p = ChannelProfile.from_expressions("0", "2")
    assert weight_integral(p, 0, 4, -3.0) == pytest.approx(0.5, rel=1e-14)


def test_weight_integral_against_trapezoid_oracle():
    p = ChannelProfile.symmetric("0.5*(1+x^2)^0.3")
    x = np.linspace(-10, 10, 1_000_001)
    ref = np.trapezoid((1 + x**2) ** -0.9, x)
    assert weight_integral(p, -10, 10, -3.0) == pytest.approx(ref, rel=1e-8)


def test_weight_integral_semi_infinite_power_tail():
    p = ChannelProfile.symmetric("0.5*(1+x^2)^0.2")
    # int_t^inf (1+x^2)^-0.6 ~ t^-0.2 / 0.2 for large t
    assert weight_integral(p, 1e5, math.inf) == pytest.approx(1e5**-0.2 / 0.2, rel=1e-6)
    assert weight_integral(p, -math.inf, -1e5) == pytest.approx(weight_integral(p, 1e5, math.inf), rel=1e-12)


def test_constant_width_reparametrization():
    d = 2.0
    p = ChannelProfile.from_expressions("0", "2")
    r = build_reparametrization(p, 20.0, n=401)
    assert r.case_tag == "BothInfinite"
    for t in (0.5, 3.0, 10.0):
        assert r.k(t) == pytest.approx(t * d ** (-5 / 3), rel=1e-12)
        assert r.h(r.k(t)) == pytest.approx(t, rel=1e-12)
        assert weight_integral(p, 0, t, -5 / 3) == pytest.approx(r.k(t), rel=1e-12)


@pytest.mark.parametrize("gamma, tag", [(0.8, "BothFinite"), (0.5, "BothInfinite")])
def test_case_classification(gamma, tag):
    p = ChannelProfile.symmetric(f"0.5*(1+x^2)^{gamma / 2}")
    assert classify_case(p) == tag


def test_reparametrization_invariants(quarter):
    r = build_reparametrization(quarter, 40.0, n=801)
    assert np.all(np.diff(r.k_grid) > 0)
    for t in np.linspace(-30, 30, 13):
        assert r.h(r.k(t)) == pytest.approx(t, abs=1e-9)
    # signed slope bounds of h_L and h_R
    ts = np.linspace(r.t_star + 0.1 if r.t_star else 0.1, 0.9 * r.hat_horizon, 50)
    dd = quarter.d ** (5 / 3) / 2
    assert np.all(np.diff(r.hR(ts)) / np.diff(ts) >= dd * (1 - 1e-8))
    assert np.all(np.diff(r.hL(ts)) / np.diff(ts) <= -dd * (1 - 1e-8))
    for t in np.linspace(-40, 40, 17):
        kt = r.k(t)
        assert weight_integral(quarter, min(0, t), max(0, t), -5 / 3) == pytest.approx(abs(kt), rel=1e-10)


def test_unit_and_betastar_windows(quarter, straight):
    assert energy_windows(straight, None, 5.0, "Unit") == [(-5.0, -4.0), (4.0, 5.0)]
    (lo, hi), = energy_windows(quarter, None, 20.0, "BetaStar")
    assert hi == 20.0
    assert hi - lo == pytest.approx(quarter.beta_star * quarter.width(20.0), rel=1e-14)
    # straight channels fall back to unit windows
    assert energy_windows(straight, None, 3.0, "BetaStar") == [(2.0, 3.0)]
    with pytest.raises(BetaZero):
        energy_windows(straight, None, 3.0, "Hat")


def test_hat_window_degenerate_below_threshold(quarter):
    r = build_reparametrization(quarter, 40.0, n=801)
    assert r.t_star is not None
    with pytest.raises(DegenerateWindow):
        energy_windows(quarter, r, 0.5 * r.t_star, "Hat")
    wins = energy_windows(quarter, r, r.t_star + 1.0, "Hat")
    assert wins[0][1] < wins[1][0]


@settings(max_examples=30, deadline=None)
@given(st.floats(1.0, 30.0))
def test_betastar_window_sandwich(t):
    p = ChannelProfile.symmetric("0.5*(1+x^2)^0.25")
    (lo, hi), = energy_windows(p, None, t, "BetaStar")
    xi = np.linspace(lo, hi, 201)
    ft = p.width(t)
    f = p.width(xi)
    assert np.all(f >= 0.5 * ft) and np.all(f <= 1.5 * ft)


def test_truncated_domain(bump):
    dom = TruncatedDomain(bump, -2.0, 3.0)
    assert dom.length == 5.0
    assert dom.contains(0.0, 0.0)
    assert not dom.contains(0.0, 1.6)
    assert not dom.contains(3.5, 0.0)
    with pytest.raises(ValueError):
        TruncatedDomain(bump, 1.0, 1.0)
