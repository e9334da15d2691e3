import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings, strategies as st

from slipflow.errors import HypothesisViolated, WindowTooShort
from slipflow.estimates import (ComparisonProblem, EnergyMeter, EnergyProfile, barrier_oracle,
                                bound_form_values, compare_diff_ineq, comparison_coefficient,
                                comparison_residual, comparison_solution, condition_check,
                                decay_rate_check, energy_profile, far_field_check, fit_growth,
                                lower_bound_check, plateau_check, uniform_local_check)
from slipflow.geometry import ChannelProfile
from slipflow.shear import make_shear
from slipflow.solver import MeshSpec, build_problem, solve_flow

from conftest import domain


@pytest.fixture(scope="module")
def long_straight(straight):
    """Phi = 0.1 on (-12, 12); the middle is far enough from both end layers."""
    pr = build_problem(domain(straight, -12, 12), 1.0, MeshSpec(96, 32), phi=0.1)
    state, _ = solve_flow(pr)
    return state, EnergyMeter(state)


@pytest.fixture(scope="module")
def zero_flux(straight):
    pr = build_problem(domain(straight, -4, 4), 1.0, MeshSpec(8, 4), phi=0.0)
    state, _ = solve_flow(pr)
    return state


# energy meter and profile


@settings(max_examples=25, deadline=None)
@given(cuts=st.lists(st.floats(-11.9, 11.9), min_size=1, max_size=6, unique=True))
def test_window_additivity(long_straight, cuts):
    _, meter = long_straight
    x = np.concatenate([[-12.0], np.sort(cuts), [12.0]])
    parts = sum(meter.window(a, b)["total_u"] for a, b in zip(x[:-1], x[1:]))
    whole = meter.window(-12.0, 12.0)["total_u"]
    assert parts == pytest.approx(whole, rel=1e-10)


def test_zero_flux_profile(zero_flux):
    ep = energy_profile(zero_flux)
    assert not ep.y.any() and not ep.yv.any()
    assert lower_bound_check(zero_flux)["ratio"].max() == 0.0


def test_profile_monotone(long_straight):
    state, meter = long_straight
    assert energy_profile(state, meter=meter).is_monotone()


def test_straight_energy_matches_shear(straight):
    # oracle: closed-form shear densities; 5% needs about 64 cells across
    pr = build_problem(domain(straight, -4, 4), 1.0, MeshSpec(32, 64), phi=0.1)
    state, _ = solve_flow(pr)
    U = make_shear(0.1, 1.0)
    t = np.array([0.5, 1.0, 1.5])
    ep = energy_profile(state, t_grid=t)
    exact = 2 * t * (U.dirichlet_density() + U.wall_density())
    assert np.all(np.abs(ep.y / exact - 1) < 0.05)


# growth fits


def test_fit_exact_synthetic(quarter):
    t = np.linspace(0.5, 20, 40)
    for form, prof in (("Linear", None), ("WeightIntegral", quarter)):
        b = bound_form_values(form, t, prof)
        ep = EnergyProfile(t, 2 + 3 * b, 2 + 3 * b, profile=prof)
        fit = fit_growth(ep, form)
        assert fit.slope == pytest.approx(3) and fit.intercept == pytest.approx(2)
        assert fit.residual < 1e-12 and fit.verdict == "Pass"


def test_fit_stability_against_reference():
    t = np.linspace(0.5, 20, 40)
    ref = fit_growth(EnergyProfile(t, 1 + t, 1 + t))
    good = fit_growth(EnergyProfile(2 * t, 1 + 1.2 * t * 2, 0 * t), reference=ref)
    bad = fit_growth(EnergyProfile(2 * t, 1 + 1.3 * t * 2, 0 * t), reference=ref)
    assert good.verdict == "Pass" and bad.verdict == "Fail"
    assert bad.stability == pytest.approx(0.3)


def test_fit_window_too_short():
    t = np.linspace(0.5, 2.5, 5)
    with pytest.raises(WindowTooShort):
        fit_growth(EnergyProfile(t, t, t))
    with pytest.raises(ValueError):
        bound_form_values("Cubic", t)


def test_straight_linear_fit(long_straight):
    state, meter = long_straight
    fit = fit_growth(energy_profile(state, meter=meter), "Linear")
    assert fit.verdict == "Pass" and fit.slope > 0


def test_plateau_synthetic():
    t = np.linspace(0.5, 40, 80)
    flat = plateau_check(EnergyProfile(t, 5 - np.exp(-t), t))
    rising = plateau_check(EnergyProfile(t, t, t))
    assert flat["verdict"] == "Pass" and rising["verdict"] == "Fail"
    assert rising["ratio"] == pytest.approx(1.5, rel=0.05)


# local checks on the straight channel


def test_lower_bound_straight_constant(long_straight):
    state, meter = long_straight
    lb = lower_bound_check(state, t_grid=np.arange(1.0, 7.0), meter=meter)
    r = lb["ratio"]
    assert lb["verdict"] == "Pass"
    assert r.max() / r.min() - 1 < 1e-3


def test_uniform_local_straight(long_straight):
    state, meter = long_straight
    u = uniform_local_check(state, meter=meter, end_margin=10.0)
    inner = u["energy"][u["interior"]]
    assert inner.size == 4
    assert inner.max() / inner.min() - 1 < 1e-6
    assert u["verdict"] == "Pass"


def test_uniform_local_end_flag_is_bookkeeping(long_straight):
    state, meter = long_straight
    a = uniform_local_check(state, meter=meter)
    b = uniform_local_check(state, meter=meter, include_ends=True)
    assert np.array_equal(a["energy"], b["energy"])
    assert b["include_ends"] and b["ratio"] > a["ratio"]


def test_far_field_straight(long_straight):
    state, meter = long_straight
    ff = far_field_check(state, k_start=0.0, meter=meter)
    inner = ff["slab_hi"] <= ff["x_end"]
    assert ff["verdict"] == "Pass"
    assert np.all(ff["deviation"][inner] <= ff["noise_floor"][inner])


def test_far_field_needs_straight_tail(bump):
    pr = build_problem(domain(bump, -3, 3), 1.0, MeshSpec(12, 4), phi=0.1)
    state, _ = solve_flow(pr)
    with pytest.raises(ValueError):
        far_field_check(state, k_start=0.0)


def test_decay_rate_straight_constant(long_straight):
    state, meter = long_straight
    d = decay_rate_check(state, t_grid=np.linspace(-1, 1, 5), meter=meter)
    assert d["spread"] - 1 < 1e-6 and d["verdict"] == "Pass"


# far-field conditions


@pytest.mark.parametrize("gamma,label", [("0.25", "Cond_1_17"), ("0.1", "Cond_1_16"),
                                         ("0.35", "Neither")])
def test_condition_power_laws(gamma, label):
    prof = ChannelProfile.symmetric(f"0.5*(1+x^2)^{gamma}")
    r = condition_check(prof)
    assert r["label"] == label and r["power_law_consistent"]


def test_condition_bounded_width(bump):
    assert condition_check(bump)["label"] == "Cond_1_16"


# comparison engine


@pytest.mark.parametrize("n", [11, 101, 1001, 10001])
def test_part1_passes_at_all_refinements(n):
    t = np.linspace(0, 10, n)
    phi = 1 + t
    v = compare_diff_ineq(ComparisonProblem.power_law(t, phi / 2, phi, 0.1))
    assert v.verdict == "Pass"


def test_comparison_solution_closed_form():
    # z = t^3 / (108 c0^2) solves z = 2 c0 (z')^{3/2}, symbolically and numerically
    t, c0 = sp.symbols("t c0", positive=True)
    z = t**3 / (108 * c0**2)
    assert sp.simplify(z - 2 * c0 * sp.diff(z, t) ** sp.Rational(3, 2)) == 0
    for c in (0.3, 1.0, 7.0):
        assert comparison_coefficient(c, 1.5, 0.5) == pytest.approx(1 / (108 * c * c), rel=1e-14)
        tt = np.linspace(0.1, 50, 200)
        assert np.max(comparison_residual(tt, c, 1.5, 0.5)) < 1e-10
        assert np.allclose(comparison_solution(tt, c, 1.5, 0.5), tt**3 / (108 * c * c), rtol=1e-12)


@pytest.mark.parametrize("n", [21, 101, 1001])
@pytest.mark.parametrize("frac", [1 / 3, 1 / 2, 4 / 5])
def test_violation_localized(n, frac):
    t = np.linspace(0, 10, n)
    phi = 1 + t
    z = phi / 2
    k = int(frac * (n - 1))
    z[k] = phi[k] + 0.5
    pb = ComparisonProblem.power_law(t, z, phi, 0.1)
    with pytest.raises(HypothesisViolated) as exc:
        compare_diff_ineq(pb)
    _, j = barrier_oracle(pb)
    assert exc.value.index == k == j


def test_barrier_dominates_valid_samples():
    t = np.linspace(0, 10, 201)
    phi = 1 + t
    pb = ComparisonProblem.power_law(t, phi / 2, phi, 0.1)
    w, j = barrier_oracle(pb)
    assert j is None and np.all(phi / 2 <= w + 1e-8)


def test_part3_liminf():
    t = np.linspace(1, 100, 400)
    c0 = 0.5
    z = 2 * comparison_solution(t, c0)
    v = compare_diff_ineq(ComparisonProblem.pure_power(t, z, None, c0), "Part3")
    assert v.verdict == "Pass" and v.details["ratio"] == pytest.approx(2.0, rel=1e-6)


def test_psi_must_be_monotone():
    t = np.linspace(0, 1, 5)
    with pytest.raises(ValueError):
        ComparisonProblem(t, t, t, lambda _t, s: -s)
    with pytest.raises(ValueError):
        ComparisonProblem(t, t, t, lambda _t, s: s, delta1=1.0)
