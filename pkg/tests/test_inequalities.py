import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slipflow.errors import IncompatibleData
from slipflow.fem.mesh import build_mesh
from slipflow.geometry import ChannelProfile
from slipflow.inequalities import (M0, SLACK, InequalityReport, _slab_load, admissible_korn_trial,
                                   bogovskii_solve, calibrated_constants, constrained_space,
                                   embedding_measure, inequality_report, korn_check,
                                   korn_constant, m1_formula, m1_measure, poincare_measure,
                                   poincare_zero_flux_rejects, rotation_field, star_decomposition)

from conftest import domain

FAMILY = [
    ("straight", ("-1", "1"), -2, 2),
    ("bump", "1+0.5*exp(-x^2)", -2, 2),
    ("widening", "(1+x^2)^0.3", -5, 5),
    ("narrow", "0.5+0.2*exp(-x^2)", -2, 2),
    ("sine_top", ("-1", "1+0.3*sin(x)"), -3, 3),
]


def _profile(spec):
    if isinstance(spec, tuple):
        kw = {"gamma_pp": 0.3} if "sin" in spec[1] else {}
        return ChannelProfile.from_expressions(*spec, **kw)
    return ChannelProfile.symmetric(spec)


@pytest.fixture(scope="module", params=FAMILY, ids=[f[0] for f in FAMILY])
def family_member(request):
    _, spec, a, b = request.param
    d = domain(_profile(spec), a, b)
    return d, build_mesh(d, 4 * (b - a), 12)


# Poincare


def test_m0_reference():
    # 1D Neumann: first nonzero eigenvalue (pi / L)^2 on a section of length L
    assert M0 == pytest.approx(1 / math.pi, rel=1e-15)


def test_poincare_straight_converges_to_m0(straight):
    d = domain(straight, 0, 1)
    vals = [poincare_measure(d, build_mesh(d, 4, n))[0] for n in (4, 8, 16)]
    assert all(v <= M0 + SLACK for v in vals)
    assert abs(vals[-1] - M0) < abs(vals[0] - M0) and abs(vals[-1] - M0) < 1e-6


def test_poincare_family(family_member):
    d, mesh = family_member
    measured, m0 = poincare_measure(d, mesh)
    assert measured <= m0 + SLACK


def test_zero_flux_generator_rejects_constant(straight):
    mesh = build_mesh(domain(straight, 0, 1), 3, 3)
    assert poincare_zero_flux_rejects(mesh, np.ones(mesh.nnodes))
    # odd in x2: zero flux on every section
    assert not poincare_zero_flux_rejects(mesh, mesh.nodes[:, 1])


# M1 / M4 transfer of the calibrated constants


def test_calibration_values():
    cal = calibrated_constants()
    # straight unit channel: sup ||v|| / ||grad v|| is the section Poincare constant 2/pi
    assert cal["M1_reference"] == pytest.approx(2 / math.pi, rel=1e-5)
    assert cal["C_M1"] == pytest.approx(cal["M1_reference"] / m1_formula(
        ChannelProfile.from_expressions("-1", "1"), 0, 1), rel=1e-14)
    assert 0 < cal["C_M4"] < np.inf


def test_m1_and_m4_bounds_family(family_member):
    d, mesh = family_member
    cal = calibrated_constants()
    m1 = m1_measure(d, mesh)
    assert m1 <= m1_formula(d.profile, d.a, d.b, cal["C_M1"]) + SLACK
    emb = embedding_measure(d, mesh)
    assert 0 < emb["measured"] <= emb["formula"] + SLACK


def test_projected_fields_are_admissible(bump, rng):
    mesh = build_mesh(domain(bump, -1, 1), 6, 4)
    V = constrained_space(mesh)
    x = V.E @ rng.standard_normal(V.E.shape[1])
    assert V.admissible(x)


# Korn


def test_korn_constant_analytic(straight, bump):
    assert korn_constant(straight, 1.0) == 1.0
    # sup curvature of 1 + exp(-x^2)/2 sits at x = 0: |f''(0)| = 1, f'(0) = 0
    assert korn_constant(bump, 1.0) == pytest.approx(0.5, rel=1e-6)
    assert korn_constant(bump, 3.0) == pytest.approx(0.75, rel=1e-6)


@pytest.mark.parametrize("name", ["straight", "bump"])
def test_korn_margin_200_trials(name, straight, bump):
    prof = straight if name == "straight" else bump
    d = domain(prof, -2, 2)
    r = korn_check(d, build_mesh(d, 16, 8), 1.0, n_trials=200)
    assert r["n_trials"] == 200 and r["margin"] >= -1e-8 and r["verdict"] == "Pass"


def test_korn_identity_residual_rate(bump):
    d = domain(bump, -2, 2)
    res = [korn_check(d, build_mesh(d, 2 * n, n // 2), 1.0, n_trials=5)["identity_residual"]
           for n in (8, 16, 32)]
    rates = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert np.all(rates >= 1.0), rates


def test_rotation_rejected(bump):
    mesh = build_mesh(domain(bump, -2, 2), 8, 4)
    assert not admissible_korn_trial(mesh, rotation_field(mesh))


# star decomposition


def test_star_straight_single_piece(straight):
    sd = star_decomposition(straight, 0.5)
    assert sd.N == 1 and sd.R < min(0.5, sd.d / 2) and sd.certificates == [10_000]


def test_star_d1_beta_half(bump):
    sd = star_decomposition(bump, 0.5, d=1.0, beta=0.5)
    assert sd.N == 1 and sd.N > sd.beta / sd.d and sd.s > sd.beta
    # tangency relation fixing s
    cgap = sd.d / 2 - sd.beta / (2 * sd.N)
    assert sd.R == pytest.approx((sd.s / (2 * sd.N) - cgap) / math.sqrt(1 + sd.s**2), rel=1e-10)


@settings(max_examples=5, deadline=None)
@given(t=st.floats(-2.0, 3.0))
def test_star_steep_overlaps(t):
    prof = ChannelProfile.symmetric("0.5+1.5*exp(-x^2)")
    sd = star_decomposition(prof, t, rays=2000)
    assert sd.N == 2 and sd.N > sd.beta / sd.d
    assert len(sd.pieces) == 2 * sd.N - 1
    assert min(sd.overlaps) >= sd.d / (2 * sd.N) - 1e-12


def test_star_certificates_10k_rays(bump):
    sd = star_decomposition(bump, 0.5)
    assert all(c == 10_000 for c in sd.certificates)
    assert np.isfinite(sd.m5_bound()) and sd.m5_bound() > 0


# Bogovskii


def test_bogovskii_zero_datum(straight):
    d = domain(straight, 0, 1)
    r = bogovskii_solve(d, build_mesh(d, 4, 4), lambda x1, x2: 0 * x1)
    assert r["ratio"] == 0.0 and not r["a"].any()


def test_bogovskii_incompatible(straight):
    d = domain(straight, 0, 1)
    with pytest.raises(IncompatibleData):
        bogovskii_solve(d, build_mesh(d, 4, 4), lambda x1, x2: 1 + 0 * x1)


def test_bogovskii_unit_square():
    sq = ChannelProfile.from_expressions("0", "1")
    d = domain(sq, 0, 1)
    sd = star_decomposition(sq, 1.0)
    r = bogovskii_solve(d, build_mesh(d, 8, 8), lambda x1, x2: 2 * x1 - 1, sd)
    assert r["divergence_residual"] < 1e-12
    assert 0 < r["ratio"] <= r["bound"]


def test_bogovskii_translation_invariance(straight):
    ratios = []
    for t in (5.0, 20.0, 80.0):
        sl = domain(straight, t - 1, t)
        ratios.append(bogovskii_solve(sl, build_mesh(sl, 8, 8), _slab_load(sl), remove_mean=True)["ratio"])
    assert max(ratios) - min(ratios) < 1e-10 * max(ratios)


def test_bogovskii_bump_slabs_comparable(bump):
    ratios = []
    for t in (0.5, 5.0, 20.0, 80.0):
        sl = domain(bump, t - 1, t)
        ratios.append(bogovskii_solve(sl, build_mesh(sl, 8, 8), _slab_load(sl), remove_mean=True)["ratio"])
    assert max(ratios) / min(ratios) <= 2.0


# report


def test_report_has_no_violations(bump):
    d = domain(bump, -2, 2)
    rep = inequality_report(d, build_mesh(d, 16, 8), 1.0, slab_t=0.5, korn_trials=20)
    assert rep.violations() == []
    assert rep.star_params["N"] >= 1 and rep.M5_measured <= rep.M5_bound


def test_report_flags_violations():
    rep = InequalityReport(M0=0.3, M0_measured=0.31, M1_measured=1.0, M1_formula=2.0,
                           M4_measured=3.0, M4_formula=2.0, korn_c=1.0, korn_margin=-1e-3,
                           korn_identity_residual=0.0)
    assert rep.violations() == ["M0", "M4", "korn"]
