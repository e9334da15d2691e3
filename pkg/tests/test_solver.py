import numpy as np
import pytest

from slipflow.errors import NotConverged
from slipflow.fem.mesh import curvature_adapted_vertices
from slipflow.inequalities import korn_constant
from slipflow.shear import make_shear
from slipflow.solver import (MeshSpec, SolveOptions, build_problem, continuation_in_flux,
                             newton_solve, picard_solve, solve_flow, solve_linearized,
                             uniqueness_probe)

from conftest import domain


def _interior_error(state, U, half):
    """L2 distance of u from the shear profile over |x1| < half, and ||U|| there."""
    q = state.problem.quad
    u, _ = state.u_at_quad()
    m = np.abs(q.x[..., 0]) < half
    x2 = q.x[..., 1]
    d = (u[..., 0] - U(x2)) ** 2 + u[..., 1] ** 2
    return np.sqrt(np.sum(q.w * m * d)), np.sqrt(np.sum(q.w * m * U(x2) ** 2))


@pytest.fixture(scope="module")
def straight_problem(straight):
    return build_problem(domain(straight, -4, 4), 1.0, MeshSpec(16, 8))


def test_zero_rhs_gives_zero(straight_problem):
    st = solve_linearized(straight_problem, rhs=np.zeros(straight_problem.dofmap.nvel))
    assert not st.x.any()


def test_zero_flux_carrier_gives_zero(straight_problem):
    st = solve_linearized(straight_problem.with_phi(0.0))
    assert not st.x.any()
    st, rep = picard_solve(straight_problem.with_phi(0.0))
    assert rep.iterations == 1 and not st.x.any()


def test_linear_solve_algebraic_residual(bump):
    pr = build_problem(domain(bump, -3, 3), 1.0, MeshSpec(16, 8), phi=0.5)
    st = solve_linearized(pr)
    K = pr.reduced_matrix(pr.oseen_matrix())
    r = pr.reduced_rhs()
    # undo the zero-mean pressure shift so the pinned constant is zero again
    x = st.x.copy()
    nv = pr.dofmap.nvel
    x[nv::3] -= x[nv + 3 * (pr.mesh.ncells - 1)]
    assert np.linalg.norm(K @ (pr.P.T @ x) - r) < 1e-12 * np.linalg.norm(r)


def test_stokes_limit_converges_to_shear(straight):
    # oracle: the shear flow solves the Stokes problem in the straight channel
    U = make_shear(0.1, 1.0)
    errs = []
    for nx, ny in ((32, 8), (64, 16), (128, 32)):
        pr = build_problem(domain(straight, -8, 8), 1.0, MeshSpec(nx, ny), phi=0.1)
        errs.append(_interior_error(solve_linearized(pr, convective=False), U, 4.0)[0])
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 2.5), orders


def test_picard_straight_matches_shear(straight):
    pr = build_problem(domain(straight, -4, 4), 1.0, MeshSpec(32, 16), phi=0.1)
    st, rep = picard_solve(pr)
    assert rep.converged and rep.residuals[-1] < 1e-10
    h = 8.0 / 32
    e, _ = _interior_error(st, make_shear(0.1, 1.0), 2.0)
    assert e < 10 * h**3
    assert 0 < rep.bound_ratio < np.inf


def test_picard_monotone_flag(straight_problem):
    _, rep = picard_solve(straight_problem.with_phi(1.0))
    r = rep.residuals
    assert rep.monotone == all(b <= a * (1 + 1e-12) for a, b in zip(r, r[1:]))


def test_large_flux_continuation(straight_problem):
    # plain Picard may fail here; continuation must succeed either way
    pr = straight_problem.with_phi(50.0)
    try:
        picard_solve(pr, SolveOptions(eps_halvings=0))
    except NotConverged:
        pass
    st, reps = continuation_in_flux(pr, SolveOptions(), 50.0)
    assert len(reps) == 8 and all(r.converged for r in reps)
    assert st.flux_error() < 1e-7 * 50


def test_continuation_phi10_flux(straight_problem):
    st, reps = continuation_in_flux(straight_problem, SolveOptions(continuation_steps=8), 10.0)
    assert reps[-1].phi == 10.0
    assert st.flux_error() < 1e-8


def test_continuation_zero_target(straight_problem):
    st, reps = continuation_in_flux(straight_problem, SolveOptions(), 0.0)
    assert len(reps) == 1 and not st.x.any()


def test_continuation_rejects_bad_ladder(straight_problem):
    with pytest.raises(ValueError):
        continuation_in_flux(straight_problem, SolveOptions(), 1.0, ladder=[0.5, 0.2, 1.0])
    with pytest.raises(ValueError):
        continuation_in_flux(straight_problem, SolveOptions(), -1.0)


def test_newton_from_picard_state(straight_problem):
    pr = straight_problem.with_phi(1.0)
    st, _ = picard_solve(pr)
    _, rep = newton_solve(pr, warm_start=st)
    assert rep.iterations <= 2 and rep.residuals[-1] < 1e-14


def test_newton_tiny_flux_from_zero(straight_problem):
    _, rep = newton_solve(straight_problem.with_phi(1e-3))
    assert rep.converged


def test_newton_quadratic_tail(straight_problem):
    _, rep = newton_solve(straight_problem.with_phi(3.0))
    r = np.array(rep.residuals)
    # r_{k+1} / r_k^2 bounded once in the contraction regime
    tail = r[2:] / r[1:-1] ** 2
    assert np.all(tail < 1e3), tail


def _bump_spec(d, ny=32):
    # curved walls leak flux between Q2 nodes unless the cells there are small
    xv = curvature_adapted_vertices(d, h_curved=0.0625)
    return MeshSpec(len(xv) - 1, ny, x1_vertices=tuple(xv))


def test_energy_inequality_and_flux(bump):
    alpha = 1.0
    d = domain(bump, -4, 4)
    pr = build_problem(d, alpha, _bump_spec(d), phi=1.0)
    st, rep = solve_flow(pr)
    c = korn_constant(bump, alpha)
    gn = np.sqrt(rep.energy)
    lhs = 0.5 * c * rep.energy + alpha * rep.wall_energy
    assert lhs <= 2 * np.sqrt(rep.carrier_energy) * gn + 1e-8
    assert st.flux_error() < 1e-7
    assert st.wall_normal_max() < 1e-12


def test_reconstructed_flux_all_sections(bump):
    d = domain(bump, -3, 3)
    spec = _bump_spec(d)
    pr = build_problem(d, 1.0, spec, phi=0.3)
    st, _ = solve_flow(pr)
    x1, fl = st.section_fluxes()
    assert len(x1) == spec.nx + 1 and np.max(np.abs(fl - 0.3)) < 1e-7


def test_uniqueness_zero_flux(straight_problem):
    v = uniqueness_probe(straight_problem.with_phi(0.0), n_seeds=3)
    assert v.verdict == "Unique"


def test_uniqueness_small_flux_bump_deterministic(bump):
    pr = build_problem(domain(bump, -3, 3), 1.0, MeshSpec(16, 8), phi=0.05)
    a = uniqueness_probe(pr, n_seeds=5, seed=7)
    b = uniqueness_probe(pr, n_seeds=5, seed=7)
    assert a.verdict == "Unique" and np.max(a.distances) < 1e-8
    assert np.array_equal(a.distances, b.distances) and a.energies == b.energies


def test_uniqueness_needs_two_seeds(straight_problem):
    with pytest.raises(ValueError):
        uniqueness_probe(straight_problem, n_seeds=1)


def test_options_validation():
    with pytest.raises(ValueError):
        SolveOptions(damping=1.5)
    with pytest.raises(ValueError):
        SolveOptions(tol_rel=0.0)
