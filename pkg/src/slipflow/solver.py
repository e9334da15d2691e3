"""Linearized, Picard and Newton solves of the truncated flux problem.

The unknown is the zero-flux correction v = u - g on Omega_{a,b}: v = 0 on the
end sections, v.n = 0 on the walls, Navier slip through the weak wall term.
Picard freezes the advecting field at g + v_k (the fixed-point map of the
existence argument); Newton uses the full linearization as a finisher.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .carrier import FluxCarrier
from .errors import (
    ContinuationStalled,
    JacobianSingular,
    NotConverged,
    SingularSystem,
)
from .fem import assembly as asm
from .fem.mesh import build_mesh
from .fem.space import build_dofmap, cell_quadrature, gauss, lagrange1d, wall_quadrature
from .geometry import TruncatedDomain
from .shear import WEAK

DEFAULT_EPS = 0.25


@dataclass(frozen=True)
class MeshSpec:
    nx: int
    ny: int
    grading: str = "CarrierBand"
    x1_vertices: tuple | None = None
    order: int = 6  # Gauss points per direction


@dataclass(frozen=True)
class SolveOptions:
    tol_rel: float = 1e-10
    max_picard: int = 60
    max_newton: int = 20
    damping: float = 1.0
    max_halvings: int = 4
    continuation_steps: int = 8
    eps_halvings: int = 2  # carrier eps fallback on Picard stall
    convention: str = WEAK
    picard_switch: float = 1e-4  # hand-off tolerance used by solve_flow

    def __post_init__(self):
        if not (self.tol_rel > 0 and 0 < self.damping <= 1):
            raise ValueError("need tol_rel > 0 and damping in (0, 1]")


@dataclass
class SolveReport:
    method: str
    iterations: int = 0
    residuals: list = field(default_factory=list)
    energy: float = 0.0  # ||grad v||^2
    wall_energy: float = 0.0  # ||v||^2 on the walls
    carrier_energy: float = 0.0  # int |grad g|^2 + |g|^4
    bound_ratio: float = 0.0  # energy / carrier_energy (empirical C0)
    wall_clock: float = 0.0
    eps: float = DEFAULT_EPS
    phi: float = 0.0
    damping_events: int = 0
    monotone: bool = True
    converged: bool = False

    def as_dict(self):
        return {k: (list(map(float, v)) if isinstance(v, list) else v)
                for k, v in self.__dict__.items()}


class FlowProblem:
    """Assembled, Phi-scalable data for one domain, mesh and carrier eps.

    The carrier is linear in Phi, so g, grad g and the Oseen block scale
    by Phi while the load has a linear and a quadratic part.
    """

    def __init__(self, domain: TruncatedDomain, alpha, mesh_spec: MeshSpec, eps=DEFAULT_EPS,
                 phi=0.0, theta=None):
        self.domain = domain
        self.alpha = float(alpha)
        self.theta = 2.0 * self.alpha if theta is None else float(theta)
        self.mesh_spec = mesh_spec
        self.eps = float(eps)
        xv = None if mesh_spec.x1_vertices is None else np.asarray(mesh_spec.x1_vertices)
        self.mesh = build_mesh(domain, mesh_spec.nx, mesh_spec.ny, mesh_spec.grading,
                               x1_vertices=xv, eps=self.eps)
        self.dofmap = build_dofmap(self.mesh)
        self.quad = cell_quadrature(self.mesh, mesh_spec.order)
        unit = FluxCarrier(1.0, self.eps, domain.profile)
        g1, G1 = asm.carrier_at(unit, self.quad)
        self._g1, self._G1 = g1, G1
        self.A_visc = asm.assemble_viscous_slip(self.dofmap, self.theta, self.quad)
        self.B = asm.assemble_divergence(self.dofmap, self.quad)
        zero = np.zeros_like(g1)
        # split: -2(Dg, Dphi) is linear in Phi, (g.grad phi, g) quadratic
        self._rhs_lin = asm.assemble_carrier_rhs(self.dofmap, self.quad, zero, G1)
        self._rhs_quad = asm.assemble_carrier_rhs(self.dofmap, self.quad, g1, np.zeros_like(G1))
        self._Bred = None
        self.phi = float(phi)

    # -- Phi-dependent pieces ------------------------------------------------
    def carrier(self, phi=None):
        return FluxCarrier(self.phi if phi is None else phi, self.eps, self.domain.profile)

    def g(self, phi=None):
        return (self.phi if phi is None else phi) * self._g1

    def grad_g(self, phi=None):
        return (self.phi if phi is None else phi) * self._G1

    def rhs(self, phi=None):
        ph = self.phi if phi is None else phi
        return ph * self._rhs_lin + ph * ph * self._rhs_quad

    def with_phi(self, phi):
        out = object.__new__(FlowProblem)
        out.__dict__.update(self.__dict__)
        out.phi = float(phi)
        return out

    def with_eps(self, eps):
        return FlowProblem(self.domain, self.alpha, self.mesh_spec, eps, self.phi, self.theta)

    # -- reduced algebra ------------------------------------------------------
    @property
    def P(self):
        return self.dofmap.P

    def reduced_matrix(self, A_vel):
        K = sp.bmat([[A_vel, self.B.T], [self.B, None]], format="csr")
        return (self.P.T @ K @ self.P).tocsc()

    def reduced_rhs(self):
        return self.P.T @ np.concatenate([self.rhs(), np.zeros(self.dofmap.npres)])

    def fields(self, xfull):
        return asm.interpolate_field(self.dofmap, self.quad, xfull)

    def residual(self, xfull):
        """Reduced nonlinear residual of the weak problem."""
        nv = self.dofmap.nvel
        v, gv = self.fields(xfull)
        conv = asm.convection_residual(self.dofmap, self.quad, v, gv, self.g(), self.grad_g())
        rv = self.A_visc @ xfull[:nv] + conv + self.B.T @ xfull[nv:] - self.rhs()
        rp = self.B @ xfull[:nv]
        return self.P.T @ np.concatenate([rv, rp])

    def rhs_norm(self):
        return max(float(np.linalg.norm(self.reduced_rhs())), 1e-300)

    def oseen_matrix(self, xfull=None, newton=False):
        if xfull is None:
            v = np.zeros_like(self._g1)
            gv = np.zeros_like(self._G1)
        else:
            v, gv = self.fields(xfull)
        C = asm.assemble_oseen(self.dofmap, self.quad, self.grad_g(), self.g() + v,
                               v_lin=v if newton else None, grad_v_lin=gv if newton else None)
        return self.A_visc + C

    def carrier_energy(self):
        return float(self.carrier().energy(self.domain.a, self.domain.b))

    def normalize_pressure(self, xfull):
        """Shift cell constants so the pressure has zero mean."""
        nv = self.dofmap.nvel
        p = asm.pressure_at(self.dofmap, self.quad, xfull)
        area = float(np.sum(self.quad.w))
        mean = float(np.sum(self.quad.w * p)) / area
        out = xfull.copy()
        out[nv::3] -= mean
        return out


def build_problem(domain: TruncatedDomain, alpha, mesh_spec: MeshSpec, eps=DEFAULT_EPS, phi=0.0,
                  theta=None) -> FlowProblem:
    return FlowProblem(domain, alpha, mesh_spec, eps, phi, theta)


@dataclass
class FlowState:
    """Discrete (v, p) and the reconstructed u = v + g on one problem."""

    problem: FlowProblem
    x: np.ndarray  # full unknown vector (velocity nodes, pressure coefficients)

    @property
    def phi(self):
        return self.problem.phi

    @property
    def v_nodes(self):
        return self.x[: self.problem.dofmap.nvel].reshape(-1, 2)

    def u_at_quad(self):
        v, gv = self.problem.fields(self.x)
        return v + self.problem.g(), gv + self.problem.grad_g()

    def grad_energy_v(self):
        _, gv = self.problem.fields(self.x)
        return float(np.sum(self.problem.quad.w * np.sum(gv**2, axis=(-2, -1))))

    def wall_energy(self):
        """||v||^2 = ||u||^2 on the walls (g vanishes there), arc-length measure."""
        return float(sum(np.sum(c) for c in self.wall_density_cells()))

    def wall_density_cells(self, order=5):
        mesh = self.problem.mesh
        out = []
        vel = self.v_nodes
        for side in ("Bottom", "Top"):
            wq = wall_quadrature(mesh, side, order)
            vv = np.einsum("qk,ekc->eqc", wq.N, vel[mesh.cell_nodes[wq.cells]])
            out.append(np.sum(wq.w * np.sum(vv**2, -1), axis=1))
        return out

    def divergence_residual(self):
        """max_q |(q, div v)| over all (unpinned and pinned) pressure basis functions."""
        nv = self.problem.dofmap.nvel
        return float(np.max(np.abs(self.problem.B @ self.x[:nv])))

    def wall_normal_max(self):
        mesh = self.problem.mesh
        out = 0.0
        for side in ("Bottom", "Top"):
            nodes = mesh.facet_nodes(side)
            n, _ = mesh.wall_frame(mesh.nodes[nodes, 0], side)
            out = max(out, float(np.max(np.abs(np.sum(self.v_nodes[nodes] * n, -1)))))
        return out

    def section_fluxes(self, order=6, include_midcolumns=False):
        """(x1, int u1 dx2) on the mesh sections (cell-boundary columns).

        The carrier part is exact (G jumps by Phi across a section); the
        correction is integrated with Gauss points along each column.
        Mid-node columns lie inside cells, where the cell-wise mass balance
        says nothing, and are only included on request.
        """
        mesh = self.problem.mesh
        g, gw = gauss(order)
        L, _ = lagrange1d(g)
        x1 = mesh.x1_nodes
        vel = self.v_nodes[:, 0].reshape(mesh.n1, mesh.n2)
        hs = np.diff(mesh.sv)
        f = np.asarray(mesh.profile.width(x1), dtype=float) * np.ones_like(x1)
        flux = np.zeros(mesh.n1)
        for cj in range(mesh.ny):
            nodes = vel[:, 2 * cj: 2 * cj + 3]
            flux += 0.5 * hs[cj] * np.einsum("q,qk,ik->i", gw, L, nodes)
        flux = flux * f + self.phi
        if include_midcolumns:
            return x1, flux
        return x1[0::2], flux[0::2]

    def flux_error(self):
        _, fl = self.section_fluxes()
        return float(np.max(np.abs(fl - self.phi)))


def _lu(K, err):
    try:
        return spla.splu(K, permc_spec="COLAMD")
    except RuntimeError as exc:  # SuperLU reports exact singularity this way
        raise err(str(exc)) from exc


def _finish(problem, xr, report, t0, converged=True):
    x = problem.normalize_pressure(problem.P @ xr)
    state = FlowState(problem, x)
    report.energy = state.grad_energy_v()
    report.wall_energy = state.wall_energy()
    report.carrier_energy = problem.carrier_energy() if problem.phi > 0 else 0.0
    report.bound_ratio = report.energy / report.carrier_energy if report.carrier_energy > 0 else 0.0
    report.wall_clock = time.perf_counter() - t0
    report.eps = problem.eps
    report.phi = problem.phi
    report.converged = converged
    r = report.residuals
    report.monotone = all(b <= a * (1 + 1e-12) for a, b in zip(r, r[1:]))
    return state


def solve_linearized(problem: FlowProblem, rhs=None, convective=True):
    """One Lax-Milgram solve of the (optionally g-linearized) problem.

    ``rhs`` is a full-space velocity load (default: the carrier load).
    Returns the FlowState; raises SingularSystem on a singular factorization.
    """
    t0 = time.perf_counter()
    A = problem.oseen_matrix() if convective else problem.A_visc
    K = problem.reduced_matrix(A)
    load = problem.rhs() if rhs is None else rhs
    r = problem.P.T @ np.concatenate([load, np.zeros(problem.dofmap.npres)])
    if not np.any(r):
        xr = np.zeros(K.shape[0])
    else:
        xr = _lu(K, SingularSystem).solve(r)
        if not np.all(np.isfinite(xr)):
            raise SingularSystem("non-finite solution")
        res = np.linalg.norm(K @ xr - r)
        if res > 1e-8 * np.linalg.norm(r):
            raise SingularSystem(f"algebraic residual {res:.3e}")
    report = SolveReport("linear", iterations=1)
    return _finish(problem, xr, report, t0)


def picard_solve(problem: FlowProblem, options: SolveOptions = SolveOptions(), x0=None, tol=None,
                 allow_eps_fallback=True):
    """Damped fixed-point iteration v_{k+1} = K(v_k) with advecting field g + v_k.

    Returns (state, report).  On stall the carrier eps is halved (at most
    ``options.eps_halvings`` times) and the iteration restarts from zero.
    """
    tol = options.tol_rel if tol is None else tol
    attempt = problem
    last_exc = None
    for k in range(options.eps_halvings + 1 if allow_eps_fallback else 1):
        try:
            return _picard(attempt, options, x0 if k == 0 else None, tol)
        except NotConverged as exc:
            last_exc = exc
            attempt = attempt.with_eps(attempt.eps / 2.0)
    raise last_exc


def _picard(problem, options, x0, tol):
    t0 = time.perf_counter()
    report = SolveReport("picard")
    P = problem.P
    nred = P.shape[1]
    scale = problem.rhs_norm()
    if problem.phi == 0.0 and x0 is None:
        report.residuals.append(0.0)
        report.iterations = 1
        return _finish(problem, np.zeros(nred), report, t0), report
    xr = np.zeros(nred) if x0 is None else P.T @ x0
    res = np.linalg.norm(problem.residual(P @ xr)) / scale
    report.residuals.append(res)
    omega = options.damping
    for it in range(1, options.max_picard + 1):
        K = problem.reduced_matrix(problem.oseen_matrix(P @ xr))
        x_new = _lu(K, SingularSystem).solve(problem.reduced_rhs())
        step = x_new - xr
        halvings = 0
        while True:
            trial = xr + omega * step
            r_trial = np.linalg.norm(problem.residual(P @ trial)) / scale
            if np.isfinite(r_trial) and (r_trial <= res or halvings >= options.max_halvings):
                break
            omega *= 0.5
            halvings += 1
            report.damping_events += 1
        if not np.isfinite(r_trial) or r_trial > res * 1.5:
            report.iterations = it
            raise NotConverged(f"Picard diverged at iteration {it} (residual {r_trial:.3e})",
                               residual=r_trial, report=report)
        upd = np.linalg.norm(omega * step) / max(np.linalg.norm(trial), 1e-300)
        xr, res = trial, r_trial
        report.residuals.append(res)
        omega = min(options.damping, 2.0 * omega)
        if res < tol or (upd < tol and res < 10 * tol):
            report.iterations = it
            return _finish(problem, xr, report, t0), report
    report.iterations = options.max_picard
    raise NotConverged(f"Picard stalled after {options.max_picard} iterations (residual {res:.3e})",
                       residual=res, report=report)


def newton_solve(problem: FlowProblem, options: SolveOptions = SolveOptions(), warm_start=None):
    """Newton iteration with the full linearization; warm_start is a FlowState or full vector."""
    t0 = time.perf_counter()
    report = SolveReport("newton")
    P = problem.P
    if warm_start is None:
        x = np.zeros(P.shape[0])
    elif isinstance(warm_start, FlowState):
        x = warm_start.x
    else:
        x = np.asarray(warm_start, dtype=float)
    xr = P.T @ x
    scale = problem.rhs_norm()
    R = problem.residual(P @ xr)
    res = np.linalg.norm(R) / scale
    report.residuals.append(res)
    # tail accuracy is limited by roundoff of the assembled operators
    floor = 1e3 * np.finfo(float).eps
    for it in range(1, options.max_newton + 1):
        if res < max(options.tol_rel, floor):
            report.iterations = it - 1
            return _finish(problem, xr, report, t0), report
        J = problem.reduced_matrix(problem.oseen_matrix(P @ xr, newton=True))
        delta = _lu(J, JacobianSingular).solve(-R)
        if not np.all(np.isfinite(delta)):
            raise JacobianSingular("non-finite Newton step")
        omega = options.damping
        for _ in range(options.max_halvings + 1):
            trial = xr + omega * delta
            R_t = problem.residual(P @ trial)
            r_t = np.linalg.norm(R_t) / scale
            if r_t < res:
                break
            omega *= 0.5
            report.damping_events += 1
        if not r_t < res:
            if res < 1e2 * max(options.tol_rel, floor):
                report.iterations = it
                return _finish(problem, xr, report, t0), report
            raise NotConverged(f"Newton made no progress (residual {res:.3e})", residual=res,
                               report=report)
        xr, R, res = trial, R_t, r_t
        report.residuals.append(res)
    if res < max(options.tol_rel, floor):
        report.iterations = options.max_newton
        return _finish(problem, xr, report, t0), report
    raise NotConverged(f"Newton not converged (residual {res:.3e})", residual=res, report=report)


def solve_flow(problem: FlowProblem, options: SolveOptions = SolveOptions(), x0=None):
    """Picard to ``options.picard_switch`` followed by Newton to ``tol_rel``."""
    state, rep_p = picard_solve(problem, options, x0=x0, tol=max(options.picard_switch, options.tol_rel))
    if state.problem is not problem:
        problem = state.problem
    state, rep_n = newton_solve(problem, options, warm_start=state)
    rep_n.method = "picard+newton"
    rep_n.iterations += rep_p.iterations
    rep_n.residuals = rep_p.residuals + rep_n.residuals[1:]
    rep_n.wall_clock += rep_p.wall_clock
    rep_n.damping_events += rep_p.damping_events
    return state, rep_n


def continuation_in_flux(problem: FlowProblem, options: SolveOptions, phi_target, ladder=None,
                         warm_start=None):
    """Ramp of Phi up to ``phi_target``, warm-starting every step.

    The default ladder is geometric (``options.continuation_steps`` values,
    ratio 2).  An explicit increasing ``ladder`` ending at ``phi_target`` and a
    ``warm_start`` state (solved at a smaller Phi) may be supplied.
    """
    if phi_target < 0:
        raise ValueError("phi_target must be nonnegative")
    if phi_target == 0:
        state, rep = picard_solve(problem.with_phi(0.0), options)
        return state, [rep]
    if ladder is None:
        n = max(1, options.continuation_steps)
        start = phi_target / 2.0 ** (n - 1) if n > 1 else phi_target
        ladder = np.geomspace(start, phi_target, n) if n > 1 else np.array([phi_target])
    else:
        ladder = np.asarray(ladder, dtype=float)
        if ladder.size == 0 or np.any(np.diff(ladder) <= 0) or ladder[-1] != phi_target:
            raise ValueError("ladder must increase strictly and end at phi_target")
    reports = []
    x = None
    if warm_start is not None:
        x = warm_start.x if isinstance(warm_start, FlowState) else np.asarray(warm_start, dtype=float)
    last_ok = 0.0
    prob = problem
    for phi in ladder:
        prob = prob.with_phi(float(phi))
        try:
            if x is None:
                state, rep = solve_flow(prob, options)
            else:
                state, rep = newton_solve(prob, options, warm_start=x)
        except (NotConverged, JacobianSingular) as exc:
            try:
                state, rep = solve_flow(prob, options, x0=x)
            except (NotConverged, JacobianSingular):
                raise ContinuationStalled(f"continuation stalled at Phi = {phi:.6g}",
                                          last_phi=last_ok, reports=reports) from exc
        prob = state.problem
        x = state.x
        last_ok = float(phi)
        reports.append(rep)
    return state, reports


@dataclass
class UniquenessVerdict:
    verdict: str  # Unique or MultipleCandidates
    distances: np.ndarray
    energies: list
    failures: list
    note: str = "numerical evidence only; class membership of the limit is not certified"

    def as_dict(self):
        return {"verdict": self.verdict, "max_distance": float(np.max(self.distances, initial=0.0)),
                "distances": self.distances.tolist(), "energies": list(map(float, self.energies)),
                "failures": self.failures, "note": self.note}


def uniqueness_probe(problem: FlowProblem, options: SolveOptions = SolveOptions(), n_seeds=5,
                     seed=0, radius=1.0):
    """Newton from ``n_seeds`` random bounded initial states; compare the limits.

    Random starts are smooth: the Stokes response to a random load, scaled
    to ||grad v0|| = radius.
    """
    if n_seeds < 2:
        raise ValueError("n_seeds must be >= 2")
    rng = np.random.default_rng(seed)
    P = problem.P
    nv = problem.dofmap.nvel
    Kst = problem.reduced_matrix(problem.A_visc)
    lu = _lu(Kst, SingularSystem)
    finals, energies, failures = [], [], []
    for k in range(n_seeds):
        load = rng.standard_normal(nv)
        y = P @ lu.solve(P.T @ np.concatenate([load, np.zeros(problem.dofmap.npres)]))
        y[nv:] = 0.0
        _, gy = problem.fields(y)
        nrm = np.sqrt(np.sum(problem.quad.w * np.sum(gy**2, axis=(-2, -1))))
        x0 = y * (radius / nrm) if nrm > 0 else y
        try:
            st, _ = newton_solve(problem, options, warm_start=x0)
        except (NotConverged, JacobianSingular) as exc:
            failures.append({"seed_index": k, "error": str(exc)})
            continue
        finals.append(st)
        energies.append(st.grad_energy_v())
    m = len(finals)
    dist = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            _, gd = problem.fields(finals[i].x - finals[j].x)
            dist[i, j] = dist[j, i] = np.sqrt(np.sum(problem.quad.w * np.sum(gd**2, axis=(-2, -1))))
    ok = m >= 2 and np.max(dist, initial=0.0) <= 10 * max(options.tol_rel, 1e-12) * max(1.0, np.sqrt(max(energies)))
    return UniquenessVerdict("Unique" if ok else "MultipleCandidates", dist, energies, failures)
