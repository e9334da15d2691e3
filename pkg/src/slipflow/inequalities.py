"""Numerical lab for the channel functional inequalities.

Rayleigh-type constants are measured on mapped Q2 meshes with the flow
constraints built in (impermeable walls, zero flux through every section,
optionally clamped ends).  Measured values are lower bounds of the true
suprema; formula values with a calibrated universal constant are upper
bounds, and the lab checks that the second dominates the first.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .errors import IncompatibleData, NotStarLike
from .fem import assembly as asm
from .fem.mesh import Mesh, build_mesh
from .fem.space import build_dofmap, cell_quadrature, gauss, lagrange1d, wall_quadrature
from .geometry import ChannelProfile, TruncatedDomain, weight_integral

M0 = 1.0 / math.pi  # zero-mean 1D Poincare constant of the f-normalized form
SLACK = 1e-8
CALIBRATION_MESH = (24, 24)


# ---------------------------------------------------------------------------
# shared discrete pieces
# ---------------------------------------------------------------------------

def _laplacian(mesh: Mesh, quad):
    lap = np.einsum("eq,eqkd,eqld->ekl", quad.w, quad.dN, quad.dN, optimize=True)
    return lap


def _scalar_matrix(mesh, blocks):
    cn = mesh.cell_nodes
    return asm._scatter(cn, cn, blocks, (mesh.nnodes, mesh.nnodes))


def _vector_matrix(mesh, scalar_blocks):
    blk = np.zeros((mesh.ncells, 9, 2, 9, 2))
    blk[:, :, 0, :, 0] = scalar_blocks
    blk[:, :, 1, :, 1] = scalar_blocks
    d = asm._vel_dofs(mesh)
    return asm._scatter(d, d, asm._interleave(blk), (2 * mesh.nnodes, 2 * mesh.nnodes))


def _column_weights(mesh):
    """Weights c_J with int_0^1 v ds = sum_J c_J v(J) on a node column."""
    g, gw = gauss(3)
    L, _ = lagrange1d(g)
    c = np.zeros(mesh.n2)
    hs = np.diff(mesh.sv)
    for cj in range(mesh.ny):
        c[2 * cj: 2 * cj + 3] += 0.5 * hs[cj] * (gw @ L)
    return c


def _flux_constraints(mesh, Pv, ncomp=2):
    """Sparse rows (one per node column) of the zero-flux condition on v1, in reduced dofs."""
    c = _column_weights(mesh)
    rows, cols, vals = [], [], []
    for I in range(mesh.n1):
        for J in range(mesh.n2):
            rows.append(I)
            cols.append(ncomp * (I * mesh.n2 + J))
            vals.append(c[J])
    C = sp.csr_matrix((vals, (rows, cols)), shape=(mesh.n1, ncomp * mesh.nnodes))
    Cr = (C @ Pv).tocsr()
    keep = np.asarray(abs(Cr).sum(axis=1)).ravel() > 0
    return Cr[keep]


def _elimination_basis(C: sp.csr_matrix):
    """Sparse Z with C Z = 0 by eliminating the largest entry of each row.

    Rows must not share their pivot columns (true for node-column flux rows).
    """
    C = C.tocsr()
    n = C.shape[1]
    piv = np.empty(C.shape[0], dtype=np.int64)
    for r in range(C.shape[0]):
        lo, hi = C.indptr[r], C.indptr[r + 1]
        piv[r] = C.indices[lo + np.argmax(np.abs(C.data[lo:hi]))]
    if len(np.unique(piv)) != len(piv):
        raise ValueError("pivot columns collide")
    is_piv = np.zeros(n, bool)
    is_piv[piv] = True
    free = np.nonzero(~is_piv)[0]
    pos = -np.ones(n, dtype=np.int64)
    pos[free] = np.arange(free.size)
    rows, cols, vals = list(free), list(range(free.size)), [1.0] * free.size
    for r, p in enumerate(piv):
        lo, hi = C.indptr[r], C.indptr[r + 1]
        cp = C[r, p]
        for j, cv in zip(C.indices[lo:hi], C.data[lo:hi]):
            if j == p:
                continue
            rows.append(p)
            cols.append(pos[j])
            vals.append(-cv / cp)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, free.size)), free


def _min_eig(K, M):
    """Smallest generalized eigenvalue of (K, M), both symmetric, K positive definite."""
    n = K.shape[0]
    if n <= 1500:
        return float(sla.eigh(K.toarray(), M.toarray(), eigvals_only=True, subset_by_index=[0, 0])[0])
    lam = spla.eigsh(K.tocsc(), k=1, M=M.tocsc(), sigma=0.0, which="LM", return_eigenvectors=False)
    return float(lam[0])


@dataclass
class ConstrainedSpace:
    """Velocity fields with slip walls and zero section flux; ends optionally clamped."""

    mesh: Mesh
    Pv: sp.csr_matrix  # full velocity <- reduced
    Z: sp.csr_matrix  # reduced <- free coordinates
    C: sp.csr_matrix  # flux rows in reduced coordinates
    quad: object
    free: np.ndarray  # reduced indices kept as free coordinates (Z is the identity there)

    @property
    def E(self):
        return (self.Pv @ self.Z).tocsr()

    def project(self, xfull):
        """Euclidean projection of nodal values onto the constraints; returns free coordinates."""
        xr = self.Pv.T @ xfull
        CCt = (self.C @ self.C.T).tocsc()
        xr = xr - self.C.T @ spla.spsolve(CCt, self.C @ xr)
        return xr[self.free]

    def admissible(self, xfull, tol=1e-10):
        """True if nodal values already satisfy every constraint."""
        scale = max(float(np.max(np.abs(xfull))), 1e-300)
        xr = self.Pv.T @ xfull
        if np.max(np.abs(self.Pv @ xr - xfull)) > tol * scale:
            return False
        return bool(np.max(np.abs(self.C @ xr), initial=0.0) <= tol * scale)


def constrained_space(mesh: Mesh, clamp_ends=False, order=5) -> ConstrainedSpace:
    dm = build_dofmap(mesh, pin_pressure=False, walls="slip", clamp_ends=clamp_ends)
    Pv = dm.P[: dm.nvel, : dm.nvel_red].tocsr()
    C = _flux_constraints(mesh, Pv)
    Z, free = _elimination_basis(C)
    return ConstrainedSpace(mesh, Pv, Z, C, cell_quadrature(mesh, order), free)


def _bandlimited(mesh, rng, modes=4, ncomp=2):
    """Random smooth nodal values: cosine series in (x1, s) with decaying amplitudes."""
    x1 = mesh.x1_nodes
    s = mesh.s_nodes
    xi = (x1 - x1[0]) / (x1[-1] - x1[0])
    k = np.arange(modes)
    Cx = np.cos(np.pi * np.outer(xi, k))
    Cs = np.cos(np.pi * np.outer(s, k))
    out = np.empty((mesh.nnodes, ncomp))
    for c in range(ncomp):
        a = rng.standard_normal((modes, modes)) / (1.0 + k[:, None] ** 2 + k[None, :] ** 2)
        out[:, c] = (Cx @ a @ Cs.T).ravel()
    return out.ravel()


# ---------------------------------------------------------------------------
# Poincare-type constants
# ---------------------------------------------------------------------------

def m1_formula(profile: ChannelProfile, a, b, C=1.0, n=2001):
    xs = np.linspace(a, b, n)
    f = np.broadcast_to(profile.width(xs), xs.shape)
    f2p = np.broadcast_to(np.abs(profile.f2.d1(xs)), xs.shape)
    return C * float(f.max()) * (1.0 + float(f2p.max()))


def poincare_measure(domain: TruncatedDomain, mesh: Mesh):
    """(sup ||v1/f|| / ||d2 v1||, M0) over zero-flux fields on the mesh.

    The maximizer of the quotient is the lowest mode of a generalized
    eigenproblem, found by shift-invert (inverse) iteration.
    """
    q = cell_quadrature(mesh, 5)
    f = np.asarray(domain.profile.width(q.x[..., 0]), dtype=float) * np.ones(q.w.shape)
    mass = np.einsum("eq,qk,ql->ekl", q.w / f**2, q.N, q.N)
    stiff = np.einsum("eq,eqk,eql->ekl", q.w, q.dN[..., 1], q.dN[..., 1])
    Mf = _scalar_matrix(mesh, mass)
    K2 = _scalar_matrix(mesh, stiff)
    C = _flux_constraints(mesh, sp.identity(mesh.nnodes, format="csr"), ncomp=1)
    Z, _ = _elimination_basis(C)
    lam = _min_eig((Z.T @ K2 @ Z).tocsr(), (Z.T @ Mf @ Z).tocsr())
    return 1.0 / math.sqrt(lam), M0


def m1_measure(domain: TruncatedDomain, mesh: Mesh, clamp_ends=False):
    """sup ||v|| / ||grad v|| over the constrained space."""
    V = constrained_space(mesh, clamp_ends)
    q = V.quad
    A = _vector_matrix(mesh, _laplacian(mesh, q))
    M = _vector_matrix(mesh, np.einsum("eq,qk,ql->ekl", q.w, q.N, q.N))
    E = V.E
    lam = _min_eig((E.T @ A @ E).tocsr(), (E.T @ M @ E).tocsr())
    return 1.0 / math.sqrt(lam)


def poincare_zero_flux_rejects(mesh: Mesh, values):
    """True if the generator would reject these nodal v1 values (nonzero section flux)."""
    c = _column_weights(mesh)
    cols = np.asarray(values, dtype=float).reshape(mesh.n1, mesh.n2)
    flux = cols @ c
    return bool(np.max(np.abs(flux)) > 1e-12 * max(1.0, float(np.max(np.abs(cols)))))


@functools.lru_cache(maxsize=None)
def calibrated_constants():
    """Universal constants of the M1 and M4 formulas, frozen on (0,1) x (-1,1)."""
    prof = ChannelProfile.from_expressions("-1", "1")
    dom = TruncatedDomain(prof, 0.0, 1.0)
    mesh = build_mesh(dom, *CALIBRATION_MESH)
    m1 = m1_measure(dom, mesh)
    c1 = m1 / m1_formula(prof, 0.0, 1.0)
    m4 = embedding_measure(dom, mesh, calibrate=False)["measured"]
    c4 = m4 / m4_formula(prof, 0.0, 1.0, c1)
    return {"C_M1": c1, "C_M4": c4, "M1_reference": m1, "M4_reference": m4}


# ---------------------------------------------------------------------------
# L4 embedding
# ---------------------------------------------------------------------------

def m4_formula(profile: ChannelProfile, a, b, c_m1, C=1.0, n=2001):
    xs = np.linspace(a, b, n)
    fp = max(float(np.max(np.abs(np.broadcast_to(profile.f1.d1(xs), xs.shape)))),
             float(np.max(np.abs(np.broadcast_to(profile.f2.d1(xs), xs.shape)))))
    m1 = m1_formula(profile, a, b, c_m1)
    d = float(np.min(np.broadcast_to(profile.width(xs), xs.shape)))
    area = weight_integral(profile, a, b, power=1.0)
    L = b - a
    return C * (1.0 + fp**2) * math.sqrt(m1 / L + 1.0) * (area + L * d) ** 0.25 * (1.0 + m1 / d)


def _l4(V: ConstrainedSpace, x):
    q = V.quad
    vel = x.reshape(-1, 2)[V.mesh.cell_nodes]
    v = np.einsum("qk,ekc->eqc", q.N, vel)
    r2 = np.sum(v**2, -1)
    A = float(np.sum(q.w * r2**2))
    G = 4.0 * np.einsum("eq,eqc,qk->ekc", q.w * r2, v, q.N)
    g = np.bincount(asm._vel_dofs(V.mesh).ravel(), weights=G.reshape(V.mesh.ncells, 18).ravel(),
                    minlength=2 * V.mesh.nnodes)
    return A, g


def embedding_measure(domain: TruncatedDomain, mesh: Mesh, n_trials=8, steps=20, seed=0,
                      calibrate=True):
    """Randomized plus gradient-ascent estimate of sup ||v||_L4 / ||grad v||.

    Trials are bandlimited random fields projected onto the constraints;
    the best ones are refined by H1-preconditioned ascent on log of the ratio.
    """
    V = constrained_space(mesh)
    q = V.quad
    A = _vector_matrix(mesh, _laplacian(mesh, q))
    E = V.E
    K = (E.T @ A @ E).tocsc()
    lu = spla.splu(K)
    rng = np.random.default_rng(seed)

    def ratio(z):
        B = float(z @ (K @ z))
        a4, _ = _l4(V, E @ z)
        return a4 ** 0.25 / math.sqrt(B) if B > 0 else 0.0

    starts = []
    for _ in range(n_trials):
        z = V.project(_bandlimited(mesh, rng))
        if np.any(z):
            starts.append(z)
    starts.sort(key=ratio, reverse=True)
    best = 0.0
    for z in starts[: max(1, n_trials // 2)]:
        r = ratio(z)
        for _ in range(steps):
            B = float(z @ (K @ z))
            a4, g = _l4(V, E @ z)
            grad = (E.T @ g) / (4.0 * a4) - (K @ z) / B
            d = lu.solve(grad)
            dn = math.sqrt(max(float(d @ (K @ d)), 1e-300))
            tau = 0.5 * math.sqrt(B) / dn
            for _ in range(12):
                z_new = z + tau * d
                r_new = ratio(z_new)
                if r_new > r:
                    break
                tau *= 0.5
            if not r_new > r:
                break
            z, r = z_new, r_new
        best = max(best, r)
    out = {"measured": best}
    if calibrate:
        cal = calibrated_constants()
        out["formula"] = m4_formula(domain.profile, domain.a, domain.b, cal["C_M1"], cal["C_M4"])
        out["C"] = cal["C_M4"]
    return out


# ---------------------------------------------------------------------------
# Korn-type coercivity
# ---------------------------------------------------------------------------

def korn_constant(profile: ChannelProfile, alpha):
    kappa = profile.wall_curvature_sup()
    if kappa == 0.0:
        return 1.0
    return alpha / (alpha + kappa)


def _stream_trial(mesh: Mesh, rng, modes=4):
    """Nodal values of a divergence-free, wall-tangent, end-vanishing field curl psi.

    psi = chi(xi) sum a_kl cos(pi k xi) sin(pi l s) with chi = xi^2 (1 - xi)^2,
    constant (zero) on both walls so the flux vanishes and v.n = 0.
    """
    p = mesh.profile
    X = mesh.nodes
    x1 = X[:, 0]
    a, b = mesh.x1v[0], mesh.x1v[-1]
    L = b - a
    xi = (x1 - a) / L
    f1 = np.broadcast_to(p.f1(x1), x1.shape)
    f = np.broadcast_to(p.width(x1), x1.shape)
    s = np.clip((X[:, 1] - f1) / f, 0.0, 1.0)
    ds_dx1 = -(np.broadcast_to(p.f1.d1(x1), x1.shape) + s * np.broadcast_to(p.width_d1(x1), x1.shape)) / f
    ds_dx2 = 1.0 / f
    k = np.arange(modes)
    l = np.arange(1, modes + 1)
    A = rng.standard_normal((modes, modes)) / (1.0 + k[:, None] ** 2 + l[None, :] ** 2)
    ck = np.cos(np.pi * np.outer(xi, k))
    dck = -np.pi * k[None, :] * np.sin(np.pi * np.outer(xi, k))
    sl = np.sin(np.pi * np.outer(s, l))
    dsl = np.pi * l[None, :] * np.cos(np.pi * np.outer(s, l))
    S = np.einsum("nk,kl,nl->n", ck, A, sl)
    S_xi = np.einsum("nk,kl,nl->n", dck, A, sl)
    S_s = np.einsum("nk,kl,nl->n", ck, A, dsl)
    chi = xi**2 * (1 - xi) ** 2
    dchi = 2 * xi * (1 - xi) ** 2 - 2 * xi**2 * (1 - xi)
    psi_xi = dchi * S + chi * S_xi
    psi_s = chi * S_s
    v1 = psi_s * ds_dx2
    v2 = -(psi_xi / L + psi_s * ds_dx1)
    return np.column_stack([v1, v2]).ravel()


def rotation_field(mesh: Mesh):
    X = mesh.nodes
    return np.column_stack([-X[:, 1], X[:, 0]]).ravel()


def _wall_gradients(mesh, vel, side, order=6):
    """Points' normals, arc weights, v and grad v on one wall."""
    wq = wall_quadrature(mesh, side, order)
    g, _ = gauss(order)
    eta = -1.0 if side == "Bottom" else 1.0
    q = cell_quadrature(mesh, points=(g, np.full_like(g, eta), np.ones_like(g)), cells=wq.cells)
    ve = vel.reshape(-1, 2)[mesh.cell_nodes[wq.cells]]
    v = np.einsum("qk,ekc->eqc", q.N, ve)
    gv = np.einsum("eqkd,ekc->eqcd", q.dN, ve)  # [c, d] = d v_c / d x_d
    n, _ = mesh.wall_frame(wq.x1, side)
    return n, wq.w, v, gv


def korn_terms(mesh: Mesh, xfull, alpha, order=6):
    q = cell_quadrature(mesh, order)
    ve = xfull.reshape(-1, 2)[mesh.cell_nodes]
    gv = np.einsum("eqkd,ekc->eqcd", q.dN, ve)
    D = 0.5 * (gv + np.swapaxes(gv, -1, -2))
    grad2 = float(np.sum(q.w * np.sum(gv**2, axis=(-2, -1))))
    d2 = float(np.sum(q.w * np.sum(D**2, axis=(-2, -1))))
    wall2 = 0.0
    bterm = 0.0
    for side in ("Bottom", "Top"):
        n, w, v, g = _wall_gradients(mesh, xfull, side, order)
        Dw = 0.5 * (g + np.swapaxes(g, -1, -2))
        nDv = np.einsum("eqi,eqij,eqj->eq", n, Dw, v)
        ngv = np.einsum("eqi,eqji,eqj->eq", n, g, v)  # n_i d_i v_j v_j
        bterm += float(np.sum(w * (2.0 * nDv - ngv)))
        wall2 += float(np.sum(w * np.sum(v**2, -1)))
    return {"grad2": grad2, "D2": d2, "wall2": wall2, "boundary": bterm}


def korn_check(domain: TruncatedDomain, mesh: Mesh, alpha, n_trials=200, seed=0, order=6):
    """Identity residual and coercivity margin over randomized admissible fields.

    Margins are relative: (2||D||^2 + alpha ||v||_w^2 - c ||grad v||^2) / ||grad v||^2.
    """
    c = korn_constant(domain.profile, alpha)
    V = constrained_space(mesh, clamp_ends=True)
    rng = np.random.default_rng(seed)
    margins, residuals = [], []
    for _ in range(n_trials):
        x = _stream_trial(mesh, rng)
        if not V.admissible(x, tol=1e-9):
            raise ValueError("trial generator produced an inadmissible field")
        t = korn_terms(mesh, x, alpha, order)
        g2 = t["grad2"]
        residuals.append(abs(g2 - 2.0 * t["D2"] + t["boundary"]) / g2)
        margins.append((2.0 * t["D2"] + alpha * t["wall2"] - c * g2) / g2)
    return {"korn_c": c, "identity_residual": float(max(residuals)),
            "margin": float(min(margins)), "n_trials": n_trials,
            "verdict": "Pass" if min(margins) >= -SLACK else "Fail"}


def admissible_korn_trial(mesh: Mesh, xfull):
    """Generator-side gate: wall tangency, clamped ends and zero flux."""
    return constrained_space(mesh, clamp_ends=True).admissible(xfull, tol=1e-9)


# ---------------------------------------------------------------------------
# star-like decomposition of a unit slab
# ---------------------------------------------------------------------------

@dataclass
class StarDecomposition:
    t: float
    N: int
    R: float
    s: float
    centers: np.ndarray
    pieces: list  # (lo, hi) abscissae of E_k
    certificates: list  # per piece: number of rays checked
    overlaps: list  # |E_k cap E_{k+1}|
    diameter: float
    area: float
    c_d: float
    d: float
    beta: float
    notes: list = field(default_factory=list)

    def m5_bound(self):
        r = self.diameter / self.R
        return self.c_d * r**2 * (1.0 + r)

    def as_dict(self):
        return {"t": self.t, "N": self.N, "R": self.R, "s": self.s, "diameter": self.diameter,
                "c_d": self.c_d, "m5_bound": self.m5_bound(), "overlaps": list(self.overlaps),
                "rays_per_piece": self.certificates}


def _star_params(d, beta, rho=0.9, n_max=1000):
    N = int(math.floor(beta / d)) + 1
    while N <= n_max:
        cgap = d / 2.0 - beta / (2.0 * N)
        bound = min(1.0 / (2.0 * N), cgap)
        if bound > 0:
            R = rho * bound

            def rel(s):
                return (s / (2.0 * N) - cgap) / math.sqrt(1.0 + s * s) - R

            lo = max(2.0 * N * cgap, 0.0)
            hi = lo + 1.0
            while rel(hi) < 0:
                hi *= 2.0
            s = brentq(rel, lo, hi, xtol=1e-14)
            if s > beta:
                return N, R, s
        N += 1
    raise ValueError("no admissible star parameters")


def _piece_inside(profile, lo, hi, x, y):
    f1 = np.broadcast_to(profile.f1(x), x.shape)
    f2 = np.broadcast_to(profile.f2(x), x.shape)
    return (x >= lo) & (x <= hi) & (y >= f1) & (y <= f2)


def star_decomposition(profile: ChannelProfile, t, d=None, beta=None, rays=10_000, seed=0,
                       samples=512):
    """Pieces E_k of the slab t - 1 < x1 < t, balls B_k and sampled star certificates.

    Each ray starts at a random point of B_k; along it the inside indicator
    must be one block of True followed by False (leave once, never re-enter).
    """
    d = profile.d if d is None else d
    beta = profile.beta if beta is None else beta
    N, R, s = _star_params(d, beta)
    rng = np.random.default_rng(seed)
    K = 2 * N - 1
    lo0 = t - 1.0
    pieces, centers, certs = [], [], []
    xs = np.linspace(lo0, t, 801)
    top = np.broadcast_to(profile.f2(xs), xs.shape)
    bot = np.broadcast_to(profile.f1(xs), xs.shape)
    bnd = np.concatenate([np.column_stack([xs, top]), np.column_stack([xs, bot])])
    diff = bnd[:, None, :] - bnd[None, :, :]
    diameter = float(np.sqrt(np.max(np.sum(diff**2, -1))))
    for k in range(1, K + 1):
        plo = lo0 + (k - 1) / (2.0 * N)
        phi = lo0 + (k + 1) / (2.0 * N)
        tk = lo0 + k / (2.0 * N)
        ck = np.array([tk, float(profile.mid(tk))])
        pieces.append((plo, phi))
        centers.append(ck)
        r = R * np.sqrt(rng.random(rays))
        a = 2 * np.pi * rng.random(rays)
        p0 = ck[None, :] + np.column_stack([r * np.cos(a), r * np.sin(a)])
        th = 2 * np.pi * rng.random(rays)
        lam = np.linspace(0.0, 1.5 * diameter, samples)
        X = p0[:, 0:1] + lam[None, :] * np.cos(th)[:, None]
        Y = p0[:, 1:2] + lam[None, :] * np.sin(th)[:, None]
        inside = _piece_inside(profile, plo, phi, X, Y)
        if not np.all(inside[:, 0]):
            i = int(np.nonzero(~inside[:, 0])[0][0])
            raise NotStarLike(f"ball B_{k} is not inside E_{k}", ray=(p0[i].tolist(), float(th[i])))
        # first exit, then any re-entry is a counterexample
        exited = np.cumsum(~inside, axis=1) > 0
        bad = np.any(exited & inside, axis=1)
        if np.any(bad):
            i = int(np.nonzero(bad)[0][0])
            raise NotStarLike(f"E_{k} is not star-like w.r.t. B_{k}", ray=(p0[i].tolist(), float(th[i])))
        certs.append(rays)
    area = weight_integral(profile, lo0, t, power=1.0)
    overlaps = []
    for k in range(1, K):
        olo = lo0 + k / (2.0 * N)
        overlaps.append(weight_integral(profile, olo, olo + 1.0 / (2.0 * N), power=1.0))
    c_d = _c_d(profile, lo0, t, N, area)
    return StarDecomposition(float(t), N, R, s, np.array(centers), pieces, certs, overlaps,
                             diameter, area, c_d, d, beta)


def _c_d(profile, lo0, t, N, area):
    """Chain constant for the pieces E_1..E_K (the last piece has no overlap term)."""
    K = 2 * N - 1
    if K == 1:
        return 1.0
    h = 1.0 / (2.0 * N)

    def meas(a, b):
        return weight_integral(profile, a, b, power=1.0) if b > a else 0.0

    tilde = [meas(lo0 + i * h, lo0 + (i + 1) * h) for i in range(1, K)]  # |D~_i|, i = 1..K-1
    rest = [meas(lo0 + (i + 1) * h, t) for i in range(1, K)]  # |D^_i \ D_i|
    best = 0.0
    prod = 1.0
    for k in range(1, K + 1):
        head = 1.0 + math.sqrt(area / tilde[k - 1]) if k < K else 1.0
        best = max(best, head * prod)
        if k < K:
            prod *= 1.0 + math.sqrt(rest[k - 1] / tilde[k - 1])
    return best


# ---------------------------------------------------------------------------
# divergence equation
# ---------------------------------------------------------------------------

def _p1disc_projection(mesh, quad, w):
    """Cellwise L2 projection of a callable or quadrature array onto P1disc."""
    vals = w(quad.x[..., 0], quad.x[..., 1]) if callable(w) else np.asarray(w, dtype=float)
    vals = np.broadcast_to(vals, quad.w.shape)
    Mc = np.einsum("eq,eqa,eqb->eab", quad.w, quad.psi, quad.psi)
    rhs = np.einsum("eq,eqa,eq->ea", quad.w, quad.psi, vals)
    return np.linalg.solve(Mc, rhs[..., None])[..., 0]  # (ncells, 3)


def bogovskii_solve(domain: TruncatedDomain, mesh: Mesh, w, decomposition: StarDecomposition | None = None,
                    remove_mean=False):
    """Minimal-energy a in H1_0 with (q, div a) = (q, w) for all discontinuous P1 q.

    Returns a dict with the nodal field, ||grad a|| / ||w|| and, if a star
    decomposition is given, the formula bound C_D (R0/R)^2 (1 + R0/R).
    """
    quad = cell_quadrature(mesh, 5)
    coef = _p1disc_projection(mesh, quad, w)
    wq = np.einsum("eqa,ea->eq", quad.psi, coef)
    area = float(np.sum(quad.w))
    mean = float(np.sum(quad.w * wq))
    wn = math.sqrt(float(np.sum(quad.w * wq**2)))
    if remove_mean:
        coef[:, 0] -= mean / area
        wq = wq - mean / area
        mean = float(np.sum(quad.w * wq))
        wn = math.sqrt(float(np.sum(quad.w * wq**2)))
    out = {"bound": decomposition.m5_bound() if decomposition is not None else None}
    if wn == 0.0:
        out.update(a=np.zeros(2 * mesh.nnodes), ratio=0.0, grad_norm=0.0, w_norm=0.0)
        return out
    if abs(mean) > 1e-10 * wn:
        raise IncompatibleData(f"int w = {mean:.3e} is not zero")
    dm = build_dofmap(mesh, pin_pressure=True, walls="clamped", clamp_ends=True)
    A = _vector_matrix(mesh, _laplacian(mesh, quad))
    B = asm.assemble_divergence(dm, quad)
    g = -np.einsum("eq,eqa,eq->ea", quad.w, quad.psi, wq).ravel()  # (B a)_q = -(q, w)
    K = sp.bmat([[A, B.T], [B, None]], format="csr")
    P = dm.P
    Kr = (P.T @ K @ P).tocsc()
    rr = P.T @ np.concatenate([np.zeros(dm.nvel), g])
    x = P @ spla.splu(Kr).solve(rr)
    a = x[: dm.nvel]
    gn = math.sqrt(float(a @ (A @ a)))
    resid = float(np.max(np.abs(B @ a - g)))
    out.update(a=a, ratio=gn / wn, grad_norm=gn, w_norm=wn, divergence_residual=resid)
    return out


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class InequalityReport:
    M0: float
    M0_measured: float
    M1_measured: float
    M1_formula: float
    M4_measured: float
    M4_formula: float
    korn_c: float
    korn_margin: float
    korn_identity_residual: float
    M5_measured: float | None = None
    M5_bound: float | None = None
    star_params: dict | None = None

    def as_dict(self):
        return dict(self.__dict__)

    def violations(self):
        out = []
        if self.M0_measured > self.M0 + SLACK:
            out.append("M0")
        if self.M1_measured > self.M1_formula + SLACK:
            out.append("M1")
        if self.M4_measured > self.M4_formula + SLACK:
            out.append("M4")
        if self.korn_margin < -SLACK:
            out.append("korn")
        if self.M5_bound is not None and self.M5_measured > self.M5_bound + SLACK:
            out.append("M5")
        return out


def inequality_report(domain: TruncatedDomain, mesh: Mesh, alpha, slab_t=None, seed=0,
                      korn_trials=200):
    cal = calibrated_constants()
    m0m, m0 = poincare_measure(domain, mesh)
    m1m = m1_measure(domain, mesh)
    m1f = m1_formula(domain.profile, domain.a, domain.b, cal["C_M1"])
    emb = embedding_measure(domain, mesh, seed=seed)
    kc = korn_check(domain, mesh, alpha, n_trials=korn_trials, seed=seed)
    rep = InequalityReport(m0, m0m, m1m, m1f, emb["measured"], emb["formula"], kc["korn_c"],
                           kc["margin"], kc["identity_residual"])
    if slab_t is not None:
        star = star_decomposition(domain.profile, slab_t, seed=seed)
        slab = TruncatedDomain(domain.profile, slab_t - 1.0, slab_t)
        smesh = build_mesh(slab, 8, 8)
        bg = bogovskii_solve(slab, smesh, _slab_load(slab), star, remove_mean=True)
        rep.M5_measured = bg["ratio"]
        rep.M5_bound = bg["bound"]
        rep.star_params = star.as_dict()
    return rep


def _slab_load(slab: TruncatedDomain):
    """Fixed test datum on a slab, in slab-local coordinates (translation covariant)."""
    prof = slab.profile

    def w(x1, x2):
        xi = x1 - slab.a
        s = (x2 - prof.f1(x1)) / prof.width(x1)
        return np.cos(np.pi * xi) + 0.5 * np.cos(np.pi * s)
    return w
