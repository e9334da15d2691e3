"""Vectorized assembly of the slip-Stokes/Oseen saddle system.

Forms on the truncated domain (u = v + g, v the unknown correction):

    a(v, phi)  = 2 (D v, D phi) + theta <v, phi>_walls
    b(v, q)    = -(q, div v)
    c(v, phi)  = (v . grad g, phi) + 1/2 [(w . grad v, phi) - (w . grad phi, v)]
    l(phi)     = -2 (D g, D phi) + (g . grad phi, g)

Local velocity dofs are ordered l = 2 k + c (node k of the cell, component c).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..errors import RankDeficient
from .space import CellQuadrature, DofMap, WallQuadrature, cell_quadrature, wall_quadrature


def _vel_dofs(mesh):
    cn = mesh.cell_nodes
    return np.stack([2 * cn, 2 * cn + 1], axis=-1).reshape(len(cn), 18)


def _scatter(rows_local, cols_local, blocks, shape):
    """Sum local blocks (ne, nr, nc) into a CSR matrix."""
    ne, nr, nc = blocks.shape
    R = np.broadcast_to(rows_local[:, :, None], (ne, nr, nc)).ravel()
    C = np.broadcast_to(cols_local[:, None, :], (ne, nr, nc)).ravel()
    return sp.coo_matrix((blocks.ravel(), (R, C)), shape=shape).tocsr()


def _scatter_vec(rows_local, vals, n):
    return np.bincount(rows_local.ravel(), weights=vals.ravel(), minlength=n)


CHUNK = 1024  # cells per assembly batch; bounds einsum temporaries


def _batches(ne):
    for lo in range(0, ne, CHUNK):
        yield slice(lo, min(ne, lo + CHUNK))


def _interleave(block4):
    """(ne, 9, 2, 9, 2) -> (ne, 18, 18)."""
    ne = block4.shape[0]
    return block4.reshape(ne, 18, 18)


def assemble_viscous_slip(dofmap: DofMap, theta, quad: CellQuadrature | None = None,
                          wall_order=5):
    """Full-space matrix of a(v, phi) on velocity dofs (symmetric)."""
    mesh = dofmap.mesh
    q = quad or cell_quadrature(mesh)
    blk = np.empty((mesh.ncells, 9, 2, 9, 2))
    for sl in _batches(mesh.ncells):
        dN, w = q.dN[sl], q.w[sl]
        lap = np.einsum("eq,eqkd,eqld->ekl", w, dN, dN, optimize=True)
        b = np.einsum("eq,eqkb,eqla->ekalb", w, dN, dN, optimize=True)  # dN_k[c'] dN_l[c]
        b[:, :, 0, :, 0] += lap
        b[:, :, 1, :, 1] += lap
        blk[sl] = b
    dofs = _vel_dofs(mesh)
    A = _scatter(dofs, dofs, _interleave(blk), (dofmap.nvel, dofmap.nvel))
    if theta:
        A = A + theta * assemble_wall_mass(dofmap, wall_order)
    return A


def assemble_wall_mass(dofmap: DofMap, order=5):
    """Full-space matrix of <v, phi> over Top and Bottom walls (arc length)."""
    mesh = dofmap.mesh
    dofs = _vel_dofs(mesh)
    out = sp.csr_matrix((dofmap.nvel, dofmap.nvel))
    for side in ("Bottom", "Top"):
        wq = wall_quadrature(mesh, side, order)
        m = np.einsum("eq,qk,ql->ekl", wq.w, wq.N, wq.N)
        blk = np.zeros((len(wq.cells), 9, 2, 9, 2))
        blk[:, :, 0, :, 0] = m
        blk[:, :, 1, :, 1] = m
        d = dofs[wq.cells]
        out = out + _scatter(d, d, _interleave(blk), (dofmap.nvel, dofmap.nvel))
    return out


def assemble_divergence(dofmap: DofMap, quad: CellQuadrature | None = None):
    """Full-space matrix B (npres x nvel) with (B v)_q = -(q, div v)."""
    mesh = dofmap.mesh
    q = quad or cell_quadrature(mesh)
    blk = np.empty((mesh.ncells, 3, 9, 2))
    for sl in _batches(mesh.ncells):
        blk[sl] = -np.einsum("eq,eqp,eqkc->epkc", q.w[sl], q.psi[sl], q.dN[sl], optimize=True)
    blk = blk.reshape(mesh.ncells, 3, 18)
    prow = 3 * np.arange(mesh.ncells)[:, None] + np.arange(3)[None, :]
    return _scatter(prow, _vel_dofs(mesh), blk, (dofmap.npres, dofmap.nvel))


def assemble_oseen(dofmap: DofMap, quad: CellQuadrature, grad_g, w_adv, v_lin=None, grad_v_lin=None):
    """Full-space matrix of the linearized convection.

    grad_g[e, q, i, j] = d g_i / d x_j and w_adv[e, q, :] is the advecting
    field at quadrature points.  With ``v_lin``/``grad_v_lin`` the Newton
    terms 1/2 (delta . grad v, phi) - 1/2 (delta . grad phi, v) are added.
    """
    mesh = dofmap.mesh
    N = quad.N
    blk = np.empty((mesh.ncells, 9, 2, 9, 2))
    for sl in _batches(mesh.ncells):
        dN, w = quad.dN[sl], quad.w[sl]
        wN = w[:, :, None] * N[None]  # (e, q, k)
        # (v . grad g) . phi : test (k, c), trial (l, c')
        b = np.einsum("eqk,ql,eqab->ekalb", wN, N, grad_g[sl], optimize=True)
        adv = np.einsum("eqd,eqld->eql", w_adv[sl], dN)  # w . grad N_l
        sk = 0.5 * (np.einsum("eqk,eql->ekl", wN, adv) - np.einsum("eqk,eql->elk", wN, adv))
        b[:, :, 0, :, 0] += sk
        b[:, :, 1, :, 1] += sk
        if v_lin is not None:
            b += 0.5 * np.einsum("eqk,ql,eqab->ekalb", wN, N, grad_v_lin[sl], optimize=True)
            # -1/2 N_l dN_k[c'] v_c
            b -= 0.5 * np.einsum("eql,eqkb,eqa->ekalb", wN, dN, v_lin[sl], optimize=True)
        blk[sl] = b
    dofs = _vel_dofs(mesh)
    return _scatter(dofs, dofs, _interleave(blk), (dofmap.nvel, dofmap.nvel))


def convection_residual(dofmap: DofMap, quad: CellQuadrature, v, grad_v, g, grad_g):
    """Full-space vector of c(v; phi) = (v.grad g, phi) + skew((g+v); v, phi)."""
    mesh = dofmap.mesh
    N = quad.N
    val = np.empty((mesh.ncells, 9, 2))
    for sl in _batches(mesh.ncells):
        dN, w, vs = quad.dN[sl], quad.w[sl], v[sl]
        wa = g[sl] + vs
        t1 = np.einsum("eqab,eqb->eqa", grad_g[sl], vs) + 0.5 * np.einsum("eqab,eqb->eqa", grad_v[sl], wa)
        val[sl] = np.einsum("eq,qk,eqa->eka", w, N, t1)
        adv = np.einsum("eqd,eqkd->eqk", wa, dN)
        val[sl] -= 0.5 * np.einsum("eq,eqk,eqa->eka", w, adv, vs)
    return _scatter_vec(_vel_dofs(mesh), val.reshape(mesh.ncells, 18), dofmap.nvel)


def assemble_carrier_rhs(dofmap: DofMap, quad: CellQuadrature, g, grad_g):
    """Full-space load vector l(phi) = -2 (D g, D phi) + (g . grad phi, g)."""
    mesh = dofmap.mesh
    val = np.empty((mesh.ncells, 9, 2))
    for sl in _batches(mesh.ncells):
        dN, w, gs, Gs = quad.dN[sl], quad.w[sl], g[sl], grad_g[sl]
        sym = Gs + np.swapaxes(Gs, -1, -2)
        val[sl] = -np.einsum("eq,eqcj,eqkj->ekc", w, sym, dN)
        adv = np.einsum("eqd,eqkd->eqk", gs, dN)
        val[sl] += np.einsum("eq,eqk,eqc->ekc", w, adv, gs)
    return _scatter_vec(_vel_dofs(mesh), val.reshape(mesh.ncells, 18), dofmap.nvel)


def interpolate_field(dofmap: DofMap, quad: CellQuadrature, xfull):
    """Velocity values (ne, nq, 2) and gradients (ne, nq, 2, 2) at quadrature points."""
    mesh = dofmap.mesh
    vel = xfull[: dofmap.nvel].reshape(-1, 2)[mesh.cell_nodes]  # (ne, 9, 2)
    val = np.einsum("qk,ekc->eqc", quad.N, vel)
    grad = np.einsum("eqkd,ekc->eqcd", quad.dN, vel)
    return val, grad


def pressure_at(dofmap: DofMap, quad: CellQuadrature, xfull):
    pc = xfull[dofmap.nvel:].reshape(-1, 3)
    return np.einsum("eqp,ep->eq", quad.psi, pc)


def carrier_at(carrier, quad: CellQuadrature):
    x1 = quad.x[..., 0]
    x2 = quad.x[..., 1]
    g = np.stack(carrier.eval_velocity(x1, x2, strict=False), axis=-1)
    G = carrier.eval_gradient(x1, x2, strict=False)
    return g, G


@dataclass
class SaddleSystem:
    """Full-space blocks; reduce with ``apply_constraints``."""

    dofmap: DofMap
    A: sp.csr_matrix  # velocity block (viscous + slip + convection)
    B: sp.csr_matrix  # divergence block
    rhs: np.ndarray  # velocity load

    def full_matrix(self):
        return sp.bmat([[self.A, self.B.T], [self.B, None]], format="csr")

    def full_rhs(self):
        return np.concatenate([self.rhs, np.zeros(self.dofmap.npres)])


def apply_constraints(system: SaddleSystem):
    """Reduced (K_r, r_r) = (P^T K P, P^T r)."""
    P = system.dofmap.P
    K = (P.T @ system.full_matrix() @ P).tocsc()
    return K, P.T @ system.full_rhs()


def infsup_constant(dofmap: DofMap, A=None, B=None):
    """Smallest singular value of the scaled Schur complement (dense; coarse meshes).

    beta^2 = lambda_min(M_p^{-1} B A^{-1} B^T) on pressures M_p-orthogonal
    to constants (the kernel of B^T when the ends are clamped), with A the
    H1 seminorm (vector Laplacian) on constrained velocities.  The pressure
    pin of ``dofmap`` is ignored: pinning one cell keeps near-constant modes
    and would understate the constant.
    """
    from scipy.linalg import eigh, null_space

    mesh = dofmap.mesh
    q = cell_quadrature(mesh, 4)
    if A is None:
        lap = np.einsum("eq,eqkd,eqld->ekl", q.w, q.dN, q.dN)
        blk = np.zeros((mesh.ncells, 9, 2, 9, 2))
        blk[:, :, 0, :, 0] = lap
        blk[:, :, 1, :, 1] = lap
        d = _vel_dofs(mesh)
        A = _scatter(d, d, _interleave(blk), (dofmap.nvel, dofmap.nvel))
    if B is None:
        B = assemble_divergence(dofmap, q)
    Pv = dofmap.P[: dofmap.nvel, : dofmap.nvel_red]
    Ar = (Pv.T @ A @ Pv).toarray()
    Br = (B @ Pv).toarray()
    mp = np.einsum("eq,eqa,eqb->eab", q.w, q.psi, q.psi)
    Mp = np.zeros((dofmap.npres, dofmap.npres))
    for e in range(mesh.ncells):
        Mp[3 * e:3 * e + 3, 3 * e:3 * e + 3] = mp[e]
    const = np.zeros(dofmap.npres)
    const[0::3] = 1.0
    Z = null_space((Mp @ const)[None, :])
    Bz = Z.T @ Br
    S = Bz @ np.linalg.solve(Ar, Bz.T)
    lam = eigh(S, Z.T @ Mp @ Z, eigvals_only=True)
    val = float(np.sqrt(max(lam[0], 0.0)))
    if val < 1e-8:
        raise RankDeficient(f"discrete inf-sup constant {val:.3e}")
    return val


def assemble_stokes_parts(dofmap: DofMap, carrier, theta, order=6):
    """Convenience bundle used by the solvers: quadrature, carrier data, A_visc, B, load."""
    quad = cell_quadrature(dofmap.mesh, order)
    g, G = carrier_at(carrier, quad)
    A = assemble_viscous_slip(dofmap, theta, quad)
    B = assemble_divergence(dofmap, quad)
    rhs = assemble_carrier_rhs(dofmap, quad, g, G)
    return quad, g, G, A, B, rhs
