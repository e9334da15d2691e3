"""Q2 velocity / discontinuous P1 pressure spaces and the constraint map.

Unknown layout of the full system: velocity dof ``2 n + c`` for node ``n``
and component ``c``, followed by three pressure dofs per cell (constant,
(x1 - xc)/hx, (x2 - yc)/hy in physical coordinates).

Constraints are applied through a sparse prolongation P from reduced to full
unknowns: interior nodes keep both components, wall nodes keep only the
coefficient along the analytic tangent (the normal one is zero), end-section
nodes are removed, and the pressure constant of the last cell is pinned.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh

# 1D quadratic Lagrange basis on nodes -1, 0, 1
_L = (
    lambda x: 0.5 * x * (x - 1.0),
    lambda x: 1.0 - x * x,
    lambda x: 0.5 * x * (x + 1.0),
)
_DL = (
    lambda x: x - 0.5,
    lambda x: -2.0 * x,
    lambda x: x + 0.5,
)


def gauss(n):
    return np.polynomial.legendre.leggauss(n)


def lagrange1d(x):
    x = np.asarray(x, dtype=float)
    return np.stack([f(x) for f in _L], -1), np.stack([f(x) for f in _DL], -1)


def q2_reference(xi, eta):
    """Shape values and reference derivatives at paired points (xi, eta).

    Returns N (npts, 9), dN_dxi (npts, 9), dN_deta (npts, 9) with local
    index k = 3 i + j (i along x1, j along s).
    """
    Lx, dLx = lagrange1d(xi)
    Ly, dLy = lagrange1d(eta)
    N = (Lx[:, :, None] * Ly[:, None, :]).reshape(len(Lx), 9)
    Nx = (dLx[:, :, None] * Ly[:, None, :]).reshape(len(Lx), 9)
    Ny = (Lx[:, :, None] * dLy[:, None, :]).reshape(len(Lx), 9)
    return N, Nx, Ny


@dataclass(frozen=True, eq=False)
class CellQuadrature:
    """Physical quadrature data on every cell for a tensor Gauss rule."""

    x: np.ndarray  # (ncells, nq, 2) physical points
    w: np.ndarray  # (ncells, nq) weights including Jacobian
    N: np.ndarray  # (nq, 9)
    dN: np.ndarray  # (ncells, nq, 9, 2) physical gradients
    xi: np.ndarray  # (nq, 2) reference points
    psi: np.ndarray  # (ncells, nq, 3) pressure basis values


def cell_quadrature(mesh: Mesh, order=5, points=None, cells=None) -> CellQuadrature:
    """Tensor Gauss rule of ``order`` points per direction (or explicit ``points``).

    ``points`` is (xi, eta, weights) on [-1, 1]^2; ``cells`` restricts the
    rule to a subset of cell ids (rows then follow that order).
    """
    if points is None:
        g, gw = gauss(order)
        XI, ETA = np.meshgrid(g, g, indexing="ij")
        xi, eta = XI.ravel(), ETA.ravel()
        wref = np.outer(gw, gw).ravel()
    else:
        xi, eta, wref = points
    N, Nxi, Neta = q2_reference(xi, eta)
    p = mesh.profile
    ci, cj = mesh.cell_ij
    if cells is not None:
        ci, cj = ci[cells], cj[cells]
    hx = np.diff(mesh.x1v)[ci][:, None]
    hs = np.diff(mesh.sv)[cj][:, None]
    xc = 0.5 * (mesh.x1v[ci] + mesh.x1v[ci + 1])[:, None]
    sc = 0.5 * (mesh.sv[cj] + mesh.sv[cj + 1])[:, None]
    x1 = xc + 0.5 * hx * xi[None, :]
    s = sc + 0.5 * hs * eta[None, :]
    f1 = np.broadcast_to(p.f1(x1), x1.shape)
    f = np.broadcast_to(p.width(x1), x1.shape)
    slope = np.broadcast_to(p.f1.d1(x1), x1.shape) + s * np.broadcast_to(p.width_d1(x1), x1.shape)
    x2 = f1 + s * f
    det = 0.25 * hx * hs * f
    # grad_x = J^{-T} grad_ref with J = [[hx/2, 0], [slope hx/2, f hs/2]]
    a = (2.0 / hx)[:, :, None]
    b = (-slope / f * 2.0 / hs)[:, :, None]
    c = (2.0 / (f * hs))[:, :, None]
    d1 = a * Nxi[None] + b * Neta[None]
    d2 = c * Neta[None]
    dN = np.stack([d1, d2], axis=-1)
    # pressure basis, centred on the mapped cell centre
    yc = p.f1(xc) + sc * p.width(xc)
    hy = hs * p.width(xc)
    psi = np.stack([np.ones_like(x1), (x1 - xc) / hx, (x2 - yc) / hy], axis=-1)
    return CellQuadrature(
        x=np.stack([x1, x2], axis=-1),
        w=det * wref[None, :],
        N=N,
        dN=dN,
        xi=np.column_stack([xi, eta]),
        psi=psi,
    )


@dataclass(frozen=True, eq=False)
class WallQuadrature:
    """Gauss data on the Top/Bottom facets of wall cells."""

    side: str
    cells: np.ndarray  # (ncw,) cell ids
    x1: np.ndarray  # (ncw, nq)
    w: np.ndarray  # (ncw, nq) arc-length weights
    N: np.ndarray  # (nq, 9) shape values (restricted to the facet)


def wall_quadrature(mesh: Mesh, side, order=5) -> WallQuadrature:
    g, gw = gauss(order)
    eta = -1.0 if side == "Bottom" else 1.0
    N, _, _ = q2_reference(g, np.full_like(g, eta))
    cj = 0 if side == "Bottom" else mesh.ny - 1
    ci = np.arange(mesh.nx)
    cells = ci * mesh.ny + cj
    hx = np.diff(mesh.x1v)[:, None]
    x1 = 0.5 * (mesh.x1v[:-1] + mesh.x1v[1:])[:, None] + 0.5 * hx * g[None, :]
    fi = mesh.profile.f2 if side == "Top" else mesh.profile.f1
    ds = np.sqrt(1.0 + np.broadcast_to(fi.d1(x1), x1.shape) ** 2)
    return WallQuadrature(side, cells, x1, 0.5 * hx * gw[None, :] * ds, N)


@dataclass(frozen=True, eq=False)
class DofMap:
    mesh: Mesh
    P: sp.csr_matrix  # full <- reduced prolongation
    nvel: int  # full velocity dofs
    npres: int  # full pressure dofs
    nvel_red: int  # reduced velocity dofs
    wall_nodes: np.ndarray
    end_nodes: np.ndarray
    rotations: dict = field(repr=False)  # node -> tangent vector

    @property
    def nfull(self):
        return self.nvel + self.npres

    @property
    def nred(self):
        return self.P.shape[1]

    def pressure_offset(self):
        return self.nvel

    def expand(self, xr):
        return self.P @ xr

    def restrict(self, xf):
        """Least-squares inverse of ``expand`` (exact on the constrained range)."""
        return self.P.T @ xf


WALL_MODES = ("slip", "clamped", "free")


def build_dofmap(mesh: Mesh, pin_pressure=True, walls="slip", clamp_ends=True) -> DofMap:
    """Constraint map for the flow problem and its variants.

    ``walls`` is "slip" (v.n = 0 through the analytic tangent), "clamped"
    (v = 0) or "free"; ``clamp_ends`` removes the end-section nodes.
    """
    if walls not in WALL_MODES:
        raise ValueError(f"walls must be one of {WALL_MODES}")
    nn = mesh.nnodes
    nvel = 2 * nn
    npres = 3 * mesh.ncells
    wall_all = np.union1d(mesh.facet_nodes("Bottom"), mesh.facet_nodes("Top"))
    end = np.union1d(mesh.facet_nodes("Left"), mesh.facet_nodes("Right"))
    if not clamp_ends:
        end = np.zeros(0, dtype=np.int64)
    if walls == "clamped":
        end = np.union1d(end, wall_all)
    rotations = {}
    wall = []
    for side in ("Bottom", "Top"):
        nodes = mesh.facet_nodes(side)
        nodes = nodes[~np.isin(nodes, end)]
        if walls == "free":
            nodes = nodes[:0]
        x1 = mesh.nodes[nodes, 0]
        _, t = mesh.wall_frame(x1, side)
        for n, tv in zip(nodes, t):
            rotations[int(n)] = tv
        wall.append(nodes)
    wall = np.concatenate(wall)
    rows, cols, vals = [], [], []
    col = 0
    is_end = np.zeros(nn, bool)
    is_end[end] = True
    for n in range(nn):
        if is_end[n]:
            continue
        tv = rotations.get(n)
        if tv is None:
            rows += [2 * n, 2 * n + 1]
            cols += [col, col + 1]
            vals += [1.0, 1.0]
            col += 2
        else:
            rows += [2 * n, 2 * n + 1]
            cols += [col, col]
            vals += [tv[0], tv[1]]
            col += 1
    nvel_red = col
    # pin the constant of the last cell; the tiny global compatibility defect
    # of curved walls is then absorbed at the outlet end
    pinned = 3 * (mesh.ncells - 1) if pin_pressure else -1
    for k in range(npres):
        if k == pinned:
            continue
        rows.append(nvel + k)
        cols.append(col)
        vals.append(1.0)
        col += 1
    P = sp.csr_matrix((vals, (rows, cols)), shape=(nvel + npres, col))
    return DofMap(mesh, P, nvel, npres, nvel_red, wall, end, rotations)


def rotate_to_frame(vel, normal, tangent):
    """Velocity vectors -> (normal, tangential) coordinates."""
    return np.stack([np.sum(vel * normal, -1), np.sum(vel * tangent, -1)], -1)


def rotate_from_frame(nt, normal, tangent):
    return nt[..., :1] * normal + nt[..., 1:] * tangent
