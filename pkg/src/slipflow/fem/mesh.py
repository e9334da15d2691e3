"""Mapped structured meshes over truncated channel domains.

The reference rectangle [a, b] x [0, 1] is mapped by x2 = f1(x1) + s f(x1).
Cells are biquadratic in (x1, s) so that every Q2 node sits exactly on the
physical geometry; wall frames come from the analytic profile derivatives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import JacobianNonPositive
from ..geometry import TruncatedDomain

GRADINGS = ("Uniform", "WallRefined", "CarrierBand")
DEFAULT_GRADING_STRENGTH = 2.5
# CarrierBand: fraction of cells spread uniformly in s (rest follows the monitor)
BAND_UNIFORM_SHARE = 0.15


def band_s(m, eps):
    """s = (x2 - f1)/f at carrier argument m; independent of x1."""
    r = np.exp((np.asarray(m, dtype=float) - 1.0) / eps)
    return 0.5 + 0.5 / (1.0 + r)


def _carrier_monitor(eps, n=40001):
    """s grid and |d^4 G / ds^4|^(2/7), normalized to unit mean.

    In s the stream function is G = Phi mu(m(s)) for every x1, so Q2
    interpolation error of the carrier is equidistributed by cell sizes
    proportional to |d^4 G / ds^4|^(-2/7).
    """
    from ..carrier import Mollifier

    s = np.linspace(0.0, 1.0, n)
    inside = (s > 0.5) & (s < 1.0)
    sc = np.where(inside, s, 0.75)
    m = 1.0 + eps * (np.log(1.0 - sc) - np.log(sc - 0.5))
    ms = eps * (-1.0 / (1.0 - sc) - 1.0 / (sc - 0.5))
    band = inside & (m > 0.0) & (m < 1.0)
    gs = np.where(band, Mollifier().d1(np.clip(m, 0.0, 1.0)) * ms, 0.0)
    d3 = np.gradient(np.gradient(np.gradient(gs, s), s), s)
    mon = np.abs(d3) ** (2.0 / 7.0)
    return s, mon / np.trapezoid(mon, s)


def graded_s(ny, grading="Uniform", strength=DEFAULT_GRADING_STRENGTH, eps=None):
    """Vertex values of s in [0, 1].

    WallRefined clusters symmetrically at both walls.  CarrierBand
    equidistributes the carrier interpolation error over the support band
    (which sits at fixed s for every x1), keeping a uniform share elsewhere.
    """
    eta = np.linspace(0.0, 1.0, ny + 1)
    if grading == "Uniform":
        return eta
    if grading == "CarrierBand":
        if eps is None:
            raise ValueError("CarrierBand grading needs the carrier eps")
        sg, mon = _carrier_monitor(eps)
        dens = BAND_UNIFORM_SHARE + (1.0 - BAND_UNIFORM_SHARE) * mon
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(sg))])
        out = np.interp(np.linspace(0.0, cum[-1], ny + 1), cum, sg)
        out[0], out[-1] = 0.0, 1.0
        return out
    if grading == "WallRefined":
        s = 0.5 * (1.0 + np.tanh(strength * (2.0 * eta - 1.0)) / np.tanh(strength))
        s[0], s[-1] = 0.0, 1.0
        return s
    raise ValueError(f"unknown grading {grading!r}")


@dataclass(frozen=True, eq=False)
class Mesh:
    """Structured Q2 mesh.

    Node (I, J), with 0 <= I <= 2 nx and 0 <= J <= 2 ny, has global index
    I * (2 ny + 1) + J, so a column of constant x1 is contiguous.
    """

    domain: TruncatedDomain
    x1v: np.ndarray  # cell vertex abscissae, length nx + 1
    sv: np.ndarray  # cell vertex s values, length ny + 1
    grading: str = "Uniform"
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def profile(self):
        return self.domain.profile

    @property
    def nx(self):
        return len(self.x1v) - 1

    @property
    def ny(self):
        return len(self.sv) - 1

    @property
    def ncells(self):
        return self.nx * self.ny

    @property
    def n1(self):
        return 2 * self.nx + 1

    @property
    def n2(self):
        return 2 * self.ny + 1

    @property
    def nnodes(self):
        return self.n1 * self.n2

    @property
    def x1_nodes(self):
        mid = 0.5 * (self.x1v[:-1] + self.x1v[1:])
        out = np.empty(self.n1)
        out[0::2] = self.x1v
        out[1::2] = mid
        return out

    @property
    def s_nodes(self):
        mid = 0.5 * (self.sv[:-1] + self.sv[1:])
        out = np.empty(self.n2)
        out[0::2] = self.sv
        out[1::2] = mid
        return out

    def node_index(self, I, J):
        return np.asarray(I) * self.n2 + np.asarray(J)

    @property
    def nodes(self):
        """Physical coordinates, shape (nnodes, 2)."""
        if "nodes" not in self._cache:
            x1 = self.x1_nodes
            s = self.s_nodes
            X1, S = np.meshgrid(x1, s, indexing="ij")
            p = self.profile
            X2 = p.f1(X1) + S * p.width(X1)
            self._cache["nodes"] = np.column_stack([X1.ravel(), X2.ravel()])
        return self._cache["nodes"]

    @property
    def cell_nodes(self):
        """Global node indices of each cell, shape (ncells, 9), local k = 3 i + j."""
        if "cells" not in self._cache:
            ci, cj = np.meshgrid(np.arange(self.nx), np.arange(self.ny), indexing="ij")
            ci, cj = ci.ravel(), cj.ravel()
            out = np.empty((ci.size, 9), dtype=np.int64)
            for i in range(3):
                for j in range(3):
                    out[:, 3 * i + j] = self.node_index(2 * ci + i, 2 * cj + j)
            self._cache["cells"] = out
            self._cache["cell_ij"] = (ci, cj)
        return self._cache["cells"]

    @property
    def cell_ij(self):
        self.cell_nodes
        return self._cache["cell_ij"]

    def facet_nodes(self, name):
        """Node indices on a facet set: Top, Bottom, Left, Right."""
        I = np.arange(self.n1)
        J = np.arange(self.n2)
        if name == "Bottom":
            return self.node_index(I, 0)
        if name == "Top":
            return self.node_index(I, self.n2 - 1)
        if name == "Left":
            return self.node_index(0, J)
        if name == "Right":
            return self.node_index(self.n1 - 1, J)
        raise ValueError(name)

    def wall_frame(self, x1, side):
        """Analytic outward normal and tangent (t = (1, f') / |.|) on a wall."""
        p = self.profile
        x1 = np.asarray(x1, dtype=float)
        fp = p.f2.d1(x1) if side == "Top" else p.f1.d1(x1)
        fp = np.broadcast_to(fp, x1.shape)
        nrm = np.sqrt(1.0 + fp**2)
        t = np.stack([1.0 / nrm, fp / nrm], axis=-1)
        if side == "Top":
            n = np.stack([-fp / nrm, 1.0 / nrm], axis=-1)
        else:
            n = np.stack([fp / nrm, -1.0 / nrm], axis=-1)
        return n, t

    def jacobians(self, xi, eta):
        """Determinant of the cell map at reference points, shape (ncells, len)."""
        ci, cj = self.cell_ij
        hx = np.diff(self.x1v)[ci][:, None]
        hs = np.diff(self.sv)[cj][:, None]
        x1 = 0.5 * (self.x1v[ci] + self.x1v[ci + 1])[:, None] + 0.5 * hx * np.asarray(xi)[None, :]
        return 0.25 * hx * hs * self.profile.width(x1)


def build_mesh(domain: TruncatedDomain, nx, ny, grading="Uniform", x1_vertices=None,
               strength=DEFAULT_GRADING_STRENGTH, eps=None) -> Mesh:
    """Mapped mesh of ``domain`` with nx x ny Q2 cells.

    ``x1_vertices`` overrides the uniform x1 spacing (must span [a, b]);
    ``eps`` is required by the CarrierBand grading.
    """
    if nx < 2 or ny < 2:
        raise ValueError("need nx, ny >= 2")
    if x1_vertices is None:
        x1v = np.linspace(domain.a, domain.b, nx + 1)
    else:
        x1v = np.asarray(x1_vertices, dtype=float)
        if len(x1v) != nx + 1 or x1v[0] != domain.a or x1v[-1] != domain.b:
            raise ValueError("x1_vertices must have nx + 1 entries spanning [a, b]")
    sv = graded_s(ny, grading, strength, eps)
    if np.any(np.diff(x1v) <= 0) or np.any(np.diff(sv) <= 0):
        raise JacobianNonPositive("grid spacing must be strictly positive")
    mesh = Mesh(domain, x1v, sv, grading)
    gx = np.array([-0.9, 0.0, 0.9])
    if np.any(mesh.jacobians(gx, gx) <= 0):
        raise JacobianNonPositive("non-positive cell Jacobian")
    return mesh


def width_adapted_vertices(domain: TruncatedDomain, nx, power=1.0):
    """x1 vertices with local spacing proportional to f(x1)**power.

    Keeps cell aspect ratios bounded in widening channels.
    """
    p = domain.profile
    xs = np.linspace(domain.a, domain.b, 20 * nx + 1)
    dens = p.width(xs) ** (-power)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(xs))])
    target = np.linspace(0.0, cum[-1], nx + 1)
    out = np.interp(target, cum, xs)
    out[0], out[-1] = domain.a, domain.b
    return out


def curvature_adapted_vertices(domain: TruncatedDomain, h_curved=0.125, h_flat=0.5,
                               kappa_ref=0.5, width_power=1.0):
    """x1 vertices fine where the walls bend, coarse where they are flat.

    Local target spacing is h_curved where max |f_i''| >= kappa_ref, growing
    like (kappa_ref / |f''|)^(1/5) up to h_flat (the discrete wall leak
    scales like the curvature times h^5).  In widening channels the flat
    spacing is scaled by (f / min f)^width_power.  Returns the vertex array;
    its length fixes nx.
    """
    p = domain.profile
    xs = np.linspace(domain.a, domain.b, max(2001, int(40 * domain.length) + 1))
    kappa = np.maximum(np.abs(np.broadcast_to(p.f1.d2(xs), xs.shape)),
                       np.abs(np.broadcast_to(p.f2.d2(xs), xs.shape)))
    f = np.broadcast_to(p.width(xs), xs.shape)
    h_w = h_flat * (f / f.min()) ** width_power
    with np.errstate(divide="ignore"):
        h_k = h_curved * (kappa_ref / np.maximum(kappa, 1e-300)) ** 0.2
    h = np.minimum(np.maximum(h_k, h_curved), h_w)
    # running minimum over one flat cell keeps transitions gradual
    dx = xs[1] - xs[0]
    r = max(1, int(round(h_flat / dx)))
    pad = np.pad(h, r, mode="edge")
    h = np.min(np.lib.stride_tricks.sliding_window_view(pad, 2 * r + 1), axis=-1)
    dens = 1.0 / h
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * dx)])
    nx = max(2, int(np.ceil(cum[-1])))
    out = np.interp(np.linspace(0.0, cum[-1], nx + 1), cum, xs)
    out[0], out[-1] = domain.a, domain.b
    return out
