"""Divergence-free flux carrier g = (d2 G, -d1 G) concentrated below the upper wall.

The stream function is G = Phi * mu(1 + eps*ln((f2 - x2)/(x2 - fbar))) above the
midline and 0 below it, so g carries flux Phi and vanishes near both walls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .errors import OutsideDomain, SupportViolation, ZeroDenominator
from .geometry import ChannelProfile, TruncatedDomain, weight_integral

ZERO_BRANCH_REL = 1e-14


class Mollifier:
    """mu(t) = 1 - S(t), S the exp(-1/t) smoothstep; mu = 1 for t <= 0, 0 for t >= 1."""

    def _parts(self, t):
        t = np.asarray(t, dtype=float)
        inner = (t > 0) & (t < 1)
        tc = np.where(inner, t, 0.5)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            q = 1.0 / tc - 1.0 / (1.0 - tc)
            s = expit(-q)
            ss = expit(-q) * expit(q)          # S (1 - S) without cancellation
            dq = -1.0 / tc**2 - 1.0 / (1.0 - tc) ** 2
            ddq = 2.0 / tc**3 - 2.0 / (1.0 - tc) ** 3
            ds = -ss * dq
            dds = -ds * (1.0 - 2.0 * s) * dq - ss * ddq
        ds = np.where(inner & (ss > 0), ds, 0.0)
        dds = np.where(inner & (ss > 0), dds, 0.0)
        s = np.where(t >= 1, 1.0, np.where(t <= 0, 0.0, s))
        return s, ds, dds

    def __call__(self, t):
        return 1.0 - self._parts(t)[0]

    def d1(self, t):
        return -self._parts(t)[1]

    def d2(self, t):
        return -self._parts(t)[2]

    def sup_norms(self, n=200001):
        t = np.linspace(0.0, 1.0, n)
        return float(np.abs(self.d1(t)).max()), float(np.abs(self.d2(t)).max())


@dataclass(frozen=True, eq=False)
class FluxCarrier:
    phi: float
    eps: float
    profile: ChannelProfile
    mu: Mollifier = Mollifier()

    def __post_init__(self):
        if self.phi < 0:
            raise ValueError("flux must be nonnegative")
        if not 0.0 < self.eps < 1.0:
            raise ValueError("carrier parameter eps must lie in (0, 1)")

    def with_phi(self, phi):
        return FluxCarrier(phi, self.eps, self.profile, self.mu)

    def with_eps(self, eps):
        return FluxCarrier(self.phi, eps, self.profile, self.mu)

    # -- local coordinates ----------------------------------------------
    def _local(self, x1, x2, strict):
        x1 = np.asarray(x1, dtype=float)
        x2 = np.asarray(x2, dtype=float)
        x1, x2 = np.broadcast_arrays(x1, x2)
        p = self.profile
        f1, f2 = p.f1(x1), p.f2(x1)
        if strict and (np.any(x2 >= f2) or np.any(x2 <= f1)):
            raise OutsideDomain("evaluation point not strictly inside the channel")
        f = f2 - f1
        fbar = 0.5 * (f1 + f2)
        A = f2 - x2
        B = x2 - fbar
        active = B > ZERO_BRANCH_REL * f
        Ac = np.where(active & (A > 0), A, 1.0)
        Bc = np.where(active, B, 1.0)
        m = np.where(active, 1.0 + self.eps * (np.log(Ac) - np.log(Bc)), 2.0)
        m = np.where(active & (A <= 0), -np.inf, m)
        return x1, A, B, Ac, Bc, active, m

    def support_argument(self, x1, x2, strict=True):
        """mu argument m(x1, x2); values outside (0, 1) mean g = 0 there."""
        return self._local(x1, x2, strict)[-1]

    def eval_stream(self, x1, x2, strict=True):
        *_, active, m = self._local(x1, x2, strict)
        return np.where(active, self.phi * self.mu(np.where(np.isfinite(m), m, -1.0)), 0.0)

    def _derivs(self, x1, x2, strict):
        x1, A, B, Ac, Bc, active, m = self._local(x1, x2, strict)
        p, e = self.profile, self.eps
        mm = np.where(np.isfinite(m), m, -1.0)
        band = active & (mm > 0) & (mm < 1)
        d2f, d1fb = p.f2.d1(x1), p.mid_d1(x1)
        m1 = e * (d2f / Ac + d1fb / Bc)
        m2 = e * (-1.0 / Ac - 1.0 / Bc)
        return x1, Ac, Bc, band, mm, m1, m2

    def eval_velocity(self, x1, x2, strict=True):
        _, _, _, band, m, m1, m2 = self._derivs(x1, x2, strict)
        mp = self.phi * self.mu.d1(m)
        g1 = np.where(band, mp * m2, 0.0)
        g2 = np.where(band, -mp * m1, 0.0)
        return g1, g2

    def eval_gradient(self, x1, x2, strict=True):
        """Array [..., i, j] = d g_i / d x_j."""
        x1, A, B, band, m, m1, m2 = self._derivs(x1, x2, strict)
        p, e = self.profile, self.eps
        d2f, dfb = p.f2.d1(x1), p.mid_d1(x1)
        dd2f, ddfb = p.f2.d2(x1), p.mid_d2(x1)
        m11 = e * (dd2f / A - d2f**2 / A**2 + ddfb / B + dfb**2 / B**2)
        m12 = e * (d2f / A**2 - dfb / B**2)
        m22 = e * (-1.0 / A**2 + 1.0 / B**2)
        mp = self.phi * self.mu.d1(m)
        mpp = self.phi * self.mu.d2(m)
        out = np.zeros(np.shape(m) + (2, 2))
        out[..., 0, 0] = np.where(band, mpp * m1 * m2 + mp * m12, 0.0)
        out[..., 0, 1] = np.where(band, mpp * m2 * m2 + mp * m22, 0.0)
        out[..., 1, 0] = np.where(band, -(mpp * m1 * m1 + mp * m11), 0.0)
        out[..., 1, 1] = -out[..., 0, 0]
        return out

    # -- band parametrization ---------------------------------------------
    def band_points(self, x1, m):
        """x2 on the support band at mu-argument m, plus dx2/dm (negative)."""
        p = self.profile
        f = p.width(x1)
        r = np.exp((m - 1.0) / self.eps)          # (f2 - x2)/(x2 - fbar)
        B = 0.5 * f / (1.0 + r)
        x2 = p.mid(x1) + B
        dB_dm = -0.5 * f * r / (self.eps * (1.0 + r) ** 2)
        return x2, dB_dm

    def band_integral(self, fn, a, b, n1=None, nm=48):
        """Integral over Omega_{a,b} of fn(x1, x2), fn vanishing off the band."""
        if n1 is None:
            n1 = max(8, int(math.ceil((b - a) * 24)))
        gx, gw = np.polynomial.legendre.leggauss(8)
        edges = np.linspace(a, b, n1 + 1)
        h = np.diff(edges)
        x1 = (0.5 * (edges[:-1] + edges[1:])[:, None] + 0.5 * h[:, None] * gx[None, :]).ravel()
        w1 = (0.5 * h[:, None] * gw[None, :]).ravel()
        tm, wm = np.polynomial.legendre.leggauss(nm)
        m = 0.5 * (tm + 1.0)
        wm = 0.5 * wm
        X1 = x1[:, None] * np.ones_like(m)[None, :]
        M = np.ones_like(x1)[:, None] * m[None, :]
        X2, dx2 = self.band_points(X1, M)
        vals = fn(X1, X2)
        return float(np.sum(w1[:, None] * wm[None, :] * vals * np.abs(dx2)))

    def energy(self, a, b):
        """Integral over Omega_{a,b} of |grad g|^2 + |g|^4."""
        def dens(x1, x2):
            g1, g2 = self.eval_velocity(x1, x2, strict=False)
            G = self.eval_gradient(x1, x2, strict=False)
            return np.sum(G**2, axis=(-2, -1)) + (g1**2 + g2**2) ** 2
        return self.band_integral(dens, a, b)

    def section_flux(self, x1, nm=64):
        """Cross-section flux of g by quadrature over the band."""
        tm, wm = np.polynomial.legendre.leggauss(nm)
        m = 0.5 * (tm + 1.0)
        x1 = np.atleast_1d(np.asarray(x1, dtype=float))
        X1 = x1[:, None] * np.ones_like(m)[None, :]
        X2, dx2 = self.band_points(X1, m[None, :] * np.ones_like(X1))
        g1, _ = self.eval_velocity(X1, X2, strict=False)
        return np.sum(0.5 * wm[None, :] * g1 * np.abs(dx2), axis=1)


def check_velocity_identity(carrier: FluxCarrier, x1, x2):
    """Max relative defect of g2 = g1 f2' + eps Phi mu'(m) f'/(2 (x2 - fbar))."""
    g1, g2 = carrier.eval_velocity(x1, x2)
    p = carrier.profile
    m = carrier.support_argument(x1, x2)
    mm = np.where(np.isfinite(m), m, -1.0)
    B = x2 - p.mid(x1)
    with np.errstate(divide="ignore", invalid="ignore"):
        extra = np.where((mm > 0) & (mm < 1),
                         carrier.eps * carrier.phi * carrier.mu.d1(mm) * p.width_d1(x1) / (2 * B), 0.0)
    rhs = g1 * p.f2.d1(x1) + extra
    scale = np.maximum(np.abs(g2), np.abs(rhs)).max() + 1e-300
    return float(np.abs(g2 - rhs).max() / scale)


@dataclass
class CarrierReport:
    phi: float
    eps: float
    a: float
    b: float
    sup_f_g: float          # sup f |g| / Phi
    sup_f2_grad: float      # sup f^2 |grad g| / Phi
    energy: float
    weight: float           # int_a^b f^-3
    energy_ratio: float     # energy / ((Phi^2 + Phi^4) * weight)
    max_divergence: float
    n_samples: int
    n_support: int
    support_ok: bool
    midline_ok: bool        # f/4 <= x2 - fbar <= f/2 on supp g
    wall_gap_ok: bool       # f2 - x2 >= exp(-1/eps) f / 4 on supp g

    def as_dict(self):
        return dict(self.__dict__)


def carrier_bounds_report(carrier: FluxCarrier, domain: TruncatedDomain, sample_density=40,
                          seed=0) -> CarrierReport:
    """Measured Lemma-type constants and pointwise support checks of g on Omega_{a,b}."""
    p = carrier.profile
    a, b = domain.a, domain.b
    rng = np.random.default_rng(seed)
    n1 = max(2, int(sample_density * (b - a)))
    x1 = np.concatenate([np.linspace(a, b, n1), rng.uniform(a, b, n1)])
    s = np.concatenate([np.linspace(0, 1, sample_density * 4 + 2)[1:-1],
                        1.0 - np.geomspace(1e-9, 0.5, sample_density * 4)])
    X1 = np.repeat(x1, s.size)
    S = np.tile(s, x1.size)
    f = p.width(X1)
    X2 = p.f1(X1) + S * f
    g1, g2 = carrier.eval_velocity(X1, X2)
    G = carrier.eval_gradient(X1, X2)
    speed = np.hypot(g1, g2)
    gradn = np.sqrt(np.sum(G**2, axis=(-2, -1)))
    nz = (speed > 0) | (gradn > 0)
    A = p.f2(X1) - X2
    B = X2 - p.mid(X1)
    lo = math.exp(-1.0 / carrier.eps)
    tol = 1e-12
    ratio = np.where(nz, A / np.where(B > 0, B, 1.0), 0.5)
    support_ok = bool(np.all((B[nz] > 0) & (ratio[nz] >= lo * (1 - tol)) & (ratio[nz] <= 1 + tol)))
    if not support_ok:
        bad = np.nonzero(nz & ~((B > 0) & (ratio >= lo * (1 - tol)) & (ratio <= 1 + tol)))[0][0]
        raise SupportViolation(f"g != 0 at ({X1[bad]:.6g}, {X2[bad]:.6g}) outside the carrier band")
    fz = f[nz]
    midline_ok = bool(np.all((B[nz] >= fz / 4 * (1 - tol)) & (B[nz] <= fz / 2 * (1 + tol))))
    wall_gap_ok = bool(np.all(A[nz] >= lo * fz / 4 * (1 - tol)))
    phi = carrier.phi
    energy = carrier.energy(a, b)
    weight = weight_integral(p, a, b, -3.0)
    denom = (phi**2 + phi**4) * weight
    return CarrierReport(
        phi=phi, eps=carrier.eps, a=a, b=b,
        sup_f_g=float((f * speed).max() / phi) if phi > 0 else 0.0,
        sup_f2_grad=float((f**2 * gradn).max() / phi) if phi > 0 else 0.0,
        energy=energy, weight=weight,
        energy_ratio=energy / denom if denom > 0 else 0.0,
        max_divergence=float(np.abs(G[..., 0, 0] + G[..., 1, 1]).max()),
        n_samples=int(X1.size), n_support=int(nz.sum()),
        support_ok=support_ok, midline_ok=midline_ok, wall_gap_ok=wall_gap_ok,
    )


def hardy_weighted_check(carrier: FluxCarrier, domain: TruncatedDomain, w, dw_dx2=None, n1=None, ns=64):
    """int g1^2 w^2 / (Phi^2 eps^2 int |d2 w|^2) for w vanishing on the upper wall."""
    p = carrier.profile
    a, b = domain.a, domain.b
    if dw_dx2 is None:
        def dw_dx2(x1, x2, h=1e-6):
            return (w(x1, x2 + h) - w(x1, x2 - h)) / (2 * h)

    def num_dens(x1, x2):
        g1, _ = carrier.eval_velocity(x1, x2, strict=False)
        return g1**2 * w(x1, x2) ** 2
    num = carrier.band_integral(num_dens, a, b, n1=n1)

    if n1 is None:
        n1 = max(8, int(math.ceil((b - a) * 8)))
    gx, gw = np.polynomial.legendre.leggauss(8)
    edges = np.linspace(a, b, n1 + 1)
    h = np.diff(edges)
    x1 = (0.5 * (edges[:-1] + edges[1:])[:, None] + 0.5 * h[:, None] * gx).ravel()
    w1 = (0.5 * h[:, None] * gw).ravel()
    ts, ws = np.polynomial.legendre.leggauss(ns)
    s = 0.5 * (ts + 1)
    X1 = x1[:, None] * np.ones(ns)
    f = p.width(X1)
    X2 = p.f1(X1) + s[None, :] * f
    den = float(np.sum(w1[:, None] * 0.5 * ws[None, :] * f * dw_dx2(X1, X2) ** 2))
    if den <= 0.0 or carrier.phi == 0.0:
        raise ZeroDenominator("w is constant in x2 (or Phi = 0): ratio undefined")
    return num / (carrier.phi**2 * carrier.eps**2 * den)
