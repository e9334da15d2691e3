"""Windowed energies of solved flows and the checks built on them.

Energies are y(t) = ||grad u||^2 on Omega_t plus ||u||^2 on the wall part
of its boundary (arc length).  Windows need not align with the mesh: cell
columns cut by a window end are integrated with a Gauss rule clipped to the
covered part of the reference interval, so disjoint windows add up to their
union up to quadrature roundoff.

All verdict thresholds are keyword arguments; the defaults are the ones the
shipped suite uses.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from .errors import DegenerateWindow, HypothesisViolated, WindowTooShort
from .fem.space import cell_quadrature, gauss, q2_reference
from .geometry import ChannelProfile, energy_windows, weight_integral
from .shear import affine_shear, make_shear

FORMS = ("Linear", "WeightIntegral")
CONDITIONS = ("Cond_1_16", "Cond_1_17", "Neither")
POWER_THRESHOLD = 0.6  # f = o(t^{3/5}) for power-law widths


# ---------------------------------------------------------------------------
# energy meter
# ---------------------------------------------------------------------------

@dataclass
class _ColumnData:
    """Integrand data on one (possibly clipped) cell column."""

    cells: np.ndarray
    x: np.ndarray  # (ny, nq, 2)
    w: np.ndarray  # (ny, nq)
    N: np.ndarray
    dN: np.ndarray
    v: np.ndarray
    gv: np.ndarray
    g: np.ndarray
    gg: np.ndarray

    @property
    def u(self):
        return self.v + self.g

    @property
    def gu(self):
        return self.gv + self.gg


class EnergyMeter:
    """Window integrals of one FlowState.

    Full columns reuse the problem quadrature (computed once); columns cut by
    a window end get a clipped rule with the same number of points.
    """

    def __init__(self, state, order=None):
        self.state = state
        pb = state.problem
        self.problem = pb
        self.mesh = pb.mesh
        self.order = pb.mesh_spec.order if order is None else int(order)
        self.carrier = pb.carrier()
        mesh = self.mesh
        vel = state.v_nodes
        self._vel = vel
        # full-column totals
        v, gv = pb.fields(state.x)
        gu = gv + pb.grad_g()
        w = pb.quad.w
        cells_gu = np.sum(w * np.sum(gu**2, axis=(-2, -1)), axis=1)
        cells_gv = np.sum(w * np.sum(gv**2, axis=(-2, -1)), axis=1)
        nx, ny = mesh.nx, mesh.ny
        self.col_grad_u = cells_gu.reshape(nx, ny).sum(axis=1)
        self.col_grad_v = cells_gv.reshape(nx, ny).sum(axis=1)
        self.col_wall = np.zeros(nx)
        for side in ("Bottom", "Top"):
            xw, ww, vv = self._wall_values(np.arange(nx), -1.0, 1.0, side)
            self.col_wall += np.sum(ww * np.sum(vv**2, -1), axis=1)
        self._cum = {
            "grad_u": np.concatenate([[0.0], np.cumsum(self.col_grad_u)]),
            "grad_v": np.concatenate([[0.0], np.cumsum(self.col_grad_v)]),
            "wall": np.concatenate([[0.0], np.cumsum(self.col_wall)]),
        }

    # -- low level -------------------------------------------------------------
    def _ref_rule(self, xa, xb):
        g, gw = gauss(self.order)
        xi = 0.5 * (xa + xb) + 0.5 * (xb - xa) * g
        return xi, 0.5 * (xb - xa) * gw

    def _wall_values(self, cis, xa, xb, side):
        """x1 points, arc-length weights and v values on a wall for columns ``cis``."""
        mesh = self.mesh
        xi, wxi = self._ref_rule(xa, xb)
        eta = -1.0 if side == "Bottom" else 1.0
        N, _, _ = q2_reference(xi, np.full_like(xi, eta))
        cj = 0 if side == "Bottom" else mesh.ny - 1
        cells = np.asarray(cis) * mesh.ny + cj
        hx = np.diff(mesh.x1v)[cis][:, None]
        x1 = 0.5 * (mesh.x1v[cis] + mesh.x1v[np.asarray(cis) + 1])[:, None] + 0.5 * hx * xi[None, :]
        fi = mesh.profile.f2 if side == "Top" else mesh.profile.f1
        ds = np.sqrt(1.0 + np.broadcast_to(fi.d1(x1), x1.shape) ** 2)
        vv = np.einsum("qk,ekc->eqc", N, self._vel[mesh.cell_nodes[cells]])
        return x1, 0.5 * hx * wxi[None, :] * ds, vv

    def column(self, ci, xa=-1.0, xb=1.0) -> _ColumnData:
        """Integrand data on column ``ci`` restricted to reference xi in [xa, xb]."""
        mesh = self.mesh
        xi, wxi = self._ref_rule(xa, xb)
        ge, gwe = gauss(self.order)
        XI, ETA = np.meshgrid(xi, ge, indexing="ij")
        W = np.outer(wxi, gwe)
        cells = ci * mesh.ny + np.arange(mesh.ny)
        q = cell_quadrature(mesh, points=(XI.ravel(), ETA.ravel(), W.ravel()), cells=cells)
        vel = self._vel[mesh.cell_nodes[cells]]
        v = np.einsum("qk,ekc->eqc", q.N, vel)
        gv = np.einsum("eqkd,ekc->eqcd", q.dN, vel)
        x1, x2 = q.x[..., 0], q.x[..., 1]
        g = np.stack(self.carrier.eval_velocity(x1, x2, strict=False), axis=-1)
        gg = self.carrier.eval_gradient(x1, x2, strict=False)
        return _ColumnData(cells, q.x, q.w, q.N, q.dN, v, gv, g, gg)

    def _pieces(self, lo, hi):
        """Split [lo, hi] into full columns (range) and clipped ends (ci, xa, xb)."""
        x1v = self.mesh.x1v
        if lo < x1v[0] - 1e-12 or hi > x1v[-1] + 1e-12:
            raise ValueError(f"window ({lo:.6g}, {hi:.6g}) leaves the truncated domain")
        lo, hi = max(lo, x1v[0]), min(hi, x1v[-1])
        if hi <= lo:
            return (0, 0), []
        i0 = int(np.clip(np.searchsorted(x1v, lo, side="right") - 1, 0, len(x1v) - 2))
        i1 = int(np.clip(np.searchsorted(x1v, hi, side="left") - 1, 0, len(x1v) - 2))

        def ref(ci, x):
            return float(np.clip(2.0 * (x - x1v[ci]) / (x1v[ci + 1] - x1v[ci]) - 1.0, -1.0, 1.0))

        if i0 == i1:
            return (0, 0), [(i0, ref(i0, lo), ref(i0, hi))]
        parts = []
        a, b = ref(i0, lo), ref(i1, hi)
        first_full = i0 if a <= -1.0 else i0 + 1
        last_full = i1 if b >= 1.0 else i1 - 1
        if a > -1.0:
            parts.append((i0, a, 1.0))
        if b < 1.0:
            parts.append((i1, -1.0, b))
        return (first_full, last_full + 1), parts

    # -- public ------------------------------------------------------------------
    def window(self, lo, hi):
        """dict with grad_u, grad_v and wall energies on lo < x1 < hi."""
        (c0, c1), parts = self._pieces(lo, hi)
        out = {k: float(c[c1] - c[c0]) for k, c in self._cum.items()}
        for ci, xa, xb in parts:
            if xb <= xa:
                continue
            col = self.column(ci, xa, xb)
            out["grad_u"] += float(np.sum(col.w * np.sum(col.gu**2, axis=(-2, -1))))
            out["grad_v"] += float(np.sum(col.w * np.sum(col.gv**2, axis=(-2, -1))))
            for side in ("Bottom", "Top"):
                _, ww, vv = self._wall_values(np.array([ci]), xa, xb, side)
                out["wall"] += float(np.sum(ww * np.sum(vv**2, -1)))
        out["total_u"] = out["grad_u"] + out["wall"]
        out["total_v"] = out["grad_v"] + out["wall"]
        return out

    def integrate(self, lo, hi, fn: Callable[[_ColumnData], np.ndarray]):
        """Integral of ``fn(column) -> (ny, nq)`` over lo < x1 < hi (column by column)."""
        (c0, c1), parts = self._pieces(lo, hi)
        total = 0.0
        for ci in range(c0, c1):
            col = self.column(ci)
            total += float(np.sum(col.w * fn(col)))
        for ci, xa, xb in parts:
            if xb > xa:
                col = self.column(ci, xa, xb)
                total += float(np.sum(col.w * fn(col)))
        return total

    def section_densities(self):
        """(x1, grad density, wall density) at the Gauss abscissae of every column.

        Densities are per unit x1, so integrating them in x1 gives y.
        """
        mesh = self.mesh
        pb = self.problem
        n = self.order
        _, gw = gauss(n)
        v, gv = pb.fields(self.state.x)
        gu = gv + pb.grad_g()
        dens = pb.quad.w * np.sum(gu**2, axis=(-2, -1))  # (ncells, n*n), q = a n + b
        dens = dens.reshape(mesh.nx, mesh.ny, n, n).sum(axis=(1, 3))
        hx = np.diff(mesh.x1v)[:, None]
        dens = dens / (0.5 * hx * gw[None, :])
        wall = np.zeros_like(dens)
        x1 = None
        for side in ("Bottom", "Top"):
            x1, ww, vv = self._wall_values(np.arange(mesh.nx), -1.0, 1.0, side)
            wall += ww * np.sum(vv**2, -1) / (0.5 * hx * gw[None, :])
        return x1.ravel(), dens.ravel(), wall.ravel()


def window_energy(state, lo, hi, meter: EnergyMeter | None = None):
    return (meter or EnergyMeter(state)).window(lo, hi)


# ---------------------------------------------------------------------------
# energy profile and growth fits
# ---------------------------------------------------------------------------

@dataclass
class EnergyProfile:
    t: np.ndarray
    y: np.ndarray  # u-version
    yv: np.ndarray  # v-version
    windows: dict = field(default_factory=dict)  # kind -> (nt, nwin) energies (nan if skipped)
    notes: list = field(default_factory=list)
    phi: float = 0.0
    domain: tuple = (0.0, 0.0)
    profile: ChannelProfile | None = None

    @property
    def T(self):
        return float(self.t[-1])

    def is_monotone(self, rtol=1e-12):
        scale = max(float(np.max(np.abs(self.y), initial=0.0)), 1e-300)
        return bool(np.all(np.diff(self.y) >= -rtol * scale))

    def as_table(self):
        cols = {"t": self.t, "y": self.y, "y_v": self.yv}
        for kind, arr in self.windows.items():
            for j in range(arr.shape[1]):
                cols[f"{kind.lower()}_{j}"] = arr[:, j]
        return cols


def default_t_grid(domain, step=0.5):
    T = min(-domain.a, domain.b)
    return np.arange(step, T + 0.5 * step, step)


def energy_profile(state, t_grid=None, kinds=("Unit",), repar=None, meter=None) -> EnergyProfile:
    """y(t) on Omega_t = (-t, t) (clipped to the truncation) plus window energies."""
    meter = meter or EnergyMeter(state)
    dom = state.problem.domain
    prof = dom.profile
    t = default_t_grid(dom) if t_grid is None else np.asarray(t_grid, dtype=float)
    y = np.empty(t.size)
    yv = np.empty(t.size)
    for i, ti in enumerate(t):
        e = meter.window(max(-ti, dom.a), min(ti, dom.b))
        y[i], yv[i] = e["total_u"], e["total_v"]
    out = EnergyProfile(t, y, yv, {}, [], state.phi, (dom.a, dom.b), prof)
    for kind in kinds:
        rows = []
        for ti in t:
            try:
                wins = energy_windows(prof, repar, float(ti), kind)
            except DegenerateWindow as exc:
                out.notes.append(f"{kind} t={ti:.6g}: skipped ({exc})")
                rows.append([np.nan, np.nan])
                continue
            vals = []
            for lo, hi in wins:
                if lo < dom.a or hi > dom.b:
                    vals.append(np.nan)
                else:
                    vals.append(meter.window(lo, hi)["total_u"])
            rows.append(vals + [np.nan] * (2 - len(vals)))
        out.windows[kind] = np.array(rows, dtype=float)
    return out


def bound_form_values(form, t, profile: ChannelProfile | None = None):
    t = np.asarray(t, dtype=float)
    if form == "Linear":
        return t.copy()
    if form == "WeightIntegral":
        if profile is None:
            raise ValueError("WeightIntegral needs the channel profile")
        return np.array([weight_integral(profile, -ti, ti, -3.0) for ti in t])
    raise ValueError(f"unknown bound form {form!r}")


@dataclass
class GrowthFit:
    form: str
    intercept: float
    slope: float  # fitted constant used for the T-doubling comparison
    c_bar: float  # sup over the interior of y / (1 + b(t))
    residual: float  # sup |y - fit| / fitted scale on the interior
    T: float
    stability: float | None = None  # |slope / reference slope - 1|
    verdict: str = "Fail"

    def as_dict(self):
        return dict(self.__dict__)


def fit_growth(profile: EnergyProfile, bound_form="Linear", interior=(0.25, 0.75),
               residual_tol=0.10, reference: GrowthFit | None = None, stability_tol=0.25,
               window_length=1.0) -> GrowthFit:
    """Least-squares fit y ~ A + B b(t) on the interior region of the t grid.

    b(t) = t (Linear) or int_{-t}^{t} f^{-3} (WeightIntegral).  With a
    ``reference`` fit (smaller T), the slope must agree within ``stability_tol``.
    """
    T = profile.T
    if T < 3.0 * window_length:
        raise WindowTooShort(f"T = {T:.4g} is shorter than 3 fitting windows")
    mask = (profile.t >= interior[0] * T) & (profile.t <= interior[1] * T)
    if mask.sum() < 4:
        raise WindowTooShort("fewer than 4 grid points in the interior fitting region")
    t = profile.t[mask]
    y = profile.y[mask]
    b = bound_form_values(bound_form, t, profile.profile)
    M = np.column_stack([np.ones_like(b), b])
    (A, B), *_ = np.linalg.lstsq(M, y, rcond=None)
    fit = A + B * b
    scale = float(np.max(np.abs(fit)))
    res = float(np.max(np.abs(y - fit))) / scale if scale > 0 else 0.0
    c_bar = float(np.max(y / (1.0 + b)))
    out = GrowthFit(bound_form, float(A), float(B), c_bar, res, T)
    ok = res <= residual_tol and B >= 0
    if reference is not None:
        if reference.slope != 0:
            out.stability = abs(out.slope / reference.slope - 1.0)
        else:
            out.stability = 0.0 if out.slope == 0 else math.inf
        ok = ok and out.stability <= stability_tol
    out.verdict = "Pass" if ok else "Fail"
    return out


def plateau_check(profile: EnergyProfile, ratio_tol=1.1):
    """Bounded-energy surrogate: y(3T/4) / y(T/2) below ``ratio_tol``."""
    T = profile.T
    y34 = float(np.interp(0.75 * T, profile.t, profile.y))
    y12 = float(np.interp(0.5 * T, profile.t, profile.y))
    ratio = y34 / y12 if y12 > 0 else (1.0 if y34 == 0 else math.inf)
    return {"y_3T4": y34, "y_T2": y12, "ratio": ratio,
            "verdict": "Pass" if ratio < ratio_tol else "Fail"}


# ---------------------------------------------------------------------------
# lower bound, local bounds, far field, decay
# ---------------------------------------------------------------------------

def _ratio_spread(vals):
    vals = np.asarray(vals, dtype=float)
    vals = vals[np.isfinite(vals)]
    if vals.size == 0:
        return math.nan
    med = float(np.median(vals))
    if med == 0:
        return 1.0 if float(np.max(vals)) == 0 else math.inf
    return float(np.max(vals)) / med


def lower_bound_check(state, t_grid=None, meter=None, spread_tol=3.0):
    """ratio(t) = Phi^2 int_{-t}^t f^-3 / y(t) and the measured section constant.

    C_lb is the largest section ratio Phi^2 f^-3 / (section energy density),
    sampled at the Gauss abscissae; integrating the section inequality gives
    ratio(t) <= C_lb, which is what the verdict asserts, together with the
    max/median spread of ratio(t).
    """
    meter = meter or EnergyMeter(state)
    dom = state.problem.domain
    prof = dom.profile
    phi = state.phi
    t = default_t_grid(dom) if t_grid is None else np.asarray(t_grid, dtype=float)
    if phi == 0:
        z = np.zeros_like(t)
        return {"t": t, "ratio": z, "c_lb": 0.0, "spread": 0.0, "verdict": "Pass"}
    W = bound_form_values("WeightIntegral", t, prof)
    prof_y = energy_profile(state, t, kinds=(), meter=meter)
    ratio = phi**2 * W / prof_y.y
    x1, dg, dw = meter.section_densities()
    tmax = float(t.max())
    sel = (x1 >= -tmax) & (x1 <= tmax)
    f = np.asarray(prof.width(x1[sel]), dtype=float) * np.ones(sel.sum())
    c_lb = float(np.max(phi**2 * f**-3.0 / (dg[sel] + dw[sel])))
    spread = _ratio_spread(ratio)
    ok = float(np.max(ratio)) <= c_lb * (1.0 + 1e-8) and spread <= spread_tol
    return {"t": t, "ratio": ratio, "c_lb": c_lb, "spread": spread,
            "verdict": "Pass" if ok else "Fail"}


def uniform_local_check(state, meter=None, slab=1.0, end_margin=None, spread_tol=3.0,
                        include_ends=False):
    """Unit-slab energies (t - 1, t) across the domain; sup/median over interior slabs.

    Slabs closer than ``end_margin`` (default twice the end width) to an end
    section are excluded unless ``include_ends``; the report records which.
    """
    meter = meter or EnergyMeter(state)
    dom = state.problem.domain
    prof = dom.profile
    if end_margin is None:
        end_margin = 2.0 * float(max(prof.width(dom.a), prof.width(dom.b)))
    n = int(math.floor((dom.b - dom.a) / slab + 1e-9))
    lo = dom.a + slab * np.arange(n)
    hi = lo + slab
    e = np.array([meter.window(a, b)["total_u"] for a, b in zip(lo, hi)])
    interior = (lo >= dom.a + end_margin) & (hi <= dom.b - end_margin)
    use = np.ones_like(interior) if include_ends else interior
    if not np.any(use):
        raise WindowTooShort("no interior unit slabs; enlarge the domain or shrink end_margin")
    vals = e[use]
    sup = float(vals.max())
    med = float(np.median(vals))
    ratio = _ratio_spread(vals)
    return {"slab_hi": hi, "energy": e, "interior": interior, "sup": sup, "median": med,
            "ratio": ratio, "include_ends": include_ends,
            "verdict": "Pass" if ratio <= spread_tol else "Fail"}


def _interp_error_density(meter: EnergyMeter, col: _ColumnData, W, dW):
    """|w - I w|^2 + |grad(w - I w)|^2 for w = U - g and its Q2 nodal interpolant I w."""
    mesh = meter.mesh
    nodes = mesh.nodes[mesh.cell_nodes[col.cells]]  # (ny, 9, 2)
    gn = np.stack(meter.carrier.eval_velocity(nodes[..., 0], nodes[..., 1], strict=False), -1)
    Un = np.zeros_like(gn)
    Un[..., 0] = W(nodes[..., 1])
    wn = Un - gn
    Iw = np.einsum("qk,ekc->eqc", col.N, wn)
    gIw = np.einsum("eqkd,ekc->eqcd", col.dN, wn)
    Ue = np.zeros_like(col.g)
    Ue[..., 0] = W(col.x[..., 1])
    gUe = np.zeros_like(col.gg)
    gUe[..., 0, 1] = dW(col.x[..., 1])
    d0 = (Ue - col.g) - Iw
    d1 = (gUe - col.gg) - gIw
    return np.sum(d0**2, -1) + np.sum(d1**2, axis=(-2, -1))


def far_field_check(state, shear=None, k_start=None, meter=None, slab=1.0, decay=1e-3,
                    end_fraction=0.75, noise_factor=10.0, small_flux=1.0, straight_tol=1e-8):
    """Per-slab ||u - U||^2_{H^1} beyond ``k_start`` where the walls are straight.

    The tail must fall below ``decay`` times the first slab, or to the
    discretization floor (``noise_factor`` times the Q2 interpolation error
    of the exact far-field correction U - g on the same slab), before
    x1 = k_start + end_fraction (b - k_start).  Above ``small_flux`` a
    failing tail is labelled Inconclusive.
    """
    meter = meter or EnergyMeter(state)
    pb = state.problem
    dom = pb.domain
    prof = dom.profile
    k_start = 0.5 * (dom.a + dom.b) if k_start is None else float(k_start)
    xs = np.linspace(k_start, dom.b, 201)
    c1, c2 = float(prof.f1(k_start)), float(prof.f2(k_start))
    dev = max(float(np.max(np.abs(prof.f1(xs) - c1))), float(np.max(np.abs(prof.f2(xs) - c2))))
    if dev > straight_tol * max(1.0, c2 - c1):
        raise ValueError(f"walls are not straight beyond k_start = {k_start:.4g} (deviation {dev:.2e})")
    if shear is None:
        shear = make_shear(state.phi, pb.alpha)
    W, dW = affine_shear(shear, c1, c2)

    def deviation(col):
        Ue = np.zeros_like(col.u)
        Ue[..., 0] = W(col.x[..., 1])
        gUe = np.zeros_like(col.gu)
        gUe[..., 0, 1] = dW(col.x[..., 1])
        return np.sum((col.u - Ue) ** 2, -1) + np.sum((col.gu - gUe) ** 2, axis=(-2, -1))

    def noise(col):
        return _interp_error_density(meter, col, W, dW)

    x_end = k_start + end_fraction * (dom.b - k_start)
    n = int(math.floor((dom.b - k_start) / slab + 1e-9))
    lo = k_start + slab * np.arange(n)
    hi = lo + slab
    devs = np.array([meter.integrate(a, b, deviation) for a, b in zip(lo, hi)])
    floor = noise_factor * np.array([meter.integrate(a, b, noise) for a, b in zip(lo, hi)])
    cum = np.cumsum(devs)
    target = np.maximum(decay * devs[0], floor) if devs.size else np.array([])
    hit = np.nonzero((devs <= target) & (hi <= x_end + 1e-12))[0]
    if devs.size == 0:
        verdict, at = "Inconclusive", None
    elif hit.size:
        verdict, at = "Pass", float(hi[hit[0]])
    else:
        verdict, at = ("Inconclusive" if state.phi > small_flux else "Fail"), None
    return {"slab_hi": hi, "deviation": devs, "noise_floor": floor, "cumulative": cum,
            "decayed_at": at, "x_end": x_end, "verdict": verdict}


def decay_rate_check(state, repar=None, t_grid=None, meter=None, kind="BetaStar", spread_tol=5.0,
                     interior=(0.25, 0.75)):
    """C(t) = f(t)^2 times the window energy over right-side windows on the interior grid."""
    meter = meter or EnergyMeter(state)
    dom = state.problem.domain
    prof = dom.profile
    if t_grid is None:
        t_grid = np.linspace(dom.b * interior[0], dom.b * interior[1], 21)
    t_grid = np.asarray(t_grid, dtype=float)
    C = np.full(t_grid.size, np.nan)
    notes = []
    for i, t in enumerate(t_grid):
        try:
            wins = energy_windows(prof, repar, float(t), kind)
        except DegenerateWindow as exc:
            notes.append(f"t={t:.6g}: skipped ({exc})")
            continue
        lo, hi = wins[-1]
        if lo < dom.a or hi > dom.b:
            notes.append(f"t={t:.6g}: window ({lo:.4g}, {hi:.4g}) outside the domain, skipped")
            continue
        C[i] = float(prof.width(t)) ** 2 * meter.window(lo, hi)["total_u"]
    spread = _ratio_spread(C)
    ok = np.isfinite(spread) and spread <= spread_tol
    return {"t": t_grid, "C": C, "spread": spread, "notes": notes,
            "verdict": "Pass" if ok else "Fail"}


# ---------------------------------------------------------------------------
# far-field conditions on the profile
# ---------------------------------------------------------------------------

def _side_condition(profile: ChannelProfile, side, t_lo=10.0, t_hi=1e5, npts=9):
    p = profile.width_power(side)
    out = {"side": side, "power": p}
    if p is None:
        out.update(label="Neither", note="asymptotics not extractable")
        return out
    diverges = 3.0 * p <= 1.0
    ts = side * np.geomspace(t_lo, t_hi, npts)
    fp = np.abs(np.asarray(profile.width_d1(ts), dtype=float)) * np.ones(npts)
    out["integral_diverges"] = diverges
    out["fprime"] = fp
    if p >= POWER_THRESHOLD:
        out["label"] = "Neither"
        return out
    if diverges:
        out["fprime_to_zero"] = bool(p < 1.0)
        out["label"] = "Cond_1_16" if p < 1.0 else "Neither"
        return out
    # convergent tail: sup_{tau >= t} |f'| / (int_t^inf f^-3)^(1/2) must vanish
    ratios = []
    for t in np.abs(ts):
        taus = side * np.geomspace(t, 1e3 * t, 400)
        sup_fp = float(np.max(np.abs(profile.width_d1(taus))))
        a, b = (t, math.inf) if side > 0 else (-math.inf, -t)
        tail = weight_integral(profile, a, b, -3.0)
        ratios.append(sup_fp / math.sqrt(tail))
    ratios = np.array(ratios)
    out["ratio"] = ratios
    out["ratio_to_zero"] = bool(ratios[-1] < 0.5 * ratios[0] and np.all(np.diff(ratios) <= 0))
    out["label"] = "Cond_1_17" if out["ratio_to_zero"] else "Neither"
    return out


def condition_check(profile: ChannelProfile):
    """Classify the far-field assumptions on both sides.

    For pure powers f ~ |t|^p the two conditions together amount to p < 3/5;
    ``power_law_consistent`` records whether the numerical labels agree.
    """
    sides = [_side_condition(profile, s) for s in (1, -1)]
    labels = [s["label"] for s in sides]
    if "Neither" in labels:
        label = "Neither"
    elif all(lb == "Cond_1_16" for lb in labels):
        label = "Cond_1_16"
    else:
        label = "Cond_1_17"
    consistent = all(
        s["power"] is None or ((s["power"] < POWER_THRESHOLD) == (s["label"] != "Neither"))
        for s in sides)
    return {"label": label, "sides": sides, "power_law_consistent": consistent}


# ---------------------------------------------------------------------------
# differential-inequality engine
# ---------------------------------------------------------------------------

@dataclass
class ComparisonProblem:
    """Samples of z and phi on a grid plus the majorant Psi(t, s).

    ``psi_power`` = (c0, m) declares Psi(s) <= c0 s^m (and equality when
    ``psi_exact_power``), which enables the closed-form comparison solution.
    """

    t: np.ndarray
    z: np.ndarray
    phi: np.ndarray | None
    psi: Callable
    delta1: float = 0.5
    psi_power: tuple | None = None
    psi_exact_power: bool = False

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.z = np.asarray(self.z, dtype=float)
        if self.phi is not None:
            self.phi = np.asarray(self.phi, dtype=float)
        if not 0.0 < self.delta1 < 1.0:
            raise ValueError("delta1 must lie in (0, 1)")
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("t grid must increase")
        s = np.linspace(0.0, 10.0, 101)
        tt = np.full_like(s, self.t[0])
        vals = np.asarray(self.psi(tt, s), dtype=float)
        if abs(vals[0]) > 0 or np.any(np.diff(vals) < 0):
            raise ValueError("Psi must vanish at s = 0 and increase in s")

    @classmethod
    def power_law(cls, t, z, phi, C1, delta1=0.5):
        """Psi(s) = C1 (s + s^{3/2}), majorised by 2 C1 s^{3/2} for s >= 1."""
        def psi(_t, s):
            s = np.maximum(np.asarray(s, dtype=float), 0.0)
            return C1 * (s + s**1.5)
        return cls(t, z, phi, psi, delta1, (2.0 * C1, 1.5))

    @classmethod
    def pure_power(cls, t, z, phi, c0, m=1.5, delta1=0.5):
        def psi(_t, s):
            s = np.maximum(np.asarray(s, dtype=float), 0.0)
            return c0 * s**m
        return cls(t, z, phi, psi, delta1, (c0, m), True)

    def derivative(self, y):
        return np.gradient(y, self.t, edge_order=2)

    def psi_inverse(self, t, r, s_max=1e12):
        """Smallest s >= 0 with Psi(t, s) >= r."""
        if r <= 0:
            return 0.0
        hi = 1.0
        while float(self.psi(t, hi)) < r:
            hi *= 2.0
            if hi > s_max:
                return math.inf
        return brentq(lambda s: float(self.psi(t, s)) - r, 0.0, hi, xtol=1e-14, rtol=1e-13)


@dataclass
class ComparisonVerdict:
    mode: str
    verdict: str
    index: int | None = None
    details: dict = field(default_factory=dict)


def comparison_coefficient(c0, m=1.5, delta1=1.0):
    """kappa with z(t) = kappa t^{m/(m-1)} solving z = delta1^{-1} c0 (z')^m."""
    c = c0 / delta1
    q = m / (m - 1.0)
    return c ** (-1.0 / (m - 1.0)) * ((m - 1.0) / m) ** q


def comparison_solution(t, c0, m=1.5, delta1=1.0):
    t = np.asarray(t, dtype=float)
    return comparison_coefficient(c0, m, delta1) * t ** (m / (m - 1.0))


def comparison_residual(t, c0, m=1.5, delta1=1.0):
    """Relative residual of z~ = delta1^{-1} c0 (z~')^m with the exact derivative."""
    t = np.asarray(t, dtype=float)
    k = comparison_coefficient(c0, m, delta1)
    q = m / (m - 1.0)
    z = k * t**q
    dz = k * q * t ** (q - 1.0)
    return np.abs(z - c0 / delta1 * dz**m) / np.abs(z)


def _first(mask):
    idx = np.nonzero(mask)[0]
    return int(idx[0]) if idx.size else None


def _hypotheses(pb: ComparisonProblem, slack):
    z, phi, t = pb.z, pb.phi, pb.t
    dz, dphi = pb.derivative(z), pb.derivative(phi)
    bad = []
    bad.append(z - pb.psi(t, dz) - (1.0 - pb.delta1) * phi > slack)          # (A4-1)
    bad.append(phi - pb.psi(t, dphi) / pb.delta1 < -slack)                   # (A4-2)
    for y in (z, phi):
        bad.append(y < -slack)
        bad.append(np.concatenate([[False], np.diff(y) < -slack]))
    mask = np.logical_or.reduce(bad)
    return _first(mask)


def compare_diff_ineq(problem: ComparisonProblem, mode="Part1", slack=1e-8) -> ComparisonVerdict:
    """Check the comparison lemma hypotheses on samples and assert its conclusion.

    Part1: hypotheses on the grid and z(T) <= phi(T), then z <= phi.
    Part2: Psi autonomous; hypotheses plus the tail condition, read as
    liminf z/phi < 1 or z/z~ -> 0 (the evident intent of the printed limit),
    then z <= phi.
    Part3: z <= Psi(z') with Psi(s) <= c0 s^m; reports the tail minimum of
    t^{-m/(m-1)} z against the closed-form comparison coefficient.
    Raises HypothesisViolated at the first failing grid index.
    """
    pb = problem
    if mode in ("Part1", "Part2"):
        if pb.phi is None:
            raise ValueError(f"{mode} needs phi samples")
        i = _hypotheses(pb, slack)
        if i is not None:
            raise HypothesisViolated(f"hypothesis fails at t = {pb.t[i]:.6g}", index=i)
        details = {}
        if mode == "Part1":
            if pb.z[-1] > pb.phi[-1] + slack:
                raise HypothesisViolated("z(T) > phi(T)", index=pb.t.size - 1)
        else:
            n = pb.t.size
            tail = slice(3 * n // 4, n)
            with np.errstate(divide="ignore", invalid="ignore"):
                zr = pb.z[tail] / pb.phi[tail]
            details["liminf_z_over_phi"] = float(np.nanmin(zr))
            cond = details["liminf_z_over_phi"] < 1.0
            if not cond and pb.psi_power is not None and pb.psi_exact_power:
                c0, m = pb.psi_power
                zt = comparison_solution(pb.t[tail], c0, m, pb.delta1)
                q = pb.z[tail] / zt
                details["z_over_ztilde"] = q.tolist()
                cond = bool(q[-1] < 0.5 * q[0] and np.all(np.diff(q) <= slack))
            if not cond:
                raise HypothesisViolated("tail condition of the second part not met", index=n - 1)
        j = _first(pb.z > pb.phi + slack)
        if j is not None:
            return ComparisonVerdict(mode, "Fail", j, details)
        return ComparisonVerdict(mode, "Pass", None, details)
    if mode == "Part3":
        if pb.psi_power is None:
            raise ValueError("Part3 needs psi_power = (c0, m)")
        c0, m = pb.psi_power
        dz = pb.derivative(pb.z)
        i = _first((pb.z - pb.psi(pb.t, dz) > slack) | (pb.z < -slack))
        if i is not None:
            raise HypothesisViolated(f"z > Psi(z') at t = {pb.t[i]:.6g}", index=i)
        q = pb.z * pb.t ** (-m / (m - 1.0))
        n = pb.t.size
        lim = float(np.min(q[n // 2:]))
        kappa = comparison_coefficient(c0, m)
        details = {"liminf_estimate": lim, "comparison_coefficient": kappa,
                   "ratio": lim / kappa}
        return ComparisonVerdict(mode, "Pass" if lim > 0 else "Fail", None, details)
    raise ValueError(f"unknown mode {mode!r}")


def barrier_oracle(problem: ComparisonProblem, slack=1e-8):
    """Backward integration of w' = Psi^{-1}(w - (1 - delta1) phi), w(T) = phi(T).

    Any z obeying (A4-1) with z(T) <= w(T) stays below w; returns the barrier
    and the first grid index where z exceeds it (or None).
    """
    pb = problem
    t, phi = pb.t, pb.phi

    def rhs(s, w):
        ph = float(np.interp(s, t, phi))
        return [pb.psi_inverse(s, w[0] - (1.0 - pb.delta1) * ph)]

    sol = solve_ivp(rhs, (t[-1], t[0]), [phi[-1]], t_eval=t[::-1], rtol=1e-10, atol=1e-12,
                    max_step=float(np.min(np.diff(t))))
    w = sol.y[0][::-1]
    return w, _first(pb.z > w + slack)


# ---------------------------------------------------------------------------
# writers
# ---------------------------------------------------------------------------

def write_csv(path, columns: dict):
    keys = list(columns)
    n = max(len(np.atleast_1d(columns[k])) for k in keys)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(keys)
        for i in range(n):
            row = []
            for k in keys:
                col = np.atleast_1d(columns[k])
                val = col[i] if i < len(col) else ""
                row.append(repr(float(val)) if isinstance(val, (float, np.floating)) else val)
            wr.writerow(row)


def write_svg(path, series: Sequence[tuple], title="", xlabel="t", ylabel="", width=640, height=400):
    """Minimal SVG line chart; ``series`` holds (label, x, y) triples."""
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e")
    pad = 56
    xs = np.concatenate([np.asarray(s[1], float) for s in series]) if series else np.zeros(1)
    ys = np.concatenate([np.asarray(s[2], float) for s in series]) if series else np.zeros(1)
    ok = np.isfinite(xs) & np.isfinite(ys)
    x0, x1 = (float(xs[ok].min()), float(xs[ok].max())) if ok.any() else (0.0, 1.0)
    y0, y1 = (float(ys[ok].min()), float(ys[ok].max())) if ok.any() else (0.0, 1.0)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14">{title}</text>',
           f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
           f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
           f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="12">{xlabel}</text>',
           f'<text x="14" y="{height / 2}" font-size="12" transform="rotate(-90 14 {height / 2})" '
           f'text-anchor="middle">{ylabel}</text>',
           f'<text x="{pad}" y="{height - pad + 16}" font-size="10">{x0:.4g}</text>',
           f'<text x="{width - pad}" y="{height - pad + 16}" font-size="10" text-anchor="end">{x1:.4g}</text>',
           f'<text x="{pad - 4}" y="{height - pad}" font-size="10" text-anchor="end">{y0:.4g}</text>',
           f'<text x="{pad - 4}" y="{pad + 4}" font-size="10" text-anchor="end">{y1:.4g}</text>']
    for k, (label, x, y) in enumerate(series):
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        good = np.isfinite(x) & np.isfinite(y)
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[good], y[good]))
        c = colors[k % len(colors)]
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        out.append(f'<text x="{width - pad}" y="{pad + 14 * k}" font-size="11" fill="{c}" '
                   f'text-anchor="end">{label}</text>')
    out.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(out) + "\n")
