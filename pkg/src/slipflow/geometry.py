"""Channel domains {f1(x1) < x2 < f2(x1)}, standing-assumption checks and the
width-adapted reparametrization used to build energy windows."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from scipy.interpolate import PchipInterpolator

from .errors import (
    BetaZero,
    DegenerateWindow,
    DerivativeBoundViolated,
    HorizonTooShort,
    NonMonotoneK,
    NonPositiveWidth,
    QuadratureNotConverged,
)
from .formula import Formula

DEFAULT_SAMPLE = np.linspace(-60.0, 60.0, 24001)


@dataclass(frozen=True, eq=False)
class ChannelProfile:
    """Lower/upper wall graphs plus the declared standing-assumption constants.

    ``d`` is the lower bound of the width, ``beta`` the bound on |f_i'| and
    ``gamma_pp`` the bound on |f_i'' f|.
    """

    f1: Formula
    f2: Formula
    d: float
    beta: float
    gamma_pp: float

    @classmethod
    def from_expressions(cls, f1, f2, d=None, beta=None, gamma_pp=None, sample=None):
        """Build a profile; undeclared constants are measured on ``sample``."""
        f1, f2 = Formula(f1), Formula(f2)
        grid = DEFAULT_SAMPLE if sample is None else np.asarray(sample, dtype=float)
        width = f2(grid) - f1(grid)
        if d is None:
            d = float(width.min())
        if beta is None:
            beta = float(max(np.abs(f1.d1(grid)).max(), np.abs(f2.d1(grid)).max()))
            if beta < 1e-14:
                beta = 0.0
        if gamma_pp is None:
            gamma_pp = float(max(np.abs(f1.d2(grid) * width).max(),
                                 np.abs(f2.d2(grid) * width).max()))
        return cls(f1, f2, float(d), float(beta), float(gamma_pp))

    @classmethod
    def symmetric(cls, half_width, **kw):
        """Channel -w(x) < x2 < w(x)."""
        w = Formula(half_width)
        return cls.from_expressions(f"-({w.text})", w.text, **kw)

    # width f = f2 - f1 and midline fbar = (f1 + f2)/2
    def width(self, x):
        return self.f2(x) - self.f1(x)

    def width_d1(self, x):
        return self.f2.d1(x) - self.f1.d1(x)

    def width_d2(self, x):
        return self.f2.d2(x) - self.f1.d2(x)

    def mid(self, x):
        return 0.5 * (self.f1(x) + self.f2(x))

    def mid_d1(self, x):
        return 0.5 * (self.f1.d1(x) + self.f2.d1(x))

    def mid_d2(self, x):
        return 0.5 * (self.f1.d2(x) + self.f2.d2(x))

    @property
    def beta_star(self):
        if self.beta <= 0.0:
            raise BetaZero("beta = 0: beta* = 1/(4 beta) is undefined")
        return 1.0 / (4.0 * self.beta)

    @property
    def is_straight(self):
        return self.f1.is_constant and self.f2.is_constant

    def wall_curvature_sup(self, grid=None):
        """sup over both walls of |f_i''| / (1 + f_i'^2)^{3/2}."""
        if self.is_straight:
            return 0.0
        grid = DEFAULT_SAMPLE if grid is None else grid
        out = 0.0
        for fi in (self.f1, self.f2):
            k = np.abs(fi.d2(grid)) / (1.0 + fi.d1(grid) ** 2) ** 1.5
            out = max(out, float(k.max()))
        return out

    def width_power(self, side=1):
        """Leading power p of f ~ |x|^p at +inf (side=1) or -inf (side=-1)."""
        return self.f2.combine(self.f1, "-").leading_power(side)


@dataclass
class ValidationReport:
    inf_width: float
    sup_slope: float
    sup_fpp_f: float
    d_ok: bool
    beta_ok: bool
    gamma_ok: bool

    @property
    def passed(self):
        return self.d_ok and self.beta_ok and self.gamma_ok


def validate_profile(profile: ChannelProfile, x1_grid) -> ValidationReport:
    grid = np.asarray(x1_grid, dtype=float)
    if grid.size == 0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be nonempty and strictly increasing")
    width = profile.width(grid)
    if np.any(width <= 0):
        i = int(np.argmax(width <= 0))
        raise NonPositiveWidth(f"f(x1) = {width[i]:.3g} <= 0 at x1 = {grid[i]:.6g}")
    slope = max(np.abs(profile.f1.d1(grid)).max(), np.abs(profile.f2.d1(grid)).max())
    fppf = max(np.abs(profile.f1.d2(grid) * width).max(),
               np.abs(profile.f2.d2(grid) * width).max())
    if slope > profile.beta * (1 + 1e-12) + 1e-300:
        raise DerivativeBoundViolated(
            f"measured sup|f_i'| = {slope:.12g} exceeds declared beta = {profile.beta:.12g}")
    return ValidationReport(
        inf_width=float(width.min()),
        sup_slope=float(slope),
        sup_fpp_f=float(fppf),
        d_ok=bool(width.min() >= profile.d * (1 - 1e-12)),
        beta_ok=True,
        gamma_ok=bool(fppf <= profile.gamma_pp * (1 + 1e-12) + 1e-300),
    )


def _quad(fn, a, b, epsrel=1e-12):
    val, err, info = _quad_full(fn, a, b, epsrel)
    if info:
        raise QuadratureNotConverged(f"quad on [{a}, {b}] did not converge (est. error {err:.2e})")
    return val


def _quad_full(fn, a, b, epsrel):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        out = integrate.quad(fn, a, b, epsabs=0.0, epsrel=epsrel, limit=200, full_output=1)
    val, err = out[0], out[1]
    # ier > 0 shows up as a 4th item (message); keep the estimate honest
    failed = len(out) > 3 and abs(err) > 1e-10 * max(abs(val), 1e-300)
    return val, err, failed


def weight_integral(profile: ChannelProfile, a, b, power=-3.0):
    """Integral of f(t)^power over [a, b]."""
    if a > b:
        raise ValueError("need a <= b")
    if a == b:
        return 0.0
    fn = lambda t: profile.width(t) ** power  # noqa: E731
    if math.isinf(a) or math.isinf(b):
        return _semi_infinite(fn, profile, a, b, power)
    n = max(1, int(math.ceil((b - a) / 2.0)))
    edges = np.linspace(a, b, n + 1)
    return float(sum(_quad(fn, lo, hi) for lo, hi in zip(edges[:-1], edges[1:])))


U_CAP = 300.0  # |t| = e^300 keeps t^2 finite in double precision


def _semi_infinite(fn, profile, a, b, power):
    """Infinite ranges split at |t| = c >= 1; the tails use t = +-e^u, so
    algebraic decay becomes exponential in u.  Beyond u = U_CAP the remainder
    is closed with the local exponential rate (exact for pure power laws)."""
    if math.isinf(a) and math.isinf(b):
        return _semi_infinite(fn, profile, a, 0.0, power) + _semi_infinite(fn, profile, 0.0, b, power)
    sign = 1.0 if math.isinf(b) else -1.0
    end = a if sign > 0 else b
    c = max(sign * end, 1.0)
    head = weight_integral(profile, min(sign * c, end), max(sign * c, end), power) if c > sign * end else 0.0

    def g(u):
        return float(fn(sign * math.exp(u))) * math.exp(u)

    lo = math.log(c)
    hi = max(U_CAP, lo + 10.0)
    body = _quad(g, lo, hi)
    g_hi = g(hi)
    rate = math.log(g(hi - 1.0)) - math.log(g_hi) if g_hi > 0 else math.inf
    if rate <= 0:
        raise QuadratureNotConverged(f"integral of f^{power:g} diverges at {sign * math.inf}")
    return head + body + g_hi / rate


CASES = ("BothInfinite", "BothFinite", "LeftFinite", "RightFinite", "FiniteHorizonUnknown")


def classify_case(profile: ChannelProfile):
    """Decide which sides of k(t) = int_0^t f^{-5/3} stay bounded."""
    sides = []
    for side in (-1, 1):
        p = profile.width_power(side)
        if p is None or abs(5.0 * p / 3.0 - 1.0) < 1e-12:
            return "FiniteHorizonUnknown"
        sides.append(5.0 * p / 3.0 > 1.0)   # True => integral converges on that side
    left_finite, right_finite = sides
    if left_finite and right_finite:
        return "BothFinite"
    if left_finite:
        return "LeftFinite"
    if right_finite:
        return "RightFinite"
    return "BothInfinite"


class Reparametrization:
    """k(t) = int_0^t f^{-5/3}, its inverse h and the shifted inverses h_L, h_R."""

    def __init__(self, profile: ChannelProfile, t_max: float, n: int = 2001):
        if t_max <= 0:
            raise ValueError("t_max must be positive")
        self.profile = profile
        self.t_max = float(t_max)
        self._integrand = lambda t: profile.width(t) ** (-5.0 / 3.0)
        n += 1 - n % 2   # odd, so that t = 0 is a grid point
        self.t_grid = np.linspace(-t_max, t_max, n)
        steps = np.array([_quad(self._integrand, lo, hi)
                          for lo, hi in zip(self.t_grid[:-1], self.t_grid[1:])])
        cum = np.concatenate([[0.0], np.cumsum(steps)])
        self.k_grid = cum - cum[n // 2]
        if np.any(np.diff(self.k_grid) <= 0):
            raise NonMonotoneK("tabulated k(t) is not strictly increasing")
        self._h_guess = PchipInterpolator(self.k_grid, self.t_grid)
        self.case_tag = classify_case(profile)
        self.L = self.R = None
        if self.case_tag in ("BothFinite", "LeftFinite"):
            self.L = _quad(self._integrand, -np.inf, 0.0)
        if self.case_tag in ("BothFinite", "RightFinite"):
            self.R = _quad(self._integrand, 0.0, np.inf)
        self.t_star = None
        self.t_hat = None
        if profile.beta > 0:
            self._thresholds()

    # k and its inverse -------------------------------------------------
    def k(self, t):
        t = np.asarray(t, dtype=float)
        flat = np.atleast_1d(t).ravel()
        out = np.empty_like(flat)
        for j, tj in enumerate(flat):
            i = int(np.clip(np.searchsorted(self.t_grid, tj) - 1, 0, len(self.t_grid) - 2))
            if abs(tj - self.t_grid[i]) > abs(tj - self.t_grid[i + 1]):
                i += 1
            out[j] = self.k_grid[i] + (_quad(self._integrand, self.t_grid[i], tj)
                                       if tj != self.t_grid[i] else 0.0)
        return out.reshape(t.shape) if t.ndim else float(out[0])

    @property
    def k_range(self):
        return float(self.k_grid[0]), float(self.k_grid[-1])

    def h(self, s):
        s = np.asarray(s, dtype=float)
        lo, hi = self.k_range
        if np.any(s < lo - 1e-14) or np.any(s > hi + 1e-14):
            raise HorizonTooShort(f"h evaluated outside tabulated range [{lo:.6g}, {hi:.6g}]")
        t = np.asarray(self._h_guess(np.clip(s, lo, hi)), dtype=float)
        for _ in range(3):
            t = t - (self.k(t) - s) * self.profile.width(t) ** (5.0 / 3.0)
        return t if s.ndim else float(t)

    def hL(self, t):
        x = self.h(-np.asarray(t, dtype=float))
        return x + self.profile.beta_star * self.profile.width(x)

    def hR(self, t):
        x = self.h(np.asarray(t, dtype=float))
        return x - self.profile.beta_star * self.profile.width(x)

    @property
    def hat_horizon(self):
        """Largest t with both h(t) and h(-t) tabulated."""
        lo, hi = self.k_range
        return min(-lo, hi)

    def _thresholds(self):
        ts = np.linspace(0.0, self.hat_horizon, 801)
        gap = self.hL(ts) - self.hR(ts)
        below = np.nonzero(gap < 0)[0]
        if below.size:
            j = below[0]
            self.t_star = _bisect(lambda t: self.hL(t) - self.hR(t), ts[j - 1], ts[j])
        elif self.case_tag == "BothInfinite":
            raise HorizonTooShort("h_L(t) >= h_R(t) on the whole tabulated range; increase t_max")
        ts = np.linspace(0.0, self.k_range[1], 801)
        hr = self.hR(ts)
        pos = np.nonzero(hr > 0)[0]
        if pos.size:
            j = pos[0]
            self.t_hat = _bisect(lambda t: -self.hR(t), ts[j - 1], ts[j])


def _bisect(fn, a, b, tol=1e-10):
    """Root of fn with fn(a) >= 0 > fn(b) (sup of the set where fn >= 0)."""
    for _ in range(200):
        if b - a <= tol:
            break
        m = 0.5 * (a + b)
        if fn(m) >= 0:
            a = m
        else:
            b = m
    return 0.5 * (a + b)


def build_reparametrization(profile: ChannelProfile, t_max: float, n: int = 2001):
    return Reparametrization(profile, t_max, n)


@dataclass(frozen=True, eq=False)
class TruncatedDomain:
    profile: ChannelProfile
    a: float
    b: float

    def __post_init__(self):
        if not self.b > self.a:
            raise ValueError("truncation needs a < b")

    def section(self, x1):
        return self.profile.f1(x1), self.profile.f2(x1)

    def contains(self, x1, x2):
        x1 = np.asarray(x1, dtype=float)
        return (x1 > self.a) & (x1 < self.b) & (x2 > self.profile.f1(x1)) & (x2 < self.profile.f2(x1))

    @property
    def length(self):
        return self.b - self.a

    def area(self):
        return weight_integral(self.profile, self.a, self.b, power=1.0)


def energy_windows(profile: ChannelProfile, repar, t, kind="Unit"):
    """Energy-measurement windows as a list of (lo, hi) abscissa pairs."""
    if kind == "Unit":
        wins = [(-t, -t + 1.0), (t - 1.0, t)]
    elif kind == "Hat":
        if profile.beta <= 0:
            raise BetaZero("Hat windows need beta > 0; straight channels use Unit windows")
        wins = [(float(repar.h(-t)), float(repar.hL(t))), (float(repar.hR(t)), float(repar.h(t)))]
        # below t* the windows cross and the region (h_L(t), h_R(t)) between them is empty
        if not wins[1][0] > wins[0][1]:
            raise DegenerateWindow(f"h_R(t) <= h_L(t) at t = {t:.6g} (t below t*)")
    elif kind == "BetaStar":
        if profile.beta <= 0:
            wins = [(t - 1.0, t)]
        else:
            wins = [(t - profile.beta_star * float(profile.width(t)), t)]
    else:
        raise ValueError(f"unknown window kind {kind!r}")
    for lo, hi in wins:
        if not hi > lo:
            raise DegenerateWindow(f"window ({lo:.6g}, {hi:.6g}) has non-positive length")
    return wins
