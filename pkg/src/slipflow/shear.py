"""Shear flows U(x2) e1 in the straight channel (-1, 1) with Navier slip.

Two conventions are kept side by side.  ``PaperFormula`` uses the printed
coefficients, which satisfy U'(1) + alpha U(1) = 0.  ``WeakFormConsistent``
satisfies U'(1)/2 + alpha U(1) = 0, i.e. the balance implied by the weak form
with boundary term 2 alpha * int u.phi; this is the one the discrete solver
reproduces and therefore the default.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

WEAK = "WeakFormConsistent"
PAPER = "PaperFormula"


@dataclass(frozen=True)
class ShearFlow:
    phi: float
    alpha: float
    convention: str
    a0: float
    b0: float

    @property
    def pressure_slope(self):
        # -U'' + dP/dx1 = 0 with U'' = -2 b0 Phi
        return -2.0 * self.b0 * self.phi

    def __call__(self, x2):
        return self.phi * (self.a0 - self.b0 * np.asarray(x2, dtype=float) ** 2)

    def d1(self, x2):
        return -2.0 * self.phi * self.b0 * np.asarray(x2, dtype=float)

    def d2(self, x2):
        return np.full_like(np.asarray(x2, dtype=float), -2.0 * self.phi * self.b0)

    def flux(self):
        return self.phi * (2.0 * self.a0 - 2.0 * self.b0 / 3.0)

    def dirichlet_density(self):
        """int_{-1}^{1} |U'|^2 dx2 (energy per unit channel length)."""
        return 8.0 * (self.phi * self.b0) ** 2 / 3.0

    def wall_density(self):
        """|U(1)|^2 + |U(-1)|^2 (wall term per unit channel length)."""
        return 2.0 * (self.phi * (self.a0 - self.b0)) ** 2


def shear_coefficients(alpha, convention=WEAK):
    """(a0, b0) as exact fractions when alpha is rational-friendly."""
    al = Fraction(alpha).limit_denominator(10**12) if np.isfinite(float(alpha)) else None
    if convention == PAPER:
        if al is None:
            return Fraction(3, 4), Fraction(3, 4)
        return Fraction(3) * (2 + al) / (4 * (3 + al)), Fraction(3) * al / (4 * (3 + al))
    if convention == WEAK:
        if al is None:
            return Fraction(3, 4), Fraction(3, 4)
        return Fraction(3) * (1 + al) / (2 * (3 + 2 * al)), Fraction(3) * al / (2 * (3 + 2 * al))
    raise ValueError(f"unknown convention {convention!r}")


def make_shear(phi, alpha, convention=WEAK) -> ShearFlow:
    if alpha < 0 or phi < 0:
        raise ValueError("need alpha >= 0 and Phi >= 0")
    a0, b0 = shear_coefficients(alpha, convention)
    return ShearFlow(float(phi), float(alpha), convention, float(a0), float(b0))


def shear_residual(flow: ShearFlow, theta):
    """(U'(1)/2 + theta U(1)/2, int U - Phi) for boundary coefficient theta."""
    r_bc = 0.5 * float(flow.d1(1.0)) + 0.5 * theta * float(flow(1.0))
    return r_bc, flow.flux() - flow.phi


def affine_shear(flow: ShearFlow, c1, c2):
    """Shear profile on (c1, c2) obtained by mapping (-1, 1) affinely (same flux)."""
    half = 0.5 * (c2 - c1)
    mid = 0.5 * (c1 + c2)

    def U(x2):
        return flow((np.asarray(x2) - mid) / half) / half

    def dU(x2):
        return flow.d1((np.asarray(x2) - mid) / half) / half**2
    return U, dU
