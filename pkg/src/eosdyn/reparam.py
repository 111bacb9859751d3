"""Coordinate changes (x, y) <-> (c, d) <-> (a, b) and quantities defined on them.

c = sqrt(x^2 - y^2) measures the position along the minima manifold, d = xy the
offset across it.  (a, b) shifts (c, d) so that the eta-EoS minimum sits at the
origin: a = c - (eta^-2 - 4)^(1/4), b = d - 1.  Throughout, kappa = sqrt(eta).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import precision as P
from .scalar_model import DomainError, XYState


@dataclass(frozen=True)
class CDState:
    c: float
    d: float


@dataclass(frozen=True)
class ABState:
    a: float
    b: float


def _positive(v) -> bool:
    return bool(np.all(np.asarray(v > 0)))


def xy_to_cd(s: XYState) -> CDState:
    if not (_positive(s.y) and _positive(s.x - s.y)):
        raise DomainError("(c, d) coordinates need x > y > 0")
    return CDState(P.sqrt((s.x - s.y) * (s.x + s.y)), s.x * s.y)


def cd_to_xy(s: CDState) -> XYState:
    if not (_positive(s.c) and _positive(s.d)):
        raise DomainError("(x, y) recovery needs c > 0 and d > 0")
    c2 = s.c * s.c
    x = P.sqrt((c2 + P.sqrt(c2 * c2 + 4 * s.d * s.d)) / 2)
    return XYState(x, s.d / x)


def c_center(eta):
    """(eta^-2 - 4)^(1/4): the c-coordinate of the eta-EoS minimum."""
    if not (0 < eta < 0.5):
        raise DomainError("the reparameterisation needs 0 < eta < 1/2")
    return P.quarter_root(eta ** -2 - 4)


def c_center_kappa(kappa):
    """Same centre written in kappa: (kappa^-4 - 4)^(1/4) = (1 - 4 kappa^4)^(1/4) / kappa."""
    k4 = kappa ** 4
    return P.quarter_root(1 - 4 * k4) / kappa


def cd_to_ab(s: CDState, eta) -> ABState:
    return ABState(s.c - c_center(eta), s.d - 1)


def ab_to_cd(s: ABState, eta) -> CDState:
    return CDState(s.a + c_center(eta), s.b + 1)


def xy_to_ab(s: XYState, eta) -> ABState:
    return cd_to_ab(xy_to_cd(s), eta)


def ab_to_xy(s: ABState, eta) -> XYState:
    return cd_to_xy(ab_to_cd(s, eta))


def xi(ab: ABState, kappa):
    """Signed residual from the attracting parabola b^2 = a kappa / 2 + kappa^4 / 16."""
    return ab.b * ab.b - ab.a * kappa / 2 - kappa ** 4 / 16


def delta_exact(ab: ABState, kappa):
    """delta = kappa^2 (x^2 + y^2), written in (a, b)."""
    k4 = kappa ** 4
    u = ab.a * kappa + P.quarter_root(1 - 4 * k4)
    return P.sqrt(4 * k4 * (1 + ab.b) ** 2 + u ** 4)


def delta_taylor(ab: ABState, kappa):
    """Expansion of delta through order kappa^4."""
    a, b = ab.a, ab.b
    return 1 + 2 * a * kappa + a * a * kappa * kappa + 2 * b * (2 + b) * kappa ** 4


class ODEFamily(enum.Enum):
    ELLIPSE = "Ellipse"
    EXPONENTIAL = "Exponential"
    PARABOLA = "ParabolaFamily"


def ode_family(regime: ODEFamily, gamma, d, eta):
    """Closed-form solution families of the 2-step flow, positive branch.

    Here ``c`` is the across-manifold offset and ``d`` the along-manifold
    offset (the roles of b and a in the (a, b) coordinates).
    Ellipse: c = sqrt(2/eta) sqrt(gamma - d^2); Exponential: c = gamma exp(4 d eta^-3/2);
    Parabola family: c^2 = d eta^1/2 / 2 + eta^2 / 16 + gamma exp(8 d eta^-3/2).
    """
    regime = ODEFamily(regime)
    if regime is ODEFamily.ELLIPSE:
        rad = gamma - d * d
        if np.any(np.asarray(rad < 0)):
            raise DomainError("ellipse family needs gamma >= d^2")
        return P.sqrt(2 / eta) * P.sqrt(rad)
    if regime is ODEFamily.EXPONENTIAL:
        return gamma * P.exp(4 * d * eta ** -1.5)
    rad = d * P.sqrt(eta) / 2 + eta * eta / 16
    if np.any(np.asarray(gamma != 0)):  # keeps 0 * exp(overflow) out of the gamma = 0 member
        rad = rad + gamma * P.exp(8 * d * eta ** -1.5)
    if np.any(np.asarray(rad < 0)):
        raise DomainError("negative radicand in the parabola family")
    return P.sqrt(rad)
