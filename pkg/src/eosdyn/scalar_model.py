"""Gradient descent on the coupled degree-4 scalar model L(x, y) = 1/4 (1 - x^2 y^2)^2.

The model is the 4-parameter product loss 1/2 (1 - xyzw)^2 with the coupling
z = x, w = y, so the Hessian (and the sharpness) is that of the 4-variable loss
evaluated at a coupled point.  A degree-2 contrast model 1/2 (1 - xy)^2 is
included for comparison experiments.

All functions accept floats, numpy arrays or extended-precision numbers from
:mod:`eosdyn.precision`; the arithmetic is carried out in whatever precision the
inputs carry.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import precision as P

DIVERGENCE_GUARD = 1e12


class DomainError(ValueError):
    """Raised when an input lies outside the domain of a closed form."""


@dataclass(frozen=True)
class XYState:
    x: float
    y: float


@dataclass(frozen=True)
class StepSize:
    eta: float

    def __post_init__(self):
        if not self.eta > 0:
            raise DomainError("step size must be positive")

    @property
    def kappa(self):
        return P.sqrt(self.eta)


def loss(s: XYState):
    p = s.x * s.y
    return 0.25 * (1 - p * p) ** 2


def gradient(s: XYState):
    x, y = s.x, s.y
    r = x * x * y * y - 1
    return x * y * y * r, x * x * y * r


def gd_step(s: XYState, eta) -> XYState:
    """One simultaneous GD step from (x_t, y_t)."""
    x, y = s.x, s.y
    r = eta * (x * x * y * y - 1)
    return XYState(x - r * x * y * y, y - r * x * x * y)


def hessian_eigenvalues(s: XYState):
    """Eigenvalues (l1, l2, l3, l4) of the 4-variable Hessian at a coupled point.

    l1 >= l2 are the pair coupling the two directions that move xy; l3 and l4
    belong to the antisymmetric directions and equal
    x^2 (1 - g^2), y^2 (1 - g^2) with g = xy, so they vanish on the minima manifold.
    """
    x, y = s.x, s.y
    g = x * y
    g2 = g * g
    n = x * x + y * y
    m = n * (3 * g2 - 1)
    disc = n * n * (1 - 3 * g2) ** 2 + 4 * g2 * (3 - 10 * g2 + 7 * g2 * g2)
    if not P.is_ext(disc):
        disc = np.maximum(disc, 0.0)
    root = P.sqrt(disc)
    return 0.5 * (m + root), 0.5 * (m - root), x * x * (1 - g2), y * y * (1 - g2)


def sharpness(s: XYState):
    return hessian_eigenvalues(s)[0]


def eos_minimum(eta) -> XYState:
    """The global minimum whose sharpness equals exactly 2/eta.

    Requires 0 < eta < 1/2; at eta = 1/2 the manifold's flattest point
    already has sharpness 4 = 2/eta and the inner root degenerates.
    """
    if not (0 < eta < 0.5):
        raise DomainError("EoS minimum requires 0 < eta < 1/2")
    w = P.sqrt(eta ** -2 - 4) + 1 / eta
    r = P.sqrt(w)
    return XYState(r / P.sqrt(2 * P.frac(1, 1, eta)), P.sqrt(2 * P.frac(1, 1, eta)) / r)


# degree-2 contrast model 1/2 (1 - xy)^2


def degree2_loss(s: XYState):
    return 0.5 * (1 - s.x * s.y) ** 2


def degree2_gd_step(s: XYState, eta) -> XYState:
    r = eta * (1 - s.x * s.y)
    return XYState(s.x + r * s.y, s.y + r * s.x)


def degree2_sharpness(s: XYState):
    """Top eigenvalue of the 2x2 Hessian [[y^2, 2xy-1], [2xy-1, x^2]]."""
    x, y = s.x, s.y
    off = 2 * x * y - 1
    return 0.5 * (x * x + y * y + P.sqrt((x * x - y * y) ** 2 + 4 * off * off))


def degree2_eos_minimum(eta) -> XYState:
    """Point of xy = 1 with x > y and sharpness x^2 + y^2 = 2/eta (needs eta < 1)."""
    if not (0 < eta < 1):
        raise DomainError("degree-2 EoS minimum requires 0 < eta < 1")
    x2 = (1 + P.sqrt(1 - eta * eta)) / eta
    x = P.sqrt(x2)
    return XYState(x, 1 / x)


# trajectory runner


class StopReason(enum.Enum):
    CONVERGED = "Converged"
    DIVERGED = "Diverged"
    MAX_STEPS = "MaxSteps"


@dataclass(frozen=True)
class StopSpec:
    eps_stop: float | None = None  # stop once loss < eps_stop
    guard: float = DIVERGENCE_GUARD
    record_every: int = 1


@dataclass
class TrajectoryList:
    eta: float
    steps: list = field(default_factory=list)
    x: list = field(default_factory=list)
    y: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    sharpness: list = field(default_factory=list)
    stop_reason: StopReason = StopReason.MAX_STEPS
    final: XYState | None = None
    n_steps: int = 0

    def states(self):
        return [XYState(x, y) for x, y in zip(self.x, self.y)]


def _diverged(s: XYState, guard) -> bool:
    x, y = float(s.x), float(s.y)
    return not (np.isfinite(x) and np.isfinite(y)) or abs(x) > guard or abs(y) > guard


def run_trajectory(s0: XYState, eta, max_steps: int, stop: StopSpec = StopSpec(),
                   step_fn=gd_step, loss_fn=loss, sharp_fn=sharpness) -> TrajectoryList:
    """Iterate ``step_fn`` recording loss and sharpness.

    Stops on loss < ``stop.eps_stop``, on divergence (non-finite or beyond the
    guard) or after ``max_steps`` updates.  Step t is recorded before the
    t-th update is applied, so a run that starts converged has one record.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    traj = TrajectoryList(eta=eta)
    s = s0
    t = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while True:
            if _diverged(s, stop.guard):
                traj.stop_reason = StopReason.DIVERGED
                break
            ls = loss_fn(s)
            done = stop.eps_stop is not None and ls < stop.eps_stop
            if done or t == max_steps or t % stop.record_every == 0:
                traj.steps.append(t)
                traj.x.append(s.x)
                traj.y.append(s.y)
                traj.loss.append(ls)
                traj.sharpness.append(sharp_fn(s))
            if done:
                traj.stop_reason = StopReason.CONVERGED
                break
            if t == max_steps:
                traj.stop_reason = StopReason.MAX_STEPS
                break
            s = step_fn(s, eta)
            t += 1
    traj.final = s
    traj.n_steps = t
    return traj


def run_batch(x0, y0, eta, steps: int, guard: float = DIVERGENCE_GUARD, degree: int = 4):
    """Vectorised fixed-length runs over arrays of initial points (double precision).

    Returns final (x, y) arrays and a boolean diverged mask; diverged entries are
    frozen at the first out-of-guard value.
    """
    x = np.array(x0, dtype=float, copy=True)
    y = np.array(y0, dtype=float, copy=True)
    dead = np.zeros(x.shape, dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for t in range(steps):
            if degree == 4:
                r = eta * (x * x * y * y - 1)
                xn, yn = x - r * x * y * y, y - r * x * x * y
            else:
                r = eta * (1 - x * y)
                xn, yn = x + r * y, y + r * x
            x = np.where(dead, x, xn)
            y = np.where(dead, y, yn)
            if t % 64 == 0 or t == steps - 1:
                bad = ~(np.isfinite(x) & np.isfinite(y)) | (np.abs(x) > guard) | (np.abs(y) > guard)
                dead |= bad
    return x, y, dead
