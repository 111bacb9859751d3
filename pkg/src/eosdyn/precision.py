"""Working-precision helpers shared by the formula modules.

Formulas are written once with ordinary arithmetic operators. Inputs that are
``mpmath`` numbers (from :func:`ext`) are carried through in extended
precision; floats and numpy arrays stay in double precision.
"""

import mpmath
import numpy as np

EXTENDED_DPS = 40

# private context so the global mpmath precision is never touched
ctx = mpmath.MPContext()
ctx.dps = EXTENDED_DPS


def ext(v):
    """Lift a float (or string/int) into the extended-precision context."""
    return ctx.mpf(v)


def is_ext(v) -> bool:
    return isinstance(v, ctx.mpf)


def sqrt(v):
    if is_ext(v):
        return ctx.sqrt(v)
    return np.sqrt(v)


def quarter_root(v):
    if is_ext(v):
        return ctx.sqrt(ctx.sqrt(v))
    return np.sqrt(np.sqrt(v))


def exp(v):
    if is_ext(v):
        return ctx.exp(v)
    return np.exp(v)


def frac(p: int, q: int, like=None):
    """Exact rational constant p/q in the precision of ``like``."""
    if like is not None and is_ext(like):
        return ctx.mpf(p) / q
    return p / q


def lift(values, precision: str):
    """Convert a tuple of numbers into the requested precision mode."""
    if precision == "extended":
        return tuple(ext(v) for v in values)
    if precision == "double":
        return tuple(float(v) if np.ndim(v) == 0 else np.asarray(v, dtype=float) for v in values)
    raise ValueError(f"unknown precision mode {precision!r}")
