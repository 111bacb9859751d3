"""Batch experiments over the scalar and vector models, and the ``eosdyn`` command line.

Every experiment returns plain rows (lists of dicts).  The CLI wraps each in a
:class:`RunManifest`, writes the rows as CSV or JSON tagged with the manifest
id, and exits 0 when its asserted checks hold, 1 when one fails and 2 on a
usage error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import datetime
import hashlib
import io
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__
from . import precision as P
from .dynamics_approx import (DEFAULT_DELTA, DEFAULT_K, DOMINANT_TERMS, TERM_ORDERS, ConditionViolated,
                              LemmaId, residual_sweep, sample_rng, two_step_residuals)
from .reparam import ABState, CDState, c_center, cd_to_xy
from .scalar_model import (DIVERGENCE_GUARD, StopSpec, XYState, degree2_gd_step, eos_minimum, gd_step,
                           run_batch, run_trajectory, sharpness)
from .vector_model import VectorProtocolConfig, run_vector_batch

# ---------------------------------------------------------------- manifests and output

SCHEMAS = {
    "run": (1, ["step", "x", "y", "loss", "sharpness"]),
    "grid": (1, ["cell", "i", "j", "x0", "y0", "final_x", "final_y", "final_loss", "final_sharpness",
                 "initial_sharpness", "cls", "tight_window", "in_theorem_region"]),
    "adapt": (1, ["eta", "step", "loss", "sharpness", "terminal_sharpness", "in_window"]),
    "verify": (1, ["lemma", "kappa", "a", "b", "exact_next", "approx_next", "residual", "bound",
                   "ratio", "satisfied"]),
    "scaling": (1, ["quantity", "A", "B", "fitted_order", "expected_order"]),
    "cx": (1, ["kind", "kappa", "x", "y", "x_minus_c", "bound", "status"]),
    "vector": (1, ["seed", "status", "hit_time", "feasible_entry", "n_steps", "final_norm_sum",
                   "final_excess", "window_ok", "xi_monotone", "contraction_ok", "contraction_factor_ok",
                   "perturbation_exact", "perturbation_rel_err", "within_theorem"]),
    "sweep": (1, ["param", "value", "attractor", "period", "final_loss", "terminal_sharpness"]),
    "contrast": (1, ["model", "pair", "c", "d", "a", "b"]),
}


@dataclasses.dataclass
class RunManifest:
    command: str
    config: dict
    seed: int
    precision: str = "double"
    code_version: str = __version__
    timestamp: str = ""

    @property
    def schema(self):
        version, cols = SCHEMAS[self.command]
        return {"name": self.command, "version": version, "columns": ["manifest_id", *cols]}

    @property
    def id(self) -> str:
        # the timestamp is left out so identical runs share an id and identical bytes
        key = {"command": self.command, "config": self.config, "seed": self.seed,
               "precision": self.precision, "code_version": self.code_version, "schema": self.schema}
        blob = json.dumps(key, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def to_json(self) -> dict:
        d = dataclasses.asdict(self)
        d["id"] = self.id
        d["schema"] = self.schema
        return d


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def rows_to_csv(manifest: RunManifest, rows) -> str:
    cols = manifest.schema["columns"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([manifest.id] + [_cell(r.get(c)) for c in cols[1:]])
    return buf.getvalue()


def write_outputs(manifest: RunManifest, rows, out_dir, fmt="csv"):
    """Write the manifest JSON and the data file; returns their paths."""
    os.makedirs(out_dir, exist_ok=True)
    stem = f"{manifest.command}-{manifest.id}"
    mpath = os.path.join(out_dir, f"{stem}.manifest.json")
    with open(mpath, "w", encoding="utf-8") as f:
        json.dump(manifest.to_json(), f, indent=2, sort_keys=True, default=str)
    if fmt == "csv":
        dpath = os.path.join(out_dir, f"{stem}.csv")
        with open(dpath, "w", encoding="utf-8", newline="") as f:
            f.write(rows_to_csv(manifest, rows))
    else:
        dpath = os.path.join(out_dir, f"{stem}.json")
        cols = manifest.schema["columns"][1:]
        data = {"manifest_id": manifest.id, "rows": [{c: _jsonable(r.get(c)) for c in cols} for r in rows]}
        with open(dpath, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=1, sort_keys=True)
    return mpath, dpath


def _jsonable(v):
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def _pool_map(fn, items, workers=1):
    """Ordered map; results come back in input order whatever the completion order."""
    if workers <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------- sharpness concentration grid


@dataclasses.dataclass(frozen=True)
class GridSpec:
    x_range: tuple = (1.8, 3.2)
    y_range: tuple = (1 - 1 / 600, 1 + 1 / 600)
    nx: int = 50
    ny: int = 50
    eta: float = 0.2
    max_steps: int = 50_000
    eps_stop: float = 1e-10
    y_is_product: bool = True  # y_range holds x0*y0 rather than y0
    K: float = DEFAULT_K

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs nx, ny >= 1")
        if not all(math.isfinite(v) for v in (*self.x_range, *self.y_range)):
            raise ValueError("grid ranges must be finite")

    def points(self):
        xs = np.linspace(*self.x_range, self.nx)
        ys = np.linspace(*self.y_range, self.ny)
        X, Yv = np.meshgrid(xs, ys, indexing="ij")
        Y = Yv / X if self.y_is_product else Yv
        return X, Y


GRID_CLASSES = ("InWindow", "Flatter", "Sharper", "Diverged", "NonConverged")


def theorem_region_xy(x0, y0, eta, K=DEFAULT_K):
    """Initialisations covered by the (x, y) convergence guarantee.

    x0 in (x_eos + 13 kappa^(5/2), x_eos + K^-2 kappa^-1 / 5) and 0 < |x0 y0 - 1| < 1/K.
    """
    k = math.sqrt(eta)
    xb = float(eos_minimum(eta).x)
    b = np.abs(np.asarray(x0) * np.asarray(y0) - 1)
    x0 = np.asarray(x0)
    return (x0 > xb + 13 * k ** 2.5) & (x0 < xb + K ** -2 / k / 5) & (b > 0) & (b < 1 / K)


def theorem_region_ab(a, b, kappa, K=DEFAULT_K):
    """(a, b) initialisations of the convergence theorem: a in (12 kappa^(5/2), K^-2 kappa^-1 / 80), 0 < |b| < 1/K."""
    a = np.asarray(a)
    b = np.abs(np.asarray(b))
    return (a > 12 * kappa ** 2.5) & (a < K ** -2 / kappa / 80) & (b > 0) & (b < 1 / K)


def theorem_region_grid(x0, y0, eta, K=DEFAULT_K):
    """theorem_region_ab evaluated at (x0, y0); points off the x > y > 0 branch are outside."""
    x0, y0 = np.asarray(x0, dtype=float), np.asarray(y0, dtype=float)
    ok = (y0 > 0) & (x0 > y0)
    with np.errstate(invalid="ignore"):
        a = np.sqrt((x0 - y0) * (x0 + y0)) - float(c_center(eta))
    return ok & theorem_region_ab(np.where(ok, a, 0.0), x0 * y0 - 1, math.sqrt(eta), K)


def classify_sharpness(final_loss, final_sharp, dead, eta, eps_stop):
    """Exactly one of GRID_CLASSES per cell."""
    thr = 2 / eta
    lo = thr - 20 * eta / 3
    out = np.empty(np.shape(final_loss), dtype=object)
    conv = ~dead & (final_loss < eps_stop)
    out[:] = "NonConverged"
    out[dead] = "Diverged"
    out[conv & (final_sharp > lo) & (final_sharp < thr)] = "InWindow"
    out[conv & (final_sharp <= lo)] = "Flatter"
    out[conv & (final_sharp >= thr)] = "Sharper"
    return out


def _grid_chunk(args):
    x0, y0, eta, steps = args
    return run_batch(x0, y0, eta, steps)


def sharpness_concentration_grid(spec: GridSpec, workers: int = 1):
    X, Y = spec.points()
    parts = np.array_split(np.arange(X.size), max(1, workers))
    chunks = [(X.ravel()[p], Y.ravel()[p], spec.eta, spec.max_steps) for p in parts if p.size]
    res = _pool_map(_grid_chunk, chunks, workers)
    fx = np.concatenate([r[0] for r in res]).reshape(X.shape)
    fy = np.concatenate([r[1] for r in res]).reshape(X.shape)
    dead = np.concatenate([r[2] for r in res]).reshape(X.shape)
    with np.errstate(all="ignore"):
        p = fx * fy
        fl = 0.25 * (1 - p * p) ** 2
        fs = sharpness(XYState(fx, fy))
        s0 = sharpness(XYState(X, Y))
    fl = np.where(np.isfinite(fl), fl, np.inf)
    cls = classify_sharpness(fl, fs, dead, spec.eta, spec.eps_stop)
    thr = 2 / spec.eta
    tight = (cls == "InWindow") & (fs > thr - 0.1)
    region = theorem_region_grid(X, Y, spec.eta, spec.K)
    rows = []
    for i in range(spec.nx):
        for j in range(spec.ny):
            rows.append({"cell": i * spec.ny + j, "i": i, "j": j, "x0": X[i, j], "y0": Y[i, j],
                         "final_x": fx[i, j], "final_y": fy[i, j], "final_loss": fl[i, j],
                         "final_sharpness": fs[i, j], "initial_sharpness": s0[i, j], "cls": cls[i, j],
                         "tight_window": bool(tight[i, j]), "in_theorem_region": bool(region[i, j])})
    return rows


# ---------------------------------------------------------------- sharpness adaptivity


def sharpness_adaptivity(etas, init: XYState, steps: int = 50_000, eps_stop: float = 1e-10,
                         record_every: int = 100):
    """One trajectory per step size from the same init; terminal sharpness vs (2/eta - 20 eta/3, 2/eta)."""
    out = []
    for eta in etas:
        tr = run_trajectory(init, eta, steps, StopSpec(eps_stop=eps_stop, record_every=record_every))
        lam = float(sharpness(tr.final))
        ok = (tr.stop_reason.value == "Converged") and (2 / eta - 20 * eta / 3 < lam < 2 / eta)
        out.append({"eta": eta, "trace": tr, "terminal_sharpness": lam, "in_window": ok,
                    "stop_reason": tr.stop_reason.value})
    return out


def adaptive_region(alpha, K=DEFAULT_K):
    """Initial x0 interval shared by every step size in (alpha^2 (1 - K^-2/10), alpha^2)."""
    a = P.ext(alpha)
    K = P.ext(K)
    return 1 / a + K ** -2 / a / 15, 1 / a + K ** -2 / a / 6


def adaptive_region_check(alpha, K=DEFAULT_K, n_eta: int = 20):
    """Check the fixed region sits inside each step size's own guaranteed x0 interval.

    Evaluated in extended precision for n_eta step sizes spread over the open
    interval (alpha^2 - K^-2 alpha^2 / 10, alpha^2).
    """
    a = P.ext(alpha)
    Ke = P.ext(K)
    lo, hi = adaptive_region(alpha, K)
    e_lo, e_hi = a * a - Ke ** -2 * a * a / 10, a * a
    rows = []
    for i in range(1, n_eta + 1):
        eta = e_lo + (e_hi - e_lo) * i / (n_eta + 1)
        k = P.sqrt(eta)
        xb = eos_minimum(eta).x
        t_lo, t_hi = xb + 13 * k ** P.ext(2.5), xb + Ke ** -2 / k / 5
        rows.append({"eta": eta, "region": (lo, hi), "guaranteed": (t_lo, t_hi),
                     "included": bool(t_lo < lo and hi < t_hi)})
    return rows


# ---------------------------------------------------------------- residual studies


def residual_study(lemmas, kappa_range, samples: int, K=DEFAULT_K, delta=DEFAULT_DELTA, seed=0,
                   precision="extended", enforce_kappa=False):
    """Seeded residual-bound reports for each lemma; raises on an empty study."""
    lemmas = [LemmaId(lm) for lm in lemmas]
    if not lemmas or samples < 1:
        raise ValueError("residual study needs at least one lemma and one sample")
    out = []
    for lm in lemmas:
        out.extend(residual_sweep(lm, samples, kappa_range, K, delta, seed, precision, enforce_kappa))
    return out


def expected_orders():
    """Leading kappa-order of each residual on the scaling a ~ kappa^(5/2), b ~ kappa^(7/4)."""
    return {q: min(TERM_ORDERS[q][t] for t in terms) for q, terms in DOMINANT_TERMS.items()}


SCALING_POINTS = ((1.0, 1.0), (3.0, 0.5), (1.0, -1.0), (2.0, 2.0))


def residual_scaling(kappa_range=(0.01, 0.05), n_kappa: int = 9, scales=SCALING_POINTS,
                     precision="double"):
    """Fitted log-log order of |R_b|, |R_a|, |R_xi| against kappa at a = A kappa^(5/2), b = B kappa^(7/4)."""
    if n_kappa < 2:
        raise ValueError("need at least two kappa values to fit an order")
    ks = np.geomspace(*kappa_range, n_kappa)
    exp = expected_orders()
    rows = []
    for A, B in scales:
        res = {"b": [], "a": [], "xi": []}
        for k in ks:
            a, b, kk = P.lift((A * k ** 2.5, B * k ** 1.75, k), precision)
            rb, ra, rx = two_step_residuals(ABState(a, b), kk)
            for q, r in (("b", rb), ("a", ra), ("xi", rx)):
                res[q].append(abs(float(r)))
        for q, r in res.items():
            slope = float(np.polyfit(np.log(ks), np.log(np.asarray(r)), 1)[0])
            rows.append({"quantity": q, "A": A, "B": B, "fitted_order": slope, "expected_order": exp[q]})
    return rows


def cx_check_point(x, y, kappa, K=DEFAULT_K, enforce_kappa=False):
    """Status of c(x, y) in (x - 32 kappa^3, x): 'Pass', 'Fail' or 'Skipped' (outside the lemma's region)."""
    in_region = (math.sqrt(2) / 2 / kappa < x < 2 / kappa) and abs(1 - x * y) < 1 / K
    if enforce_kappa:
        in_region = in_region and kappa < 1 / (2000 * math.sqrt(2) * K)
    if not in_region:
        return "Skipped", None
    xe, ye = P.ext(x), P.ext(y)
    gap = ye * ye / (xe + P.sqrt(xe * xe - ye * ye))  # x - c without cancellation
    ok = 0 < gap < 32 * P.ext(kappa) ** 3
    return ("Pass" if ok else "Fail"), float(gap)


def x_eos_gap(kappa):
    """|x_eos - 1/kappa| in extended precision."""
    k = P.ext(kappa)
    return float(abs(eos_minimum(k * k).x - 1 / k))


def cx_approx_check(kappas, samples: int, K=DEFAULT_K, seed=0, enforce_kappa=False):
    """Per kappa: the x_eos gap, then x uniform in (sqrt(2)/2 / kappa, 2 / kappa) with x y within 1/K of 1."""
    rows = []
    for n, k in enumerate(kappas):
        rng = sample_rng(seed, 7, n)
        gap = x_eos_gap(k)
        rows.append({"kappa": k, "x": None, "y": None, "x_minus_c": gap, "bound": 36 * k ** 3,
                     "status": "Pass" if gap < 36 * k ** 3 else "Fail", "kind": "x_eos"})
        for _ in range(samples):
            x = rng.uniform(math.sqrt(2) / 2 / k, 2 / k)
            y = (1 + rng.uniform(-1, 1) / K) / x
            st, g = cx_check_point(x, y, k, K, enforce_kappa)
            rows.append({"kappa": k, "x": x, "y": y, "x_minus_c": g, "bound": 32 * k ** 3,
                         "status": st, "kind": "c"})
    return rows


# ---------------------------------------------------------------- bifurcation sweep


ATTRACTORS = ("FixedPoint", "Period2", "HigherPeriod", "Aperiodic", "Diverged")


def detect_period(seq, max_period: int = 64, rtol: float = 1e-9, atol: float = 1e-12):
    """Smallest p with seq[t + p] == seq[t] (within tolerance) over the whole window, else None."""
    s = np.asarray(seq, dtype=float)
    if not np.all(np.isfinite(s)):
        return None
    tol = atol + rtol * float(np.max(np.abs(s))) if s.size else atol
    for p in range(1, min(max_period, s.size - 1) + 1):
        if np.max(np.abs(s[p:] - s[:-p])) <= tol:
            return p
    return None


def attractor_name(period, diverged=False):
    if diverged:
        return "Diverged"
    if period is None:
        return "Aperiodic"
    return {1: "FixedPoint", 2: "Period2"}.get(period, "HigherPeriod")


def _sweep_chunk(args):
    param, values, base, steps, transient, window, max_period = args
    v = np.asarray(values, dtype=float)
    eta = v if param == "eta" else np.full(v.shape, base["eta"])
    x = v.copy() if param == "x0" else np.full(v.shape, base["x0"])
    y = v.copy() if param == "y0" else np.full(v.shape, base["y0"])
    tail = np.empty((window, v.size))
    dead = np.zeros(v.shape, bool)
    with np.errstate(all="ignore"):
        for t in range(steps):
            r = eta * (x * x * y * y - 1)
            x, y = x - r * x * y * y, y - r * x * x * y
            if t % 64 == 0:
                dead |= ~(np.isfinite(x) & np.isfinite(y)) | (np.abs(x) > DIVERGENCE_GUARD)
                x = np.where(dead, np.nan, x)
                y = np.where(dead, np.nan, y)
            k = t - (steps - window)
            if k >= 0:
                p = x * y
                tail[k] = 0.25 * (1 - p * p) ** 2
        dead |= ~(np.isfinite(x) & np.isfinite(y))
        lam = sharpness(XYState(x, y))
    out = []
    for i in range(v.size):
        per = None if dead[i] else detect_period(tail[:, i], max_period)
        name = attractor_name(per, bool(dead[i]))
        out.append({"param": param, "value": float(v[i]), "attractor": name, "period": per,
                    "final_loss": float(tail[-1, i]),
                    "terminal_sharpness": float(lam[i]) if name == "FixedPoint" else None})
    return out


def bifurcation_sweep(param: str, values, base=None, steps: int = 20_000, transient: int = 10_000,
                      max_period: int = 64, workers: int = 1):
    """Attractor summary of the loss sequence after a transient, per parameter value.

    ``param`` is one of 'eta', 'x0', 'y0'; the others come from ``base``.
    """
    if param not in ("eta", "x0", "y0"):
        raise ValueError("param must be eta, x0 or y0")
    if not 0 <= transient < steps:
        raise ValueError("need 0 <= transient < steps")
    base = {"eta": 0.2, "x0": 2.5, "y0": 0.3, **(base or {})}
    values = np.sort(np.asarray(values, dtype=float))
    window = steps - transient
    parts = np.array_split(values, max(1, workers))
    args = [(param, p, base, steps, transient, window, max_period) for p in parts if p.size]
    out = []
    for r in _pool_map(_sweep_chunk, args, workers):
        out.extend(r)
    return out


# ---------------------------------------------------------------- degree-2 contrast


def degree2_c_center(eta):
    """c-coordinate of the degree-2 model's EoS minimum: (4 eta^-2 - 4)^(1/4)."""
    return (4 / eta ** 2 - 4) ** 0.25


def fit_families(a, b):
    """Least-squares residuals of b^2 against the parabola (gamma + m a) and ellipse (gamma - m a^2)."""
    a = np.asarray(a, dtype=float)
    y = np.asarray(b, dtype=float) ** 2
    out = {}
    for name, col in (("parabola", a), ("ellipse", -a * a)):
        M = np.column_stack([np.ones_like(a), col])
        coef = np.linalg.lstsq(M, y, rcond=None)[0]
        out[name] = float(np.sum((M @ coef - y) ** 2))
        out[name + "_params"] = (float(coef[0]), float(coef[1]))
    return out


def _ab_trace(init_ab: ABState, eta, pairs, degree):
    C = c_center(eta) if degree == 4 else degree2_c_center(eta)
    s = cd_to_xy(CDState(init_ab.a + C, 1 + init_ab.b))
    step = gd_step if degree == 4 else degree2_gd_step
    A, B = [], []
    for _ in range(pairs + 1):
        x, y = float(s.x), float(s.y)
        A.append(math.sqrt((x - y) * (x + y)) - C)
        B.append(x * y - 1)
        if abs(B[-1]) < 1e-14:  # on the manifold: the rest of the trace is constant
            break
        s = step(step(s, eta), eta)
    return np.array(A), np.array(B), C


def degree2_contrast(init_ab: ABState, eta=0.01, pairs: int = 20_000, transient=(2000, 0)):
    """Run both models from the same (a, b) offset relative to their own EoS minimum.

    ``transient`` gives the number of leading pairs dropped from the degree-4
    and degree-2 traces before fitting.  Traces stop once x y = 1 to
    double precision.
    """
    out = {}
    for degree, drop in zip((4, 2), transient):
        A, B, C = _ab_trace(init_ab, eta, pairs, degree)
        fa, fb = A[drop:], B[drop:]
        if fa.size < 3:
            fa, fb = A, B
        fits = fit_families(fa, fb)
        out[degree] = {"a": A, "b": B, "c_center": C, **fits}
    return out


def contrast_inits(n: int, eta=0.01, seed=0):
    """In-regime offsets a0 = A kappa^(5/2), |b0| = B sqrt(a0 kappa), A in (1, 4), B in (1/2, 3/2)."""
    k = math.sqrt(eta)
    rng = sample_rng(seed, 11)
    out = []
    for _ in range(n):
        a0 = rng.uniform(1, 4) * k ** 2.5
        b0 = rng.uniform(0.5, 1.5) * math.sqrt(a0 * k) * rng.choice([-1, 1])
        out.append(ABState(a0, float(b0)))
    return out


# ---------------------------------------------------------------- command line


def _float_list(s):
    return [float(eval_fraction(v)) for v in s.split(",") if v.strip()]


def eval_fraction(s: str) -> float:
    """Parse '0.25' or '2/8'."""
    s = s.strip()
    if "/" in s:
        p, q = s.split("/", 1)
        return float(p) / float(q)
    return float(s)


def read_config(path):
    """key=value lines; '#' starts a comment; keys use the long option names."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for n, line in enumerate(f, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{n}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


def _convert(action, v: str):
    if action.type is not None:
        return action.type(v)
    if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
        if v.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise _UsageError(f"{action.dest}: expected a boolean, got {v!r}")
        return v.lower() in ("true", "1", "yes")
    return v


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(message)


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--eta", type=eval_fraction)
    common.add_argument("--steps", type=int)
    common.add_argument("--precision", choices=("double", "extended"))
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="out")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--config")
    common.add_argument("--workers", type=int, default=1)

    p = _Parser(prog="eosdyn", description="Edge-of-stability dynamics experiments")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("run", parents=[common], help="single (x, y) trajectory")
    s.add_argument("--x0", type=float, default=2.5)
    s.add_argument("--y0", type=float, default=0.4)
    s.add_argument("--eps-stop", type=float, default=1e-10)
    s.add_argument("--record-every", type=int, default=1)

    s = sub.add_parser("grid", parents=[common], help="sharpness concentration grid")
    s.add_argument("--x-range", type=_float_list, default=[1.8, 3.2])
    s.add_argument("--y-range", type=_float_list, default=[1 - 1 / 600, 1 + 1 / 600])
    s.add_argument("--nx", type=int, default=50)
    s.add_argument("--ny", type=int, default=50)
    s.add_argument("--y-raw", action="store_true", help="y-range holds y0 rather than x0*y0")
    s.add_argument("--eps-stop", type=float, default=1e-10)
    s.add_argument("--K", type=float, default=DEFAULT_K)

    s = sub.add_parser("adapt", parents=[common], help="same init, several step sizes")
    s.add_argument("--etas", type=_float_list, default=[2 / 8, 2 / 10, 2 / 12])
    s.add_argument("--x0", type=float, default=2.6)
    s.add_argument("--y0", type=float, default=(1 + 1e-3) / 2.6)
    s.add_argument("--eps-stop", type=float, default=1e-10)
    s.add_argument("--record-every", type=int, default=100)

    s = sub.add_parser("verify", parents=[common], help="residual-bound suites")
    s.add_argument("--study", choices=("bounds", "scaling", "cx"), default="bounds")
    s.add_argument("--lemma", default="all")
    s.add_argument("--kappa", type=float)
    s.add_argument("--kappa-range", type=_float_list)
    s.add_argument("--samples", type=int, default=1000)
    s.add_argument("--K", type=float, default=DEFAULT_K)
    s.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    s.add_argument("--strict-kappa", action="store_true", help="also require the kappa-only clauses")

    s = sub.add_parser("vector", parents=[common], help="vector protocol over seeds")
    s.add_argument("--d", type=int, default=50)
    s.add_argument("--K", type=float, default=DEFAULT_K)
    s.add_argument("--t-p", type=int, default=50_000)
    s.add_argument("--eps", type=float, default=1e-8)
    s.add_argument("--runs", type=int, default=200)
    s.add_argument("--delta-0", type=float, default=0.02)
    s.add_argument("--min-success", type=float, default=0.9)

    s = sub.add_parser("sweep", parents=[common], help="bifurcation sweep")
    s.add_argument("--param", choices=("eta", "x0", "y0"), default="eta")
    s.add_argument("--lo", type=float, required=True)
    s.add_argument("--hi", type=float, required=True)
    s.add_argument("--n", type=int, default=100)
    s.add_argument("--transient", type=int, default=10_000)
    s.add_argument("--x0", type=float, default=2.5)
    s.add_argument("--y0", type=float, default=0.3)

    s = sub.add_parser("contrast", parents=[common], help="degree-2 vs degree-4 trace shapes")
    s.add_argument("--runs", type=int, default=20)
    s.add_argument("--transient", type=int, default=2000)
    return p


def _manifest(args, config):
    return RunManifest(command=args.command, config=config, seed=args.seed, precision=args.precision or "double",
                       timestamp=datetime.datetime.now(datetime.timezone.utc).isoformat())


def _config_of(args):
    skip = {"command", "out", "format", "config", "seed", "precision", "workers"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _emit(args, rows, command=None):
    if command is not None:
        args = argparse.Namespace(**{**vars(args), "command": command})
    m = _manifest(args, _config_of(args))
    paths = write_outputs(m, rows, args.out, args.format)
    print(f"wrote {paths[1]} (manifest {m.id})")
    return m


def _cmd_run(a):
    eta = 0.2 if a.eta is None else a.eta
    steps = 10_000 if a.steps is None else a.steps
    x0, y0, e = P.lift((a.x0, a.y0, eta), a.precision or "double")
    tr = run_trajectory(XYState(x0, y0), e, steps, StopSpec(eps_stop=a.eps_stop, record_every=a.record_every))
    rows = [{"step": t, "x": float(x), "y": float(y), "loss": float(ls), "sharpness": float(sh)}
            for t, x, y, ls, sh in zip(tr.steps, tr.x, tr.y, tr.loss, tr.sharpness)]
    _emit(a, rows)
    print(f"stop={tr.stop_reason.value} steps={tr.n_steps} final sharpness={float(sharpness(tr.final)):.10g}")
    return 0


def _cmd_grid(a):
    spec = GridSpec(x_range=tuple(a.x_range), y_range=tuple(a.y_range), nx=a.nx, ny=a.ny,
                    eta=0.2 if a.eta is None else a.eta, max_steps=50_000 if a.steps is None else a.steps,
                    eps_stop=a.eps_stop, y_is_product=not a.y_raw, K=a.K)
    rows = sharpness_concentration_grid(spec, a.workers)
    _emit(a, rows)
    counts = {c: sum(r["cls"] == c for r in rows) for c in GRID_CLASSES}
    region = [r for r in rows if r["in_theorem_region"]]
    bad = [r for r in region if not r["tight_window"]]
    print(" ".join(f"{k}={v}" for k, v in counts.items()), f"theorem_region={len(region)} failures={len(bad)}")
    return 1 if bad else 0


def _cmd_adapt(a):
    etas = a.etas if a.eta is None else [a.eta]
    res = sharpness_adaptivity(etas, XYState(a.x0, a.y0), 50_000 if a.steps is None else a.steps,
                               a.eps_stop, a.record_every)
    rows = []
    for r in res:
        tr = r["trace"]
        for t, ls, sh in zip(tr.steps, tr.loss, tr.sharpness):
            rows.append({"eta": r["eta"], "step": t, "loss": ls, "sharpness": sh,
                         "terminal_sharpness": r["terminal_sharpness"], "in_window": r["in_window"]})
        print(f"eta={r['eta']:.6g} 2/eta={2 / r['eta']:.6g} terminal sharpness={r['terminal_sharpness']:.8g}"
              f" in_window={r['in_window']}")
    _emit(a, rows)
    return 0 if all(r["in_window"] for r in res) else 1


def _kappa_range(a, default):
    if a.kappa_range:
        if len(a.kappa_range) != 2:
            raise _UsageError("--kappa-range needs lo,hi")
        return tuple(a.kappa_range)
    if a.kappa is not None:
        return (a.kappa, a.kappa)
    return default


def _cmd_verify(a):
    if a.study == "scaling":
        rows = residual_scaling(_kappa_range(a, (0.01, 0.05)), precision=a.precision or "double")
        _emit(a, rows, "scaling")
        ok = True
        for q in ("b", "a", "xi"):
            fits = [r["fitted_order"] for r in rows if r["quantity"] == q]
            exp = rows[[r["quantity"] for r in rows].index(q)]["expected_order"]
            med = float(np.median(fits))
            ok &= abs(med - exp) <= 0.3
            print(f"R_{q}: fitted order {med:.3f} expected {exp}")
        return 0 if ok else 1
    if a.study == "cx":
        lo, hi = _kappa_range(a, (1e-4, 2e-3))
        kappas = list(np.geomspace(lo, hi, 5)) if hi > lo else [lo]
        rows = cx_approx_check(kappas, max(1, a.samples // len(kappas)), a.K, a.seed, a.strict_kappa)
        _emit(a, rows, "cx")
        fails = sum(r["status"] == "Fail" for r in rows)
        print(f"cx checks: {len(rows)} rows, {fails} failures")
        return 1 if fails else 0
    names = [lm.name for lm in LemmaId] if a.lemma == "all" else [s.strip() for s in a.lemma.split(",")]
    try:
        lemmas = [LemmaId[n.upper()] if n.upper() in LemmaId.__members__ else LemmaId(n) for n in names]
    except ValueError as e:
        raise _UsageError(str(e)) from None
    prec = a.precision or "extended"
    kr = _kappa_range(a, (5e-4, 1.9e-3))
    rows, failed = [], False
    for lm in lemmas:
        try:
            reps = residual_sweep(lm, a.samples, kr, a.K, a.delta, a.seed, prec, a.strict_kappa)
        except ConditionViolated as e:
            print(f"{lm.value}: skipped ({e})")
            continue
        n_bad = sum(not r.satisfied for r in reps)
        failed |= n_bad > 0
        print(f"{lm.value}: {len(reps) - n_bad}/{len(reps)} satisfied, max ratio {max(r.ratio for r in reps):.4g}")
        for r in reps:
            d = dataclasses.asdict(r)
            d["lemma"] = r.lemma.value
            rows.append(d)
    _emit(a, rows)
    return 1 if failed else 0


def _cmd_vector(a):
    eta = 1e-3 if a.eta is None else a.eta
    steps = 4_000_000 if a.steps is None else a.steps
    cfgs = [VectorProtocolConfig(eta=eta, K=a.K, t_p=a.t_p, eps=a.eps, seed=a.seed + i, delta_0=a.delta_0,
                                 d=a.d, max_steps=steps) for i in range(a.runs)]
    outs = run_vector_batch(cfgs)
    rows = []
    for c, o in zip(cfgs, outs):
        d = {k: getattr(o, k) for k in SCHEMAS["vector"][1] if hasattr(o, k)}
        d.update(seed=c.seed, status=o.status.value, window_ok=o.window_ok)
        rows.append(d)
    _emit(a, rows)
    rate = sum(o.success for o in outs) / len(outs)
    flags = all(o.contraction_ok and o.contraction_factor_ok and o.perturbation_exact for o in outs)
    print(f"success rate {rate:.3f}; contraction and perturbation flags {'hold' if flags else 'violated'}")
    return 0 if rate >= a.min_success and flags else 1


def _cmd_sweep(a):
    steps = 20_000 if a.steps is None else a.steps
    base = {"eta": 0.2 if a.eta is None else a.eta, "x0": a.x0, "y0": a.y0}
    rows = bifurcation_sweep(a.param, np.linspace(a.lo, a.hi, a.n), base, steps, a.transient,
                             workers=a.workers)
    _emit(a, rows)
    counts = {n: sum(r["attractor"] == n for r in rows) for n in ATTRACTORS}
    print(" ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


def _cmd_contrast(a):
    eta = 0.01 if a.eta is None else a.eta
    pairs = 20_000 if a.steps is None else a.steps
    rows, ok = [], True
    for n, ab in enumerate(contrast_inits(a.runs, eta, a.seed)):
        res = degree2_contrast(ab, eta, pairs, (a.transient, 0))
        good4 = res[4]["parabola"] < res[4]["ellipse"]
        good2 = res[2]["ellipse"] < res[2]["parabola"]
        ok &= good4 and good2
        print(f"run {n}: degree-4 parabola {res[4]['parabola']:.3e} ellipse {res[4]['ellipse']:.3e};"
              f" degree-2 parabola {res[2]['parabola']:.3e} ellipse {res[2]['ellipse']:.3e}")
        for deg in (4, 2):
            C = res[deg]["c_center"]
            for i, (x, y) in enumerate(zip(res[deg]["a"], res[deg]["b"])):
                rows.append({"model": f"run{n}-degree{deg}", "pair": i, "c": x + C, "d": y + 1, "a": x, "b": y})
    _emit(a, rows)
    return 0 if ok else 1


COMMANDS = {"run": _cmd_run, "grid": _cmd_grid, "adapt": _cmd_adapt, "verify": _cmd_verify,
            "vector": _cmd_vector, "sweep": _cmd_sweep, "contrast": _cmd_contrast}


def cli_main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 2
        if args.config:
            sub = parser._subparsers._group_actions[0].choices[args.command]
            try:
                cfg = read_config(args.config)
            except (OSError, ValueError) as e:
                raise _UsageError(str(e)) from None
            known = {a.dest: a for a in sub._actions}
            unknown = sorted(set(cfg) - set(known))
            if unknown:
                raise _UsageError(f"unknown config keys: {', '.join(unknown)}")
            # config values act as defaults; explicit flags still win
            sub.set_defaults(**{k: _convert(known[k], v) for k, v in cfg.items()})
            args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except _UsageError as e:
        print(f"eosdyn: error: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_main())
