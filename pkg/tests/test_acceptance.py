"""Acceptance criteria 1-10 at their stated tolerances; each prints one PASS/FAIL line.

Criteria 2, 4 and 6 are not attainable as stated (see the project notes) and
are expected to fail.
"""

import math
import time

import numpy as np

from eosdyn import precision as P
from eosdyn.dynamics_approx import LemmaId, ab_one_step_exact, residual_sweep
from eosdyn.experiments_cli import (GridSpec, adaptive_region_check, contrast_inits, cx_approx_check,
                                    degree2_contrast, residual_scaling, sharpness_adaptivity,
                                    sharpness_concentration_grid, theorem_region_ab)
from eosdyn.phase_tracker import PhaseLabel, run_ab, verify_time_bounds
from eosdyn.reparam import ABState, ab_to_xy, xy_to_ab
from eosdyn.scalar_model import XYState, eos_minimum, gd_step, hessian_eigenvalues, sharpness
from eosdyn.vector_model import (VecPair, VectorProtocolConfig, alignment_xi, loss_frobenius, loss_vec, perturb,
                                 run_vector_batch, sample_init)

from test_scalar_model import numeric_hessian_4


def test_criterion_01_eos_minimum(report):
    worst_l, worst_p = 0.0, 0.0
    for eta in (0.01, 0.05, 0.1, 0.2, 0.3, 0.45):
        m = eos_minimum(eta)
        worst_l = max(worst_l, abs(sharpness(m) - 2 / eta) / (2 / eta))
        worst_p = max(worst_p, abs(m.x * m.y - 1))
    ok = worst_l <= 1e-9 and worst_p <= 1e-12
    assert report(1, ok, f"max rel sharpness error {worst_l:.2e}, max |xy-1| {worst_p:.2e}")


def test_criterion_02_sharpness_concentration(report):
    spec = GridSpec(eta=0.2, max_steps=50_000, nx=50, ny=50)
    rows = sharpness_concentration_grid(spec)
    region = [r for r in rows if r["in_theorem_region"]]
    bad = [r for r in region if not (r["final_loss"] < 1e-10 and r["tight_window"])]
    tight = sum(r["tight_window"] for r in rows)
    k = math.sqrt(0.2)
    empty = not 12 * k ** 2.5 < 600 ** -2 / k / 80
    # an empty theorem region makes the criterion vacuous; that is not evidence, so it fails
    ok = bool(region) and not bad
    detail = (f"{len(region)} theorem-region cells, {len(bad)} failures; theorem region empty at eta=0.2: {empty};"
              f" {tight}/{len(rows)} grid cells in (2/eta-0.1, 2/eta)")
    assert report(2, ok, detail)


def test_criterion_03_adaptivity(report):
    init = XYState(2.6, (1 + 1e-3) / 2.6)
    res = sharpness_adaptivity([2 / 8, 2 / 10, 2 / 12], init)
    lams = [r["terminal_sharpness"] for r in res]
    ok_runs = all(r["in_window"] for r in res)
    alpha = 1e-3
    rows = adaptive_region_check(alpha, n_eta=20)
    ok_region = len(rows) == 20 and all(r["included"] for r in rows)
    detail = (f"terminal sharpness {', '.join(f'{v:.4f}' for v in lams)};"
              f" fixed region included for {sum(r['included'] for r in rows)}/20 step sizes (alpha={alpha})")
    assert report(3, ok_runs and ok_region, detail)


def test_criterion_04_residual_suite(report):
    t0 = time.time()
    parts, ok = [], True
    for lm in LemmaId:
        reps = residual_sweep(lm, 10_000, (5e-4, 1.9e-3), K=600, seed=0, precision="extended",
                              enforce_kappa=False)
        n_bad = sum(not r.satisfied for r in reps)
        ok &= n_bad == 0
        parts.append(f"{lm.value} {len(reps) - n_bad}/{len(reps)}")
    assert report(4, ok, "; ".join(parts) + f" ({time.time() - t0:.0f} s)")


def test_criterion_05_residual_scaling(report):
    rows = residual_scaling((0.01, 0.05), precision="double")
    ok, parts = True, []
    for q in ("b", "a", "xi"):
        fits = [r["fitted_order"] for r in rows if r["quantity"] == q]
        exp = next(r["expected_order"] for r in rows if r["quantity"] == q)
        med = float(np.median(fits))
        ok &= abs(med - exp) <= 0.3
        parts.append(f"R_{q} order {med:.3f} (expected {exp})")
    assert report(5, ok, "; ".join(parts))


def test_criterion_06_phase_structure(report):
    k = 1.5e-3
    K = 600
    budget = 400  # 2-step pairs per init in extended precision
    rng = np.random.default_rng([6, 0])
    lo, hi = 12 * k ** 2.5, K ** -2 / k / 80
    prefix_ok, finished, bounds_ok, final_ok = True, 0, True, True
    for _ in range(100):
        a0 = rng.uniform(lo, hi)
        b0 = rng.uniform(0, 1 / K) * rng.choice([-1.0, 1.0])
        assert theorem_region_ab(a0, b0, k, K)
        res = run_ab(ABState(a0, b0), k, budget, precision="extended", record_every=budget)
        seq = res.label_sequence()
        ranks = [int(lab) for lab in seq]
        prefix_ok &= ranks == sorted(ranks) and res.band_violation is None
        prefix_ok &= all(lab not in (PhaseLabel.Diverged, PhaseLabel.Outside) for lab in seq)
        a = [float(r.ab.a) for r in res.records]
        prefix_ok &= all(u > v for u, v in zip(a, a[1:]))
        if res.final_label is PhaseLabel.Converged:
            finished += 1
            final_ok &= -5 / 3 * k ** 3 < float(res.final.a) < -k ** 3 / 10
        bounds_ok &= verify_time_bounds(res, K, enforce_kappa=False).ok
    # along the band the a-drift per pair is at most 16 a kappa^4, so leaving phase I alone takes at least
    need = math.log(12) / (16 * k ** 4)
    ok = finished == 100 and bounds_ok and final_ok and prefix_ok
    detail = (f"{finished}/100 runs converged within {budget} pairs; prefix order/band/monotone-a ok: {prefix_ok};"
              f" reaching a < kappa^(5/2) needs >= {need:.2e} pairs per init")
    assert report(6, ok, detail)


def test_criterion_07_approximation_identities(report):
    kappas = list(np.geomspace(1e-4, 2e-3, 5))
    rows = cx_approx_check(kappas, 2000, K=600, seed=0)
    xe = [r for r in rows if r["kind"] == "x_eos"]
    cx = [r for r in rows if r["kind"] == "c"]
    n_pass = sum(r["status"] == "Pass" for r in cx)
    ok = all(r["status"] == "Pass" for r in xe) and n_pass == len(cx) == 10_000
    worst = max(r["x_minus_c"] / r["bound"] for r in cx)
    detail = (f"x_eos gap within 36 kappa^3 at {sum(r['status'] == 'Pass' for r in xe)}/{len(xe)} kappas;"
              f" c in (x - 32 kappa^3, x) for {n_pass}/{len(cx)} samples (max gap/bound {worst:.3f})")
    assert report(7, ok, detail)


def test_criterion_08_vector_protocol(report):
    cfgs = [VectorProtocolConfig(eta=1e-3, K=600, d=50, seed=s) for s in range(200)]
    t0 = time.time()
    outs = run_vector_batch(cfgs)
    rate = sum(o.success for o in outs) / len(outs)
    contraction = all(o.contraction_ok and o.contraction_factor_ok for o in outs)
    pert = all(o.perturbation_exact for o in outs)
    # by t_p the runs are aligned to rounding level, so also perturb each initial pair, where xi is O(1)
    direct = 0.0
    for c in cfgs:
        p = sample_init(c)
        f = (1 + 2 / c.K) ** 2
        direct = max(direct, abs(alignment_xi(perturb(p, c.K)) - f * alignment_xi(p)) / (f * alignment_xi(p)))
    ok = rate >= 0.9 and contraction and pert and direct <= 1e-12
    errs = [o.perturbation_rel_err for o in outs if not math.isnan(o.perturbation_rel_err)]
    detail = (f"success rate {rate:.3f}; contraction on qualifying steps: {contraction};"
              f" perturbation exact in-run: {pert} ({len(outs) - len(errs)} runs with xi at rounding level);"
              f" on initial pairs max rel err {direct:.1e} ({time.time() - t0:.0f} s)")
    assert report(8, ok, detail)


def test_criterion_09_oracle_equivalences(report):
    rng = np.random.default_rng(9)
    worst_h = 0.0
    for x, y in rng.uniform(0.05, 3, size=(1000, 2)):
        got = np.sort(hessian_eigenvalues(XYState(x, y)))
        ref = np.sort(np.linalg.eigvalsh(numeric_hessian_4(x, y)))
        worst_h = max(worst_h, float(np.max(np.abs(got - ref))) / float(np.max(np.abs(ref))))
    worst_f = 0.0
    for d in range(2, 9):
        for _ in range(50):
            p = VecPair(rng.standard_normal(d), rng.standard_normal(d))
            ref = loss_frobenius(p)
            worst_f = max(worst_f, abs(loss_vec(p) - ref) / ref)
    worst_d = 0.0
    for _ in range(1000):
        k, a, b = rng.uniform(0.05, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.05, 0.05)
        try:
            s1 = ab_one_step_exact(ABState(a, b), k)
        except ValueError:
            continue
        s2 = xy_to_ab(gd_step(ab_to_xy(ABState(a, b), k * k), k * k), k * k)
        worst_d = max(worst_d, abs(s1.a - s2.a) / max(1, abs(s1.a)), abs(s1.b - s2.b) / max(1, abs(s1.b)))
    worst_e = P.ext(0)
    for _ in range(50):
        k, a, b = P.lift((rng.uniform(0.05, 0.5), rng.uniform(-0.5, 0.5), rng.uniform(-0.05, 0.05)), "extended")
        s1 = ab_one_step_exact(ABState(a, b), k)
        e = k * k
        s2 = xy_to_ab(gd_step(ab_to_xy(ABState(a, b), e), e), e)
        worst_e = max(worst_e, abs(s1.a - s2.a), abs(s1.b - s2.b))
    ok = worst_h <= 1e-8 and worst_f <= 1e-10 and worst_d <= 1e-9 and worst_e < P.ext("1e-25")
    detail = (f"Hessian {worst_h:.1e}; Frobenius {worst_f:.1e}; routes double {worst_d:.1e},"
              f" extended {float(worst_e):.1e}")
    assert report(9, ok, detail)


def test_criterion_10_degree2_contrast(report):
    good = 0
    for ab in contrast_inits(20, 0.01, seed=0):
        res = degree2_contrast(ab, 0.01)
        good += res[4]["parabola"] < res[4]["ellipse"] and res[2]["ellipse"] < res[2]["parabola"]
    assert report(10, good == 20, f"{good}/20 paired runs with the expected family winning on both models")
