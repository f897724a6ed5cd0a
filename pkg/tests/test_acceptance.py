"""Acceptance criteria 1-8.  Each test records one pass/fail line, printed in the terminal summary."""

import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, shipped_run
from quantlab import cli
from quantlab import diagnostics as dg
from quantlab.distributions import CompactBox, NormSpec, UniformBox
from quantlab.quantizer import Codebook, OptimizeConfig, r_centroid
from quantlab.voronoi import assign_with_distance, cell_geometry


def record(k, ok, text):
    ACCEPTANCE_LINES[k] = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {text}"
    print(ACCEPTANCE_LINES[k])
    assert ok, text


def uniform_grid(n):
    return (2 * np.arange(1, n + 1) - 1) / (2 * n)


def test_criterion_1_uniform_oracle():
    res, secs = shipped_run("uniform1d_r2")
    assert res.config.levels == [1, 2, 3, 4, 5, 6, 7, 8, 16, 32, 64]
    worst_pt, worst_rel = 0.0, 0.0
    for n, e in zip(res.curve.levels, res.curve.e_r_pow):
        pts = np.sort(res.curve.codebooks[n].points[:, 0])
        worst_pt = max(worst_pt, float(np.max(np.abs(pts - uniform_grid(n)))))
        worst_rel = max(worst_rel, abs(e.value * 12 * n * n - 1))
    ok = worst_pt <= 5e-3 and worst_rel <= 0.01 and secs < 120
    record(1, ok, f"max codepoint error {worst_pt:.2e} (<= 5e-3), max relative e^2 error {worst_rel:.2%} "
                  f"(<= 1%), {secs:.0f}s (< 120s)")


def test_criterion_2_uniform_equal_cells():
    res, secs = shipped_run("uniform1d_r2")
    zp, zi, cells = 0.0, 0.0, 0
    for n in res.config.levels:
        for s in res.stats[n]:
            cells += 1
            if n == 1:
                assert s.probability.value == 1.0
            else:
                zp = max(zp, abs(s.probability.value - 1 / n) / s.probability.stderr)
            zi = max(zi, abs(s.local_inertia.value - n**-3.0 / 12) / s.local_inertia.stderr)
    ok = zp <= 3 and zi <= 3 and secs < 120
    record(2, ok, f"{cells} cells, max |z| probability {zp:.2f}, inertia {zi:.2f} (<= 3), {secs:.0f}s (< 120s)")


def test_criterion_3_uniform_differences():
    t0 = time.perf_counter()
    levels = [4, 6, 8, 11, 16, 23, 32, 45, 64]
    cfg = OptimizeConfig(training_samples=2**22, restarts=1, max_lloyd_iters=5000, eval_samples=10_000)
    curve = dg.error_curve(UniformBox([0.0], [1.0]), levels, 2.0, opt_config=cfg, eval_samples=1_000_000, seed=0)
    rep = dg.diff_scaling_check(curve, 1, 2.0, tol=0.3)
    top = [n**3 * curve.diffs[i].value * 6 - 1 for i, n in list(enumerate(levels))[-2:]]
    secs = time.perf_counter() - t0
    slope = rep.fitted_exponent.value if rep.fitted_exponent else float("nan")
    ok = rep.status == "pass" and abs(slope + 3) <= 0.3 and all(abs(t) <= 0.25 for t in top) and secs < 300
    record(3, ok, f"diff exponent {slope:.3f} (-3 +/- 0.3), n^3 diff vs 1/6 at n=45, 64: "
                  f"{top[0]:+.1%}, {top[1]:+.1%} (within 25%), {secs:.0f}s (< 300s)")


def test_criterion_4_gaussian_rate_and_point_density():
    res, secs = shipped_run("gaussian1d_r2")
    assert res.config.levels[0] == 8 and res.config.levels[-1] == 64
    Q = dg.zador_constant(res.model, 2.0)
    z = dg.zador_scaling_check(res.curve, 1, 2.0, tol=0.15, expected_Q=Q)
    K = CompactBox((-1.0,), (1.0,))
    assert res.region.describe() == K.describe()
    pd = dg.point_density_conjecture_check(res.stats, res.model, 2.0, 1, band=(0.5, 2.0),
                                           trend_levels=[16, 32, 64])
    lo, hi = pd.ratio_band
    qerr = z.details["Q_relative_error"]
    widths = [pd.details["levels"][n]["width"] for n in (16, 32, 64)]
    ok = (z.passed and abs(qerr) <= 0.15 and pd.passed and 0.5 <= lo and hi <= 2.0
          and pd.details["width_shrinking"] and secs < 600)
    record(4, ok, f"exponent {z.fitted_exponent.value:.3f} (-2 +/- 0.15), Q {z.details['Q_estimate']:.4f} vs "
                  f"{Q:.4f} ({qerr:+.1%}, within 15%), n=64 band [{lo:.4f}, {hi:.4f}] in [0.5, 2], widths "
                  f"{', '.join(f'{w:.1e}' for w in widths)} shrinking, {secs:.0f}s (< 600s)")


def test_criterion_5_micro_macro_suite():
    total, failures, n_first, n_second, min_probes = 0.0, [], 0, 0, np.inf
    for name in cli.SHIPPED_CONFIGS:
        res, secs = shipped_run(name)
        total += secs
        for rep in res.reports_named("micro_macro_first"):
            n_first += 1
            min_probes = min(min_probes, rep.details["probes"])
            if not rep.passed:
                failures.append((name, "first", rep.details["n"], rep.witnesses[:1]))
        for rep in res.reports_named("micro_macro_second"):
            n_second += 1
            if not rep.passed:
                failures.append((name, "second", rep.details["n"], rep.witnesses[:1]))
        assert res.reports_named("micro_macro_first") and res.reports_named("micro_macro_second")
    ok = not failures and min_probes >= 500 and total < 900
    record(5, ok, f"{n_first} first-inequality and {n_second} second-inequality reports over six configs, "
                  f"{len(failures)} violating, >= {min_probes} probes per level, {total:.0f}s (< 900s)"
                  + (f"; first failure {failures[0]}" if failures else ""))


def test_criterion_6_radius_scaling():
    t0 = time.perf_counter()
    # exact on the analytic codebook
    exact_dev = 0.0
    for n in (2, 8, 64):
        geo = cell_geometry(Codebook(uniform_grid(n).reshape(-1, 1)), [np.empty(0)] * n)
        exact_dev = max(exact_dev, max(abs(n * g.inner_radius - 0.5) for g in geo[1:-1] or geo))
    # and on the optimized codebooks of the shipped run
    res_u, secs_u = shipped_run("uniform1d_r2")
    opt_dev = 0.0
    for n in res_u.config.levels:
        if n < 3:
            continue
        interior = res_u.stats[n]
        pts = res_u.curve.codebooks[n].points[:, 0]
        for s in interior:
            if pts[s.codepoint_index] in (pts.min(), pts.max()):
                continue
            opt_dev = max(opt_dev, abs(n * s.geometry.inner_radius - 0.5))
    res_g, secs_g = shipped_run("gaussian2d_r2")
    (rep,) = res_g.reports_named("radius_scaling")
    dt = rep.details
    assert res_g.region.describe() == {"type": "ball", "center": [0.0, 0.0], "radius": 1.5}
    assert max(rep.details["levels"]) == 64
    band_ok = dt["inner_band_ratio"] < 20 and dt["outer_band_ratio"] < 20
    exp_ok = abs(dt["inner_exponent"] + 0.5) <= 0.2 and abs(dt["outer_exponent"] + 0.5) <= 0.2
    secs = time.perf_counter() - t0 + secs_g
    ok = exact_dev <= 1e-12 and opt_dev <= 5e-3 and band_ok and exp_ok and rep.passed and secs < 900
    record(6, ok, f"uniform n*s_inner - 1/2: analytic {exact_dev:.1e}, optimized {opt_dev:.1e} (<= 5e-3); "
                  f"gaussian2d exponents inner {dt['inner_exponent']:.3f}, outer {dt['outer_exponent']:.3f} "
                  f"(-0.5 +/- 0.2), band ratios {dt['inner_band_ratio']:.2f}, {dt['outer_band_ratio']:.2f} "
                  f"(< 20), {secs:.0f}s (< 900s)")


def test_criterion_7_invariants():
    bad, count = [], 0
    for name in cli.SHIPPED_CONFIGS:
        res, _ = shipped_run(name)
        reps = res.reports_named("invariants")
        assert len(reps) == len(res.config.levels)
        for n, rep in zip(res.config.levels, reps):
            count += 1
            if not rep.passed:
                bad.append((name, n, rep.witnesses))
    record(7, not bad, f"{count} level reports over six configs, {len(bad)} outside 3 sigma"
                       + (f"; first {bad[0]}" if bad else ""))


def test_criterion_8_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    mismatches = 0
    for norm in NormSpec:
        for d in (1, 2, 3):
            pts = rng.normal(size=(50, d))
            q = rng.normal(size=(10_000, d))
            idx, dist = assign_with_distance(pts, q, norm)
            full = np.stack([norm(q - a) for a in pts], axis=1)
            # argmin returns the first minimum, matching the lowest-index tie rule
            mismatches += int(np.count_nonzero(idx != np.argmin(full, axis=1)))
            mismatches += int(np.count_nonzero(dist != full.min(axis=1)))
    worst_gap = 0.0
    for r in (1.0, 1.5, 3.0):
        for seed in range(5):
            x = np.random.default_rng(seed).uniform(size=40)
            a = r_centroid(x, r)[0]
            grid = np.arange(0.0, 1.0 + 1e-4, 1e-4)
            gcost = (np.abs(x[None, :] - grid[:, None]) ** r).sum(axis=1).min()
            cost = float((np.abs(x - a) ** r).sum())
            worst_gap = max(worst_gap, cost - gcost)
    secs = time.perf_counter() - t0
    ok = mismatches == 0 and worst_gap < 1e-6 and secs < 60
    record(8, ok, f"nearest neighbour mismatches {mismatches} over 9 x 10^4 queries, worst r-centroid gap over "
                  f"the 1e-4 grid {worst_gap:.1e} (< 1e-6), {secs:.1f}s (< 60s)")


@pytest.mark.parametrize("name", cli.SHIPPED_CONFIGS)
def test_every_check_passes_on_shipped_config(name):
    res, _ = shipped_run(name)
    failing = [(rep.check_name, rep.status, rep.details.get("n")) for rep in res.reports if rep.status != "pass"]
    assert not failing
