"""The twelve acceptance criteria, each at its stated tolerance.

Every test records a PASS/FAIL line (shown in the terminal summary) before
asserting, so a failing criterion is reported with its measured values.
"""

import itertools
import math

import numpy as np
import pytest
from conftest import record
from scipy import stats

from selfnorm.bounds import I_nx, mgf_bracket, mills_psi, normal_pdf, normal_tail
from selfnorm.concentration import (concentration_check, default_suite, stein_equation_residual,
                                    stein_property_check, subgaussian_check)
from selfnorm.distributions import FAMILIES, make_distribution
from selfnorm.experiments import cli
from selfnorm.experiments.config import config_from_mapping
from selfnorm.experiments.runner import fitted_constants, run_ratio_curve
from selfnorm.kernels import builtin_kernel, check_condition_kc
from selfnorm.rng import SeedStream
from selfnorm.tilting import build_tilted, estimate_tail_plain, estimate_tail_tilted
from selfnorm.ustat import hoeffding_decompose

NORMAL = make_distribution("normal")
RADEMACHER = make_distribution("rademacher")
KERNELS = ("t", "variance", "gini", "wilcoxon")


def student_oracle(n, x):
    return float(stats.t.sf(x * math.sqrt((n - 1) / (n - x * x)), n - 1))


def rel_gap(a, b, scale=0.0):
    """|a - b| relative to the larger side, or to ``scale`` when the sides cancel to ~0."""
    scale = max(abs(a), abs(b), scale)
    return 0.0 if scale == 0 else abs(a - b) / scale


def test_01_student_t_oracle():
    worst = 0.0
    for x in (0.5, 1.0, 1.5, 2.0):
        est = estimate_tail_plain(NORMAL, "self-normalized-sum", 10, x, 10**6, SeedStream(101).child(x))
        worst = max(worst, abs(est.estimate - student_oracle(10, x)) / est.se)
    ok = worst < 3.0
    record(1, "Student-t oracle, n=10, 1e6 reps", ok, f"max |z| = {worst:.2f}")
    assert ok


def test_02_rademacher_enumeration():
    n = 10
    sums = np.array([sum(v) for v in itertools.product((-1.0, 1.0), repeat=n)])
    worst = 0.0
    for x in (1.0, 2.0):
        exact = float(np.mean(sums / math.sqrt(n) >= x))
        plain = estimate_tail_plain(RADEMACHER, "self-normalized-sum", n, x, 10**6, SeedStream(102).child(x))
        tilt = estimate_tail_tilted(RADEMACHER, n=n, x_tilt=2.0, x=x, reps=10**6, stream=SeedStream(103).child(x))
        worst = max(worst,
                    abs(plain.estimate - exact) / plain.se,
                    abs(tilt.estimate - exact) / tilt.se,
                    abs(plain.estimate - tilt.estimate) / math.hypot(plain.se, tilt.se))
    ok = worst < 3.0
    record(2, "Rademacher n=10: plain, tilted and 2^10 enumeration agree", ok, f"max |z| = {worst:.2f}")
    assert ok


def test_03_decomposition_identities():
    worst = 0.0
    linear_exact = True
    for name in KERNELS:
        k = builtin_kernel(name)
        for n in (12, 20, 40):
            for s in range(50):
                d = hoeffding_decompose(NORMAL.sample(n, SeedStream(104).child(name, n, s)), k, NORMAL)
                m = d.m
                # W + D1 can cancel exactly (e.g. U = theta for Wilcoxon); measure
                # that sum against the size of its terms
                split = abs(d.W_n) + abs(d.D1n)
                gaps = [
                    rel_gap((n - m) ** 2 / (n - 1) * d.s1_2, float(np.sum(d.q**2)) - n * d.U_n**2),
                    rel_gap(d.s1_star_2, d.V_n2 * (1 + d.D2n)),
                    rel_gap(math.sqrt(n) * (d.U_n - d.theta) / (m * d.sigma), d.W_n + d.D1n, split),
                    rel_gap(d.T_star, (d.W_n + d.D1n) / (d.V_n * math.sqrt(1 + d.D2n)),
                            split / (d.V_n * math.sqrt(1 + d.D2n))),
                    rel_gap(d.Lambda2, float(np.sum(d.psi**2))),
                ]
                worst = max(worst, *gaps)
                linear_exact &= d.Lambda2 >= 0
                if name == "t":
                    linear_exact &= d.D1n == 0 and d.Lambda2 == 0 and not np.any(d.psi)
    ok = worst < 1e-9 and linear_exact
    record(3, "five decomposition identities, 50 samples x 4 kernels x n in {12,20,40}", ok,
           f"max relative gap = {worst:.2e}")
    assert ok


def test_04_moderate_deviation_trend():
    cfg = config_from_mapping({"statistic": "studentized-u", "kernel": "t", "dist": "normal",
                               "n_list": [50, 200, 800], "x_grid": [1.5], "reps": 200_000,
                               "seed": 20240601, "envelope_p": 3.0})
    rows = run_ratio_curve(cfg, workers=4)
    dev = [abs(r.ratio - 1.0) for r in rows]
    se = [r.tail_se / r.gauss_tail for r in rows]
    # a larger n may not show a deviation that exceeds the smaller-n one by more than 2 SE
    trend_ok = all(dev[j] - dev[i] <= 2.0 * math.hypot(se[i], se[j])
                   for i in range(len(rows)) for j in range(i + 1, len(rows)))
    fit = fitted_constants(rows)
    spread = fit["C_hat_spread"]
    ok = trend_ok and spread < 2.0
    detail = ", ".join(f"n={r.n}: ratio={r.ratio:.4f}+-{s:.4f}" for r, s in zip(rows, se))
    record(4, "ratio trend in n and fitted C_hat within a factor 2", ok,
           f"{detail}; trend_ok={trend_ok}; C_hat spread = {spread:.2f}")
    assert ok


def test_05_tilted_sampler():
    oracle = student_oracle(50, 3.0)
    tilt = estimate_tail_tilted(NORMAL, n=50, x_tilt=3.0, reps=10**5, stream=SeedStream(105))
    plain = estimate_tail_plain(NORMAL, "self-normalized-sum", 50, 3.0, 10**5, SeedStream(106))
    z = abs(tilt.estimate - oracle) / tilt.se
    ok = z < 3.0 and tilt.rel_se < plain.rel_se
    record(5, "tilted sampler unbiased with smaller relative SE (normal, n=50, x=3)", ok,
           f"|z| = {z:.2f}, rel SE tilted {tilt.rel_se:.4f} vs plain {plain.rel_se:.4f}")
    assert ok


def test_06_concentration_suite():
    reports = [concentration_check(c) for c in default_suite(reps=10**5, seed=106, include_empty_band=False)]
    failed = [r.label for r in reports if not r.verdict]
    ok = len(reports) == 20 and not failed
    margin = min(r.margin for r in reports)
    record(6, "randomized concentration inequality on the 20-configuration suite", ok,
           f"{len(reports)} configs, failed={failed}, min margin = {margin:.3f}")
    assert ok


def test_07_stein_utilities():
    rep = stein_property_check(tol=1e-9)
    xs = np.linspace(-6, 6, 49)
    X, W = np.meshgrid(xs, np.linspace(-6, 6, 241))
    mask = np.abs(W - X) > 1e-3
    resid = float(np.max(stein_equation_residual(X[mask], W[mask])))
    ok = rep.ok and resid < 1e-6
    record(7, "Stein solution properties and equation residual", ok,
           f"worst excess = {max(rep.wf_excess, rep.f_excess, rep.diff_excess, rep.dfdx_excess):.2e}, "
           f"residual = {resid:.2e}")
    assert ok


def test_08_gaussian_tail_sandwich():
    x = 0.01 * np.arange(1, 1001)
    tail, phi, psi = normal_tail(x), normal_pdf(x), mills_psi(x)
    slack = 1e-15
    ok_tail = np.all(x / (1 + x * x) * phi <= tail * (1 + slack)) and np.all(tail <= phi / x * (1 + slack))
    ok_psi = np.all(x / (1 + x * x) <= psi * (1 + slack)) and np.all(psi <= 1 / x * (1 + slack))
    ok = bool(ok_tail and ok_psi)
    record(8, "Gaussian tail sandwich and Mills ratio at 1000 points", ok)
    assert ok


def test_09_mgf_bracket_and_normalizer():
    worst_gap = 0.0
    bracket_ok = True
    for fam in FAMILIES:
        d = make_distribution(fam)
        for n in (25, 100, 400):
            for x in (1.0, 2.0, 3.0):
                lo, mid, hi = mgf_bracket(d, n, x)
                bracket_ok &= lo <= mid <= hi
                t = build_tilted(d, n, x)
                worst_gap = max(worst_gap, rel_gap(t.normalizer**n, I_nx(d, n, x)))
    ok = bracket_ok and worst_gap < 1e-9
    record(9, "mgf bracket per variable and normalizer^n = I_{n,x}", ok,
           f"bracket_ok={bracket_ok}, max relative gap = {worst_gap:.2e}")
    assert ok


def test_10_kernel_condition():
    counts = {}
    for name in KERNELS:
        rep = check_condition_kc(builtin_kernel(name), NORMAL, trials=10**6, stream=SeedStream(110).child(name))
        counts[name] = rep.violations
    ok = not any(counts.values())
    record(10, "kernel domination condition, 1e6 tuples + stress grid", ok, f"violations {counts}")
    assert ok


def test_11_subgaussian():
    cases = [(NORMAL, 100), (make_distribution("exponential-centered"), 50), (RADEMACHER, 10)]
    rows = []
    for d, n in cases:
        rows += subgaussian_check(d, n, x_grid=(1.0, 2.0, 3.0), reps=10**5, stream=SeedStream(111).child(d.family))
    exact = [r for r in rows if r.exact]
    bad = [(r.kind, r.level) for r in rows if not r.exceedance <= r.bound]
    ok = not bad and len(exact) == 6
    record(11, "sub-Gaussian exceedances below their bounds", ok,
           f"{len(rows)} rows ({len(exact)} exact), failures={bad}")
    assert ok


def test_12_reproducibility(tmp_path):
    cfg = tmp_path / "repro.toml"
    cfg.write_text('statistic = "studentized-u"\nkernel = "gini"\nn_list = [12, 20]\n'
                   'x_grid = [0.5, 1.0, 2.0]\nreps = 20000\nblock_size = 2500\nseed = 112\n'
                   'estimator = "both"\n')
    outs = []
    for tag, workers in (("a", "1"), ("b", "1"), ("c", "4")):
        out = tmp_path / tag
        assert cli.main(["ratio-curve", "--config", str(cfg), "--out", str(out), "--workers", workers]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
    ok = outs[0] == outs[1] == outs[2] and len(outs[0]) == 2
    record(12, "identical CSV bytes across runs and for workers 1 vs 4", ok)
    assert ok


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(pytest.main([__file__, "-q"]))
