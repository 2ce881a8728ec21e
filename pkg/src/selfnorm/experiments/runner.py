"""Experiment orchestration: ratio curves, bound reports, the concentration suite.

Monte Carlo work is cut into fixed-size blocks.  Block ``b`` of cell ``(n, x)``
always draws from ``SeedStream(seed).child(n, x, b)`` and blocks are
aggregated in index order, so results depend on ``(config, seed)`` only and
never on the number of worker processes.
"""

from __future__ import annotations

import csv
import functools
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .. import bounds as B
from ..concentration import concentration_check, default_suite
from ..kernels import check_condition_kc
from ..rng import SeedStream
from ..tilting import TailStats, build_tilted, finalize, statistic_function, tail_block
from ..ustat import hoeffding_decompose, t_star_transform
from .config import ExperimentConfig

CSV_HEADER = ("n", "x", "tail_hat", "tail_se", "gauss_tail", "ratio", "ratio_lo", "ratio_hi",
              "envelope", "L_nx", "in_range")
Z_95 = 1.959963984540054


def wilson_interval(p_hat: float, n_eff: float, z: float = Z_95) -> tuple[float, float]:
    """Wilson score interval for a proportion observed with (effective) size n_eff."""
    if n_eff <= 0 or not math.isfinite(n_eff):
        return (0.0, 1.0)
    z2 = z * z
    denom = 1.0 + z2 / n_eff
    centre = (p_hat + z2 / (2.0 * n_eff)) / denom
    half = z * math.sqrt(p_hat * (1.0 - p_hat) / n_eff + z2 / (4.0 * n_eff * n_eff)) / denom
    lo, hi = max(0.0, centre - half), min(1.0, centre + half)
    # guard against rounding at p_hat in {0, 1}
    return min(lo, p_hat), max(hi, p_hat)


# ---------------------------------------------------------------------------
# block tasks (top level so they pickle)


@functools.lru_cache(maxsize=64)
def _cached_tilted(cfg: ExperimentConfig, n: int, x: float):
    kernel = cfg.kernel_spec()
    return build_tilted(cfg.distribution(), n, x, cfg.grid_size, kernel=kernel)


def _block_task(args) -> TailStats:
    cfg, n, x, b, size, tilted = args
    dist = cfg.distribution()
    stat = statistic_function(cfg.statistic_callable(), dist, cfg.kernel_spec())
    tilt = _cached_tilted(cfg, n, x) if tilted and x > 0 else None
    return tail_block(dist, stat, n, x, size, SeedStream(cfg.seed).child(n, x, b), tilt)


def _blocks(reps: int, block: int):
    return [(b, min(block, reps - b * block)) for b in range(math.ceil(reps / block))]


def _map(func, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [func(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


# ---------------------------------------------------------------------------
# ratio curve


@dataclass(frozen=True)
class RatioRow:
    n: int
    x: float
    tail_hat: float
    tail_se: float
    gauss_tail: float
    ratio: float
    ratio_lo: float
    ratio_hi: float
    envelope: float
    L_nx: float
    in_range: bool
    method: str = "plain"
    ess: float = float("nan")

    def csv_fields(self):
        vals = [self.n, self.x, self.tail_hat, self.tail_se, self.gauss_tail, self.ratio,
                self.ratio_lo, self.ratio_hi, self.envelope, self.L_nx, self.in_range]
        return [_fmt(v) for v in vals]


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def _envelope(cfg: ExperimentConfig, n: int, x: float) -> tuple[float, bool]:
    dist = cfg.distribution()
    kernel = cfg.kernel_spec()
    if kernel is None:
        if not math.isfinite(dist.abs_moment(3.0)):
            return math.nan, False
        return B.envelope_jsw(dist, n, x, 1.0), x <= B.jsw_x_limit(dist, n)
    kr = B.kernel_ratios(kernel, dist, cfg.envelope_p)
    if not math.isfinite(kr.sigma_p_ratio):
        return math.nan, False
    env = B.envelope_ustat(n, x, kr.p, kr.sigma_p_ratio, kr.sigma_h_ratio, kr.a_m, 1.0)
    return env, B.ustat_in_range(n, x, kr.p, kr.sigma_p_ratio, kr.a_m, cfg.c1)


def run_ratio_curve(cfg: ExperimentConfig, estimator: str | None = None,
                    workers: int | None = None) -> list[RatioRow]:
    """Estimate P(T >= x) / (1 - Phi(x)) on the configured (n, x) grid."""
    estimator = cfg.estimator if estimator is None else estimator
    if estimator not in ("plain", "tilted"):
        raise ValueError("run_ratio_curve takes estimator 'plain' or 'tilted'")
    workers = cfg.workers if workers is None else workers
    tilted = estimator == "tilted"
    cells = [(n, x) for n in cfg.n_list for x in cfg.x_grid]
    tasks, owners = [], []
    for n, x in cells:
        for b, size in _blocks(cfg.reps, cfg.block_size):
            tasks.append((cfg, n, x, b, size, tilted))
            owners.append((n, x))
    results = _map(_block_task, tasks, workers)

    dist = cfg.distribution()
    kernel = cfg.kernel_spec()
    rows = []
    for n, x in cells:
        total = TailStats(0, 0.0, 0.0)
        for owner, st in zip(owners, results):
            if owner == (n, x):
                total = total + st
        method = "tilted" if tilted and x > 0 else "plain"
        est = finalize(total, method, experimental=tilted and kernel is not None)
        if method == "plain":
            n_eff = float(est.reps)
        else:
            n_eff = est.estimate * (1 - est.estimate) / est.se**2 if est.se > 0 else float(est.reps)
        lo, hi = wilson_interval(est.estimate, n_eff)
        g = B.normal_tail(x)
        env, in_range = _envelope(cfg, n, x)
        rows.append(RatioRow(
            n=n, x=x, tail_hat=est.estimate, tail_se=est.se, gauss_tail=g,
            ratio=est.estimate / g, ratio_lo=lo / g, ratio_hi=hi / g,
            envelope=env, L_nx=B.L_nx(dist, n, x, kernel), in_range=bool(in_range),
            method=method, ess=est.ess,
        ))
    return rows


def ratio_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.csv_fields())
    return buf.getvalue()


def fitted_constants(rows) -> dict:
    """C_hat = max over in-range rows of |ratio - 1| / envelope(C=1), overall and per n."""
    by_n = {}
    for r in rows:
        if r.in_range and math.isfinite(r.envelope) and r.envelope > 0:
            c = abs(r.ratio - 1.0) / r.envelope
            by_n[r.n] = max(by_n.get(r.n, 0.0), c)
    vals = list(by_n.values())
    spread = max(vals) / min(vals) if vals and min(vals) > 0 else math.inf
    return {"C_hat": max(vals) if vals else math.nan,
            "C_hat_by_n": {str(k): v for k, v in sorted(by_n.items())},
            "C_hat_spread": spread if vals else math.nan}


# ---------------------------------------------------------------------------
# bound report


def run_bound_report(cfg: ExperimentConfig, workers: int | None = None) -> dict:
    """Deterministic bound quantities per (n, x) plus the fitted envelope constant."""
    dist = cfg.distribution()
    kernel = cfg.kernel_spec()
    reports = []
    for n in cfg.n_list:
        for x in cfg.x_grid:
            rep = B.bound_report(dist, n, x, kernel=kernel, p=cfg.envelope_p, c1=cfg.c1,
                                 R_reps=cfg.R_reps if x > 0 else 0, stream=SeedStream(cfg.seed))
            reports.append(rep)
    fitted = {}
    if cfg.envelope_fit:
        rows = run_ratio_curve(cfg, "plain" if cfg.estimator == "both" else None, workers)
        fitted = fitted_constants(rows)
    return {"reports": [_report_dict(r) for r in reports], "fitted": fitted}


def _report_dict(rep: B.BoundReport) -> dict:
    d = asdict(rep)
    for k in ("R_nx_estimate", "breve_R_estimate"):
        v = getattr(rep, k)
        d[k] = None if v is None else {"value": v.value, "se": v.se}
    return d


# ---------------------------------------------------------------------------
# other commands


def run_concentration_suite(cfg: ExperimentConfig) -> dict:
    results = []
    for c in default_suite(cfg.concentration_reps, cfg.seed):
        r = concentration_check(c)
        results.append({
            "label": r.label, "lhs": r.lhs, "lhs_se": r.lhs_se, "rhs": r.rhs, "rhs_se": r.rhs_se,
            "beta2": r.beta2, "beta3": r.beta3, "band_term": r.band_term,
            "loo_term": r.loo_term, "margin": r.margin, "verdict": r.verdict,
            "independence_assumed": r.independence_assumed,
        })
    return {"results": results, "verdicts": {r["label"]: r["verdict"] for r in results}}


def run_tail(cfg: ExperimentConfig, workers: int | None = None) -> list[dict]:
    out = []
    for est in ("plain", "tilted") if cfg.estimator == "both" else (cfg.estimator,):
        for r in run_ratio_curve(cfg, est, workers):
            out.append({"n": r.n, "x": r.x, "estimator": est, "method": r.method,
                        "tail_hat": r.tail_hat, "tail_se": r.tail_se, "ess": r.ess,
                        "gauss_tail": r.gauss_tail})
    return out


def run_kernel_check(cfg: ExperimentConfig) -> dict:
    from ..kernels import builtin_kernel

    dist = cfg.distribution()
    k = builtin_kernel(cfg.kernel)
    c0, tau = k.kc_for(dist)
    rep = check_condition_kc(k, dist, c0, tau, cfg.kc_trials, SeedStream(cfg.seed).child("kc"))
    return {"kernel": k.name, "c0": c0, "tau": tau, "trials": rep.trials,
            "violations": rep.violations, "worst_margin": rep.worst_margin,
            "witness": list(rep.witness)}


def run_decompose(cfg: ExperimentConfig) -> dict:
    from ..kernels import builtin_kernel

    dist = cfg.distribution()
    k = builtin_kernel(cfg.kernel)
    n = cfg.decompose_n
    x = dist.sample(n, SeedStream(cfg.seed).child("decompose"))
    d = hoeffding_decompose(x, k, dist)
    m = k.degree
    return {
        "kernel": k.name, "n": n, "m": m, "U_n": d.U_n, "theta": d.theta, "W_n": d.W_n,
        "V_n2": d.V_n2, "D1n": d.D1n, "D2n": d.D2n, "Lambda2": d.Lambda2, "s1_2": d.s1_2,
        "s1_star_2": d.s1_star_2, "T_n": d.T_n, "T_star": d.T_star,
        "identity_residuals": {
            "jackknife": (n - m) ** 2 / (n - 1) * d.s1_2 - (float(np.sum(d.q**2)) - n * d.U_n**2),
            "variance": d.s1_star_2 - d.V_n2 * (1 + d.D2n),
            "hoeffding": math.sqrt(n) * (d.U_n - d.theta) / (m * d.sigma) - (d.W_n + d.D1n),
            "t_star": d.T_star - (d.W_n + d.D1n) / (d.V_n * math.sqrt(1 + d.D2n)),
            "threshold_map": t_star_transform(d.T_n, n, m) - d.T_star,
        },
    }


# ---------------------------------------------------------------------------
# persistence


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else repr(f)
    return v


def json_report(cfg: ExperimentConfig, results, fitted=None, verdicts=None,
                started: float | None = None) -> str:
    doc = {
        "config_echo": cfg.echo(),
        "results": results,
        "fitted_constants": fitted or {},
        "verdicts": verdicts or {},
        "runtime_seconds": 0.0 if started is None else time.perf_counter() - started,
        "seed": cfg.seed,
    }
    return json.dumps(_jsonable(doc), indent=2, sort_keys=True) + "\n"


def rows_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    w = csv.writer(buf, lineterminator="\n")
    keys = list(rows[0])
    w.writerow(keys)
    for r in rows:
        w.writerow([_fmt(r[k]) if isinstance(r[k], (int, float, bool, np.number)) else r[k]
                    for k in keys])
    return buf.getvalue()
