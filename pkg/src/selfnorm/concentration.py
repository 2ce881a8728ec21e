"""Stein-equation utilities and Monte Carlo checks of explicit-constant inequalities.

The solution of ``f'(w) - w f(w) = I(w <= x) - Phi(x)`` is evaluated through
the Mills ratio so no ``exp(w^2/2)`` factor is ever formed:

    f_x(w) = Psi(-w) (1 - Phi(x))   for w <= x,
             Psi(w) Phi(x)          for w >  x,      Psi(t) = (1 - Phi(t)) / phi(t).

Throughout, ``xi_i = X_i / (sigma sqrt(n))`` so that ``sum E xi_i^2 = 1``.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import special

from .bounds import mills_psi, normal_pdf
from .distributions import DistributionSpec, make_distribution
from .rng import SeedStream

SQRT_2PI = math.sqrt(2.0 * math.pi)
BLOCK = 10_000
EXACT_LIMIT = 1 << 16


# ---------------------------------------------------------------------------
# Stein solution


def stein_f(x, w):
    x, w = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(w, dtype=float))
    lower = mills_psi(-w) * special.ndtr(-x)
    upper = mills_psi(w) * special.ndtr(x)
    out = np.where(w <= x, lower, upper)
    return float(out) if out.ndim == 0 else out


def stein_f_partial_x(x, w):
    """Derivative of f_x(w) in the threshold x."""
    x, w = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(w, dtype=float))
    phi = normal_pdf(x)
    out = np.where(w <= x, -mills_psi(-w) * phi, mills_psi(w) * phi)
    return float(out) if out.ndim == 0 else out


def stein_equation_residual(x, w, h: float = 1e-4):
    """|f'(w) - w f(w) - I(w <= x) + Phi(x)| with f' by central differences."""
    x = np.asarray(x, dtype=float)
    w = np.asarray(w, dtype=float)
    deriv = (stein_f(x, w + h) - stein_f(x, w - h)) / (2.0 * h)
    rhs = np.where(w <= x, 1.0, 0.0) - special.ndtr(x)
    return np.abs(deriv - w * stein_f(x, w) - rhs)


@dataclass(frozen=True)
class SteinReport:
    """Largest excess over each bound on the grid (<= 0 means the bound holds)."""

    points: int
    wf_excess: float  # max |w f| - 1
    f_excess: float  # max |f| - 1
    diff_excess: float  # max |wf(w) - (w+t)f(w+t)| - min{1, (|w| + sqrt(2 pi)/4)|t|}
    dfdx_excess: float  # max |df/dx| - 1
    tol: float = 1e-9

    @property
    def ok(self) -> bool:
        return max(self.wf_excess, self.f_excess, self.diff_excess, self.dfdx_excess) <= self.tol


def stein_property_check(xs=None, ws=None, ts=None, tol: float = 1e-9) -> SteinReport:
    """Evaluate the bounded-solution properties on the grid xs x ws x ts."""
    xs = np.linspace(-6, 6, 241) if xs is None else np.asarray(xs, dtype=float)
    ws = np.linspace(-6, 6, 241) if ws is None else np.asarray(ws, dtype=float)
    ts = (np.array([-2, -1, -0.5, -0.1, -0.01, 0, 0.01, 0.1, 0.5, 1, 2], dtype=float)
          if ts is None else np.asarray(ts, dtype=float))
    X, Wg = np.meshgrid(xs, ws, indexing="ij")
    f = stein_f(X, Wg)
    wf = Wg * f
    diff = -np.inf
    for t in ts:
        g = (Wg + t) * stein_f(X, Wg + t)
        bound = np.minimum(1.0, (np.abs(Wg) + SQRT_2PI / 4.0) * abs(t))
        diff = max(diff, float(np.max(np.abs(wf - g) - bound)))
    return SteinReport(
        points=X.size * len(ts),
        wf_excess=float(np.max(np.abs(wf)) - 1.0),
        f_excess=float(np.max(np.abs(f)) - 1.0),
        diff_excess=diff,
        dfdx_excess=float(np.max(np.abs(stein_f_partial_x(X, Wg))) - 1.0),
        tol=tol,
    )


# ---------------------------------------------------------------------------
# randomized concentration inequality


@dataclass(frozen=True)
class DeltaChoice:
    """Band endpoints (Delta_1, Delta_2) and leave-one-out versions.

    ``func(xi)`` maps rows of shape (reps, n) to two arrays of shape (reps,);
    ``loo(xi)`` maps them to two arrays of shape (reps, n) whose column i
    must not depend on xi_i.  That independence is checked by construction
    for the built-in choices and assumed for custom ones.
    """

    kind: str
    func: Callable
    loo: Callable
    params: tuple = ()

    @property
    def independence_assumed(self) -> bool:
        return self.kind == "custom"

    def label(self) -> str:
        return f"{self.kind}{self.params}" if self.params else self.kind


def constants(a: float, b: float) -> DeltaChoice:
    def func(xi):
        r = xi.shape[0]
        return np.full(r, float(a)), np.full(r, float(b))

    def loo(xi):
        return np.full(xi.shape, float(a)), np.full(xi.shape, float(b))

    return DeltaChoice("constants", func, loo, (float(a), float(b)))


def v_squared_band(c: float) -> DeltaChoice:
    """Delta_1 = -c (V^2 - 1)^2, Delta_2 = c (V^2 - 1)^2; V^(i)^2 = V^2 - xi_i^2."""

    def func(xi):
        d = c * ((xi * xi).sum(axis=1) - 1.0) ** 2
        return -d, d

    def loo(xi):
        v2 = (xi * xi).sum(axis=1, keepdims=True) - xi * xi
        d = c * (v2 - 1.0) ** 2
        return -d, d

    return DeltaChoice("v-squared-band", func, loo, (float(c),))


def custom(func: Callable, loo: Callable) -> DeltaChoice:
    return DeltaChoice("custom", func, loo)


@dataclass(frozen=True)
class ConcentrationConfig:
    dist: DistributionSpec
    n: int
    delta: DeltaChoice
    reps: int = 100_000
    stream: SeedStream = field(default_factory=lambda: SeedStream(0))

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if self.reps < 1000:
            raise ValueError("reps must be >= 1000")


@dataclass(frozen=True)
class ConcentrationReport:
    label: str
    lhs: float
    lhs_se: float
    rhs: float
    rhs_se: float
    beta2: float
    beta3: float
    band_term: float  # 5 E|Delta_2 - Delta_1|
    loo_term: float  # 2 sum_i sum_j E|xi_i (Delta_j - Delta_j^(i))|
    independence_assumed: bool

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    @property
    def combined_se(self) -> float:
        return math.hypot(self.lhs_se, self.rhs_se)

    @property
    def verdict(self) -> bool:
        return self.lhs <= self.rhs + 3.0 * self.combined_se


def betas(dist: DistributionSpec, n: int) -> tuple[float, float]:
    """beta_2 = sum E xi^2 I(|xi| > 1), beta_3 = sum E |xi|^3 I(|xi| <= 1)."""
    s = dist.sigma * math.sqrt(n)
    b2 = dist.expect(lambda t: (t / s) ** 2 if abs(t) > s else 0.0, points=[-s, s])
    b3 = dist.expect(lambda t: abs(t / s) ** 3 if abs(t) <= s else 0.0, points=[-s, s])
    return n * b2, n * b3


def concentration_check(config: ConcentrationConfig) -> ConcentrationReport:
    """Monte Carlo LHS and RHS of the randomized concentration inequality."""
    dist, n, choice = config.dist, config.n, config.delta
    scale = 1.0 / (dist.sigma * math.sqrt(n))
    b2, b3 = betas(dist, n)
    hits = 0
    band = []
    loo_sum = []
    remaining, b = config.reps, 0
    while remaining > 0:
        size = min(BLOCK, remaining)
        xi = dist.sample((size, n), config.stream.child("conc", b)) * scale
        W = xi.sum(axis=1)
        d1, d2 = choice.func(xi)
        l1, l2 = choice.loo(xi)
        hits += int(np.count_nonzero((d1 <= W) & (W <= d2)))
        band.append(5.0 * np.abs(d2 - d1))
        loo_sum.append(2.0 * (np.abs(xi * (d1[:, None] - l1)) + np.abs(xi * (d2[:, None] - l2))).sum(axis=1))
        remaining -= size
        b += 1
    r = config.reps
    p = hits / r
    band = np.concatenate(band)
    loo_sum = np.concatenate(loo_sum)
    per_rep = band + loo_sum
    return ConcentrationReport(
        label=f"{dist.family} n={n} {choice.label()}",
        lhs=p,
        lhs_se=math.sqrt(p * (1.0 - p) / r),
        rhs=17.0 * (b2 + b3) + float(per_rep.mean()),
        rhs_se=float(per_rep.std(ddof=1) / math.sqrt(r)),
        beta2=b2,
        beta3=b3,
        band_term=float(band.mean()),
        loo_term=float(loo_sum.mean()),
        independence_assumed=choice.independence_assumed,
    )


SUITE_LAWS = (
    ("normal", {}),
    ("rademacher", {}),
    ("exponential-centered", {}),
    ("uniform-centered", {}),
    ("pareto-centered", {"alpha": 3.5}),
)
SUITE_NS = (10, 100)


def default_suite(reps: int = 100_000, seed: int = 0,
                  include_empty_band: bool = True) -> list[ConcentrationConfig]:
    """Five laws x n in {10, 100} x two band choices, plus one reversed (empty) band."""
    root = SeedStream(seed)
    out = []
    for fam, params in SUITE_LAWS:
        dist = make_distribution(fam, **params)
        for n in SUITE_NS:
            for choice in (v_squared_band(1.0), constants(-0.1, 0.1)):
                out.append(ConcentrationConfig(dist, n, choice, reps,
                                               root.child(fam, n, choice.label())))
    if include_empty_band:
        dist = make_distribution("normal")
        choice = constants(0.1, -0.1)
        out.append(ConcentrationConfig(dist, 10, choice, reps, root.child("empty", 10)))
    return out


# ---------------------------------------------------------------------------
# sub-Gaussian bounds


@dataclass(frozen=True)
class SubGaussianRow:
    kind: str  # "lsw" for P(|S| >= x D), "w-band" for P(|W| >= t(4 + V))
    level: float
    exceedance: float
    se: float
    bound: float
    exact: bool

    @property
    def verdict(self) -> bool:
        return self.exceedance <= self.bound + 3.0 * self.se


def _lsw_event(xi, x):
    s = xi.sum(axis=-1)
    d = np.sqrt((xi * xi).sum(axis=-1) + 5.0)
    return np.abs(s) >= x * d


def _wband_event(xi, t):
    w = xi.sum(axis=-1)
    v = np.sqrt((xi * xi).sum(axis=-1))
    return np.abs(w) >= t * (4.0 + v)


def _exact_outcomes(dist, n):
    vals, probs = dist.atoms()
    idx = np.array(list(itertools.product(range(len(vals)), repeat=n)))
    return vals[idx], np.prod(probs[idx], axis=1)


def subgaussian_check(dist: DistributionSpec, n: int, x_grid=(1.0, 2.0, 3.0), reps: int = 100_000,
                      stream=None, t_grid=None) -> list[SubGaussianRow]:
    """Exceedance probabilities against sqrt(2) e^{-x^2/8} and 4 e^{-t^2/2}.

    Discrete laws with at most 2^16 outcomes are enumerated exactly.
    """
    t_grid = x_grid if t_grid is None else t_grid
    scale = 1.0 / (dist.sigma * math.sqrt(n))
    exact = dist.is_discrete and len(dist.atoms()[0]) ** n <= EXACT_LIMIT
    if exact:
        xs, w = _exact_outcomes(dist, n)
        xi = xs * scale

        def prob(event):
            return float(np.sum(w[event])), 0.0
    else:
        root = stream if isinstance(stream, SeedStream) else SeedStream(0 if stream is None else int(stream))
        xi = dist.sample((reps, n), root.child("subgaussian")) * scale

        def prob(event):
            p = float(np.mean(event))
            return p, math.sqrt(p * (1.0 - p) / reps)

    rows = []
    for x in x_grid:
        p, se = prob(_lsw_event(xi, x))
        rows.append(SubGaussianRow("lsw", float(x), p, se, math.sqrt(2.0) * math.exp(-x * x / 8.0), exact))
    for t in t_grid:
        p, se = prob(_wband_event(xi, t))
        rows.append(SubGaussianRow("w-band", float(t), p, se, 4.0 * math.exp(-t * t / 2.0), exact))
    return rows
