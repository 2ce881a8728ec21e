"""Gaussian tails and the error functionals of the moderate-deviation bounds.

All per-variable functionals are written for a standardized score
``s(X)`` with ``E s = 0`` and ``E s^2 = 1``.  For self-normalized sums the
score is ``X / sigma``; for Studentized U-statistics it is the standardized
projection ``(h1(X) - theta) / sigma``.  With ``xi = s(X) / sqrt(n)`` and
``xi_x = x * xi``:

    delta_x = E xi_x^2 I(|xi_x| > 1) + E |xi_x|^3 I(|xi_x| <= 1)
            = E min(xi_x^2, |xi_x|^3),
    L_{n,x} = n delta_x,        I_{n,x} = (E exp(xi_x - xi_x^2 / 2))^n.

Quadrature is split where ``|xi_x| = 1`` because the integrand has a kink
there.  Discrete laws are summed exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from scipy import optimize, special

from .distributions import DistributionSpec, require_third_moment
from .errors import BudgetExceededError
from .kernels import KernelSpec, sigma_h2, sigma_p as kernel_sigma_p, sigma2, standardized_h1

SQRT_2PI = math.sqrt(2.0 * math.pi)
DEFAULT_EVAL_CAP = 10**8


class Estimate(NamedTuple):
    value: float
    se: float


# ---------------------------------------------------------------------------
# Gaussian tail


def normal_tail(x):
    """1 - Phi(x) through the complementary error function."""
    out = special.ndtr(-np.asarray(x, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def normal_pdf(x):
    x = np.asarray(x, dtype=float)
    out = np.exp(-0.5 * x * x) / SQRT_2PI
    return float(out) if out.ndim == 0 else out


def mills_psi(x):
    """Mills ratio (1 - Phi(x)) / phi(x), stable for large |x|."""
    x = np.asarray(x, dtype=float)
    out = math.sqrt(math.pi / 2.0) * special.erfcx(x / math.sqrt(2.0))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# scores


@dataclass(frozen=True)
class Score:
    """A standardized score ``s`` with a way to locate ``|s(X)| = level``."""

    func: Callable[[np.ndarray], np.ndarray]
    identity_scale: float | None = None  # s(X) = X / identity_scale when set

    def __call__(self, y):
        return self.func(np.asarray(y, dtype=float))

    def level_points(self, dist: DistributionSpec, level: float) -> list[float]:
        """Points y where |s(y)| crosses ``level`` (continuous laws only)."""
        if dist.is_discrete or not math.isfinite(level):
            return []
        if self.identity_scale is not None:
            return [-level * self.identity_scale, level * self.identity_scale]
        u = np.concatenate([np.logspace(-14, -3, 60), np.linspace(1e-3, 1 - 1e-3, 1500),
                            1 - np.logspace(-3, -14, 60)])
        ys = np.asarray(dist.ppf(u), dtype=float)
        ys = ys[np.isfinite(ys)]
        vals = np.abs(self(ys)) - level
        out = []
        for a, b, fa, fb in zip(ys[:-1], ys[1:], vals[:-1], vals[1:]):
            if fa == 0.0:
                out.append(float(a))
            elif fa * fb < 0:
                out.append(float(optimize.brentq(lambda t: abs(float(self(t))) - level, a, b,
                                                 xtol=1e-14, rtol=1e-14)))
        return out


def score_for(dist: DistributionSpec, kernel: KernelSpec | None = None) -> Score:
    """Standardized score of ``dist``; through the kernel projection when given."""
    if kernel is None or kernel.name == "t":
        s = dist.sigma
        return Score(lambda y: y / s, identity_scale=s)
    return Score(standardized_h1(kernel, dist))


# ---------------------------------------------------------------------------
# delta, L, I


def delta_ix(dist: DistributionSpec, n: int, x: float, kernel: KernelSpec | None = None) -> float:
    """Per-variable truncated moment delta_{i,x} for i.i.d. inputs."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if x < 0:
        raise ValueError("x must be >= 0")
    if x == 0:
        return 0.0
    score = score_for(dist, kernel)
    c = x / math.sqrt(n)

    def integrand(t):
        a = abs(c * float(score(t)))
        return a * a * min(1.0, a)

    return dist.expect(integrand, points=score.level_points(dist, 1.0 / c))


def L_nx(dist: DistributionSpec, n: int, x: float, kernel: KernelSpec | None = None) -> float:
    return n * delta_ix(dist, n, x, kernel)


def L_n_1px(dist: DistributionSpec, n: int, x: float, kernel: KernelSpec | None = None) -> float:
    """L at tilt level 1 + x, from its exact definition."""
    return L_nx(dist, n, 1.0 + x, kernel)


def L_n_1px_chain_bound(dist: DistributionSpec, n: int, x: float,
                        kernel: KernelSpec | None = None) -> float:
    """Upper bound on L_{n,1+x} for 0 <= x <= 1 with the truncations moved to 1/2 and 1.

    (1+x)^2 n E xi^2 I(|xi| > 1/2) + (1+x)^3 n E|xi|^3 I(|xi| <= 1).
    """
    if not 0 <= x <= 1:
        raise ValueError("the chain bound applies to 0 <= x <= 1")
    score = score_for(dist, kernel)
    rn = math.sqrt(n)

    def sq_tail(t):
        a = abs(float(score(t))) / rn
        return a * a if a > 0.5 else 0.0

    def cube_body(t):
        a = abs(float(score(t))) / rn
        return a**3 if a <= 1.0 else 0.0

    pts = score.level_points(dist, 0.5 * rn) + score.level_points(dist, rn)
    return n * ((1 + x) ** 2 * dist.expect(sq_tail, pts) + (1 + x) ** 3 * dist.expect(cube_body, pts))


def per_variable_mgf(dist: DistributionSpec, n: int, x: float,
                     kernel: KernelSpec | None = None) -> float:
    """E exp(xi_x - xi_x^2 / 2), computed as 1 + E expm1(.) to keep small gaps exact."""
    if x == 0:
        return 1.0
    score = score_for(dist, kernel)
    c = x / math.sqrt(n)

    def integrand(t):
        a = c * float(score(t))
        return math.expm1(a - 0.5 * a * a)

    # the exponent peaks where xi_x = 1; split there for the quadrature
    return 1.0 + dist.expect(integrand, points=score.level_points(dist, 1.0 / c))


def I_nx(dist: DistributionSpec, n: int, x: float, kernel: KernelSpec | None = None) -> float:
    if x < 0:
        raise ValueError("x must be >= 0")
    return per_variable_mgf(dist, n, x, kernel) ** n


def mgf_bracket(dist: DistributionSpec, n: int, x: float,
                kernel: KernelSpec | None = None) -> tuple[float, float, float]:
    """(exp(-5.5 delta), E e^Y, exp(2.65 delta)) for Y = xi_x - xi_x^2/2."""
    d = delta_ix(dist, n, x, kernel)
    return math.exp(-5.5 * d), per_variable_mgf(dist, n, x, kernel), math.exp(2.65 * d)


# ---------------------------------------------------------------------------
# small-perturbation expansion of E exp(lambda X - theta X^2)


def expansion_residual(dist: DistributionSpec, scale: float, lam: float, theta: float) -> float:
    """|E e^{lam X - theta X^2} - 1 - (lam^2/2 - theta) E X^2| for X = scale * s, s standardized."""
    sc = scale / dist.sigma

    def integrand(t):
        a = sc * float(t)
        return math.expm1(lam * a - theta * a * a)

    return abs(dist.expect(integrand) - (lam * lam / 2.0 - theta) * scale * scale)


def expansion_delta(dist: DistributionSpec, scale: float) -> float:
    """delta_1 = E X^2 I(|X|>1) + E|X|^3 I(|X|<=1) for X = scale * X0 / sigma."""
    s = dist.sigma / scale
    return dist.expect(lambda t: min((t / s) ** 2, abs(t / s) ** 3), points=[-s, s])


def expansion_constant(dist: DistributionSpec, scale: float, lams=None, thetas=None):
    """Largest residual / delta_1 over a (lambda, theta) grid in [0,4] x [0.25,4].

    Returns ``(C, (lam, theta))`` at the worst grid point.
    """
    lams = np.linspace(0.0, 4.0, 9) if lams is None else lams
    thetas = np.linspace(0.25, 4.0, 6) if thetas is None else thetas
    d1 = expansion_delta(dist, scale)
    best, arg = 0.0, (float("nan"), float("nan"))
    for lam in lams:
        for th in thetas:
            c = expansion_residual(dist, scale, float(lam), float(th)) / d1
            if c > best:
                best, arg = c, (float(lam), float(th))
    return best, arg


# ---------------------------------------------------------------------------
# envelopes


def envelope_jsw(dist: DistributionSpec, n: int, x: float, C: float = 1.0) -> float:
    """C (1+x)^3 sum E|X_i|^3 / (sum E X_i^2)^{3/2} for n i.i.d. copies of ``dist``."""
    m3 = require_third_moment(dist)
    return C * (1.0 + x) ** 3 * m3 / (dist.sigma**3 * math.sqrt(n))


def jsw_x_limit(dist: DistributionSpec, n: int) -> float:
    """Upper end (sum E X^2)^{1/2} / (sum E|X|^3)^{1/3} of the range of that envelope."""
    m3 = require_third_moment(dist)
    return math.sqrt(n) * dist.sigma / (n * m3) ** (1.0 / 3.0)


def envelope_ustat(n: int, x: float, p: float, sigma_p_ratio: float, sigma_h_ratio: float,
                   a_m: float, C: float = 1.0) -> float:
    """C {(s_p/s)^p (1+x)^p / n^{p/2-1} + (sqrt(a_m) + s_h/s)(1+x)^3 / sqrt(n)}."""
    if not 2 < p <= 3:
        raise ValueError(f"p must lie in (2, 3], got {p}")
    first = sigma_p_ratio**p * (1.0 + x) ** p / n ** (p / 2.0 - 1.0)
    second = (math.sqrt(a_m) + sigma_h_ratio) * (1.0 + x) ** 3 / math.sqrt(n)
    return C * (first + second)


def ustat_x_limit(n: int, p: float, sigma_p_ratio: float, a_m: float, c1: float = 1.0) -> float:
    """c1 min{(s/s_p) n^{1/2 - 1/p}, (n/a_m)^{1/6}}."""
    return c1 * min(n ** (0.5 - 1.0 / p) / sigma_p_ratio, (n / a_m) ** (1.0 / 6.0))


def ustat_in_range(n: int, x: float, p: float, sigma_p_ratio: float, a_m: float,
                   c1: float = 1.0) -> bool:
    return 0 <= x <= ustat_x_limit(n, p, sigma_p_ratio, a_m, c1)


@dataclass(frozen=True)
class KernelRatios:
    """Dimensionless kernel constants entering the U-statistic envelope."""

    p: float
    sigma_p_ratio: float
    sigma_h_ratio: float
    a_m: float


def kernel_ratios(kernel: KernelSpec, dist: DistributionSpec, p: float = 3.0) -> KernelRatios:
    s = math.sqrt(sigma2(kernel, dist))
    return KernelRatios(
        p=p,
        sigma_p_ratio=kernel_sigma_p(kernel, dist, p) / s,
        sigma_h_ratio=math.sqrt(sigma_h2(kernel, dist)) / s,
        a_m=kernel.a_m(dist),
    )


# ---------------------------------------------------------------------------
# perturbation functionals


def _check_budget(reps, n, m, cap):
    evals = reps * n * math.comb(n - 1, m - 1)
    if evals > cap:
        raise BudgetExceededError(
            f"{evals} kernel evaluations exceed the budget {cap}; lower reps or n"
        )


def _loo_terms(dec, x, use_D3, C4):
    """Return per-observation |D1 - D1^(i)| + x |D2 - D2^(i)| and the A term."""
    d1 = abs(dec.D1n)
    d1_loo = np.abs(dec.D1n - dec.D1_loo())
    if use_D3:
        d2 = dec.D3n(x, C4)
        d2_loo = np.abs(d2 - dec.D3n_loo(x, C4))
    else:
        d2 = abs(dec.D2n)
        with np.errstate(invalid="ignore"):
            d2_loo = np.abs(dec.D2n - dec.D2_loo())
        d2_loo = np.nan_to_num(d2_loo, nan=0.0)
    return d1, d2, d1_loo + x * d2_loo


def estimate_Rnx(dist: DistributionSpec, kernel: KernelSpec, n: int, x: float, reps: int,
                 stream, use_D3: bool = False, C4: float = 1.0,
                 cap: int = DEFAULT_EVAL_CAP) -> Estimate:
    """Monte Carlo estimate of R_{n,x} through the conjugated (tilted) law.

    The first addend is the tilted mean of x|D1| + x^2|D2|.  For the second,
    observation 1 is drawn from the base law and the rest from the tilted
    law; each summand then equals E_mixed[...] / E e^Y and the n summands
    are equal by exchangeability.  ``use_D3`` swaps |D2| for its bound D3.
    """
    from .tilting import build_tilted  # tilting depends on this module
    from .ustat import hoeffding_decompose

    if reps < 2:
        raise ValueError("reps must be >= 2")
    _check_budget(reps, n, kernel.degree, cap)
    tilted = build_tilted(dist, n, x, kernel=kernel)
    root = stream_root(stream)
    g1, g2 = root.child("R-first").generator(), root.child("R-second").generator()
    score = score_for(dist, kernel)

    first = np.empty(reps)
    second = np.empty(reps)
    for r in range(reps):
        xs = tilted.sample(n, g1)
        dec = hoeffding_decompose(xs, kernel, dist, relax=True)
        d1, d2, _ = _loo_terms(dec, x, use_D3, C4)
        first[r] = x * d1 + x * x * d2

        xs = tilted.sample(n, g2)
        xs[0] = dist.sample(1, g2)[0]
        dec = hoeffding_decompose(xs, kernel, dist, relax=True)
        _, _, loo = _loo_terms(dec, x, use_D3, C4)
        xi_x = x * float(score(xs[0])) / math.sqrt(n)
        second[r] = n * min(abs(xi_x), 1.0) * loo[0] / tilted.normalizer

    value = float(first.mean() + second.mean())
    se = math.sqrt(first.var(ddof=1) / reps + second.var(ddof=1) / reps)
    return Estimate(value, se)


def estimate_breve_Rnx(dist: DistributionSpec, kernel: KernelSpec, n: int, x: float, reps: int,
                       stream, cap: int = DEFAULT_EVAL_CAP) -> Estimate:
    """Plain Monte Carlo estimate of breve R_{n,x}.

    L_{n,1+x} is exact; the expectations are averaged per replicate, with the
    sum over i taken inside each replicate.
    """
    from .ustat import hoeffding_decompose

    if reps < 2:
        raise ValueError("reps must be >= 2")
    _check_budget(reps, n, kernel.degree, cap)
    gen = stream_root(stream).child("breve").generator()
    cut = 1.0 / (1.0 + x)
    vals = np.empty(reps)
    for r in range(reps):
        xs = dist.sample(n, gen)
        dec = hoeffding_decompose(xs, kernel, dist, relax=True)
        d1, d2, loo = _loo_terms(dec, x, False, 1.0)
        xi = dec.xi
        w = np.where(np.abs(xi) <= cut, np.abs(xi), 0.0)
        vals[r] = d1 + x * d2 + float(np.sum(w * loo))
    L = L_n_1px(dist, n, x, kernel)
    return Estimate(L + float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(reps)))


def stream_root(stream):
    from .rng import SeedStream

    if isinstance(stream, SeedStream):
        return stream
    if isinstance(stream, (int, np.integer)):
        return SeedStream(int(stream))
    raise TypeError("perturbation estimators need a SeedStream or an int seed")


# ---------------------------------------------------------------------------
# report


@dataclass(frozen=True)
class BoundReport:
    x: float
    n: int
    delta_x: float
    L_nx: float
    I_nx: float
    c1_condition: bool  # max delta_{i,x} <= 1
    rc_condition: bool  # L_{n,x} <= c1 x^2
    c1_param: float
    envelope_jsw: float | None
    envelope_ustat: float | None
    in_range: bool | None
    R_nx_estimate: Estimate | None = None
    breve_R_estimate: Estimate | None = None
    extras: dict = field(default_factory=dict)


def bound_report(dist: DistributionSpec, n: int, x: float, kernel: KernelSpec | None = None,
                 p: float = 3.0, C: float = 1.0, c1: float = 1.0, R_reps: int = 0,
                 stream=None) -> BoundReport:
    """Deterministic bound quantities at (n, x), optionally with R estimates."""
    d = delta_ix(dist, n, x, kernel)
    L = n * d
    I = per_variable_mgf(dist, n, x, kernel) ** n
    env_jsw = env_u = in_range = None
    if kernel is None:
        if math.isfinite(dist.abs_moment(3.0)):
            env_jsw = envelope_jsw(dist, n, x, C)
            in_range = x <= jsw_x_limit(dist, n)
    else:
        kr = kernel_ratios(kernel, dist, p)
        if math.isfinite(kr.sigma_p_ratio):
            env_u = envelope_ustat(n, x, p, kr.sigma_p_ratio, kr.sigma_h_ratio, kr.a_m, C)
            in_range = ustat_in_range(n, x, p, kr.sigma_p_ratio, kr.a_m, c1)
    R = breve = None
    if R_reps and kernel is not None:
        R = estimate_Rnx(dist, kernel, n, x, R_reps, stream_root(stream).child("R", n, x))
        breve = estimate_breve_Rnx(dist, kernel, n, x, R_reps,
                                   stream_root(stream).child("breve", n, x))
    return BoundReport(
        x=float(x), n=int(n), delta_x=d, L_nx=L, I_nx=I,
        c1_condition=d <= 1.0, rc_condition=L <= c1 * x * x, c1_param=c1,
        envelope_jsw=env_jsw, envelope_ustat=env_u, in_range=in_range,
        R_nx_estimate=R, breve_R_estimate=breve,
    )
