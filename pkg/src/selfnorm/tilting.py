"""Exponentially tilted (conjugated) laws and importance-sampled tail estimates.

For a standardized score ``s`` and ``xi = s(X) / sqrt(n)`` the tilt is

    g(X) = x xi - x^2 xi^2 / 2,        dP^(X) = e^{g(X)} dF(X) / E e^{g(X)}.

Under ``P^`` the event ``{S/V >= x}`` is no longer rare, and for any event A

    P(A) = (E e^g)^n  E^[ exp(-sum g(X^_i)) 1_A ].

The tilted law is tabulated on a grid that is uniform in ``z = logit F(X)``,
i.e. dense wherever ``F`` puts mass, with Gauss-Legendre quadrature on every
cell.  This quadrature path is independent of the adaptive one in
:mod:`selfnorm.bounds`, so the two normalizers can be checked against each
other.  Sampling inverts the tabulated CDF with monotone cubic interpolation
in logit coordinates.  Normal laws with the identity score are tilted in
closed form and discrete laws are reweighted atom by atom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special
from scipy.interpolate import PchipInterpolator

from .bounds import Score, score_for
from .distributions import DistributionSpec
from .errors import DegenerateWeightsError
from .kernels import KernelSpec, theta as kernel_theta
from .rng import SeedStream, as_generator
from .ustat import studentize_batch

Z_RANGE = 36.0
GL_NODES = 8
DEFAULT_BLOCK = 10_000
MIN_ESS = 10.0

_gl_t, _gl_w = np.polynomial.legendre.leggauss(GL_NODES)


@dataclass(frozen=True)
class TiltedMoments:
    """Per-variable moments of Y^ = g(X^)."""

    m1: float
    var: float
    abs3: float


@dataclass(frozen=True, eq=False)
class TiltedDistribution:
    base: DistributionSpec
    n: int
    x: float
    normalizer: float
    grid_y: np.ndarray  # support points (cell edges, or atoms)
    grid_cdf: np.ndarray  # V at grid_y
    moments: TiltedMoments
    score: Score
    _sampler: Callable[[tuple, np.random.Generator], np.ndarray]

    @property
    def log_normalizer(self) -> float:
        return math.log(self.normalizer)

    def g(self, y) -> np.ndarray:
        a = self.x * np.asarray(self.score(y), dtype=float) / math.sqrt(self.n)
        return a - 0.5 * a * a

    def cdf(self, y) -> np.ndarray:
        """Tilted CDF V by interpolation on the table (exact at grid points)."""
        return np.interp(y, self.grid_y, self.grid_cdf, left=0.0, right=1.0)

    def sample(self, size, stream) -> np.ndarray:
        return self._sampler(size, as_generator(stream))


def _z_to_x(dist, z):
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    lo = z < 0
    out[lo] = dist.ppf(special.expit(z[lo]))
    out[~lo] = dist.isf(special.expit(-z[~lo]))
    return out


def _continuous_table(dist, score, n, x, grid_size):
    edges = np.linspace(-Z_RANGE, Z_RANGE, grid_size + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    z = mid[:, None] + half[:, None] * _gl_t[None, :]
    u = special.expit(z)
    dens = u * (1.0 - u) * half[:, None] * _gl_w[None, :]  # dF in z-coordinates
    xs = _z_to_x(dist, z)
    a = x * np.asarray(score(xs), dtype=float) / math.sqrt(n)
    g = a - 0.5 * a * a
    eg = np.exp(g)
    base_mass = dens.sum()
    # 1 + E(e^g - 1) keeps the small deviation of the normalizer from 1 exact
    Z = 1.0 + float(np.sum(np.expm1(g) * dens)) - (1.0 - base_mass)
    wt = eg * dens
    cell = wt.sum(axis=1)
    total = cell.sum()
    m1 = float(np.sum(g * wt) / total)
    m2 = float(np.sum(g * g * wt) / total)
    m3 = float(np.sum(np.abs(g) ** 3 * wt) / total)
    lower = np.concatenate([[0.0], np.cumsum(cell)])
    upper = np.concatenate([np.cumsum(cell[::-1])[::-1], [0.0]])
    grid_y = _z_to_x(dist, edges)
    return Z, TiltedMoments(m1, max(m2 - m1 * m1, 0.0), m3), grid_y, lower, upper, edges


def build_tilted(dist: DistributionSpec, n: int, x: float, grid_size: int = 4096,
                 kernel: KernelSpec | None = None) -> TiltedDistribution:
    """Tabulate the law of X^ tilted at level ``x`` (``kernel`` selects the score)."""
    if x < 0:
        raise ValueError("tilt level x must be >= 0")
    if grid_size < 256:
        raise ValueError("grid_size must be >= 256")
    if n < 1:
        raise ValueError("n must be >= 1")
    score = score_for(dist, kernel)

    if x == 0:
        if dist.is_discrete:
            grid_y, probs = dist.atoms()
            grid_cdf = np.cumsum(probs)
        else:
            edges = np.linspace(-Z_RANGE, Z_RANGE, grid_size + 1)
            grid_y, grid_cdf = _z_to_x(dist, edges), special.expit(edges)
        return TiltedDistribution(dist, n, 0.0, 1.0, grid_y, grid_cdf,
                                  TiltedMoments(0.0, 0.0, 0.0), score,
                                  lambda size, gen: dist.sample(size, gen))

    if dist.is_discrete:
        vals, probs = dist.atoms()
        a = x * np.asarray(score(vals), dtype=float) / math.sqrt(n)
        g = a - 0.5 * a * a
        wt = probs * np.exp(g)
        Z = float(wt.sum())
        w = wt / Z
        m1 = float(np.sum(w * g))
        mom = TiltedMoments(m1, float(np.sum(w * g * g) - m1 * m1), float(np.sum(w * np.abs(g) ** 3)))
        cdf = np.cumsum(w)
        cdf[-1] = 1.0

        def sampler(size, gen, vals=vals, cdf=cdf):
            return vals[np.searchsorted(cdf, gen.random(size), side="right")]

        return TiltedDistribution(dist, n, float(x), Z, vals, cdf, mom, score, sampler)

    Z, mom, grid_y, lower, upper, edges = _continuous_table(dist, score, n, x, grid_size)
    total = lower[-1]
    grid_cdf = lower / total

    if dist.family == "normal" and score.identity_scale is not None:
        # exact Gaussian tilt: in xi units, N(0, 1/n) becomes N(x/(n+x^2), 1/(n+x^2))
        prec = n + x * x
        Z = math.sqrt(n / prec) * math.exp(x * x / (2.0 * prec))
        scale = dist.sigma * math.sqrt(n)
        mu, sd = x / prec, 1.0 / math.sqrt(prec)

        def sampler(size, gen, scale=scale, mu=mu, sd=sd):
            return scale * (mu + sd * gen.standard_normal(size))
    else:
        with np.errstate(divide="ignore"):
            logit = np.log(lower) - np.log(upper)
        keep = np.isfinite(logit)
        lz, zz = logit[keep], edges[keep]
        strict = np.concatenate([[True], np.diff(lz) > 0])
        lz, zz = lz[strict], zz[strict]
        inv = PchipInterpolator(lz, zz, extrapolate=False)
        lo_l, hi_l = lz[0], lz[-1]

        def sampler(size, gen, inv=inv, lo_l=lo_l, hi_l=hi_l):
            u = gen.random(size)
            with np.errstate(divide="ignore"):
                lu = np.clip(special.logit(u), lo_l, hi_l)
            return _z_to_x(dist, inv(lu))

    return TiltedDistribution(dist, n, float(x), float(Z), grid_y, grid_cdf, mom, score, sampler)


def tilted_moments(tilted: TiltedDistribution) -> tuple[float, float, float]:
    """(m_n, sigma_n^2, v_n): sums over the n variables of E Y^, Var Y^, E|Y^|^3."""
    m = tilted.moments
    n = tilted.n
    return n * m.m1, n * m.var, n * m.abs3


def sample_tilted(tilted: TiltedDistribution, n: int, stream) -> np.ndarray:
    return tilted.sample(n, stream)


# ---------------------------------------------------------------------------
# tail estimation


@dataclass(frozen=True)
class TailEstimate:
    estimate: float
    se: float
    reps: int
    method: str
    ess: float
    experimental: bool = False

    @property
    def rel_se(self) -> float:
        return self.se / self.estimate if self.estimate > 0 else math.inf


@dataclass(frozen=True)
class TailStats:
    """Additive sufficient statistics of a block of weighted indicators."""

    count: int
    sum_w: float
    sum_w2: float

    def __add__(self, other: "TailStats") -> "TailStats":
        return TailStats(self.count + other.count, self.sum_w + other.sum_w,
                         self.sum_w2 + other.sum_w2)


STATISTICS = ("self-normalized-sum", "studentized-u")


def self_normalized_sum(samples: np.ndarray) -> np.ndarray:
    s = samples.sum(axis=-1)
    v = np.sqrt((samples * samples).sum(axis=-1))
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(v > 0, s / np.where(v > 0, v, 1.0), np.nan)


def statistic_function(statistic, dist: DistributionSpec, kernel: KernelSpec | None = None):
    """Resolve a statistic name (or a batched callable) to rows -> values."""
    if callable(statistic):
        return statistic
    if statistic == "self-normalized-sum":
        return self_normalized_sum
    if statistic == "studentized-u":
        if kernel is None:
            raise ValueError("the studentized-u statistic needs a kernel")
        th = kernel_theta(kernel, dist)
        return lambda rows: studentize_batch(rows, kernel, th)
    raise ValueError(f"unknown statistic {statistic!r}; expected one of {STATISTICS} or a callable")


def tail_block(dist: DistributionSpec, stat, n: int, x: float, size: int, stream,
               tilted: TiltedDistribution | None = None) -> TailStats:
    """Simulate ``size`` samples and return weighted-indicator sums for {stat >= x}."""
    gen = as_generator(stream)
    if tilted is None or tilted.x == 0:
        rows = dist.sample((size, n), gen)
        hit = stat(rows) >= x
        k = int(np.count_nonzero(hit))
        return TailStats(size, float(k), float(k))
    rows = tilted.sample((size, n), gen)
    hit = stat(rows) >= x
    logw = n * tilted.log_normalizer - tilted.g(rows[hit]).sum(axis=-1)
    w = np.exp(logw)
    return TailStats(size, float(np.sum(w)), float(np.sum(w * w)))


def finalize(stats: TailStats, method: str, experimental: bool = False,
             check_ess: bool = True) -> TailEstimate:
    r = stats.count
    p = stats.sum_w / r
    var = max(stats.sum_w2 / r - p * p, 0.0)
    se = math.sqrt(var / (r - 1)) if r > 1 else math.inf
    if method == "plain":
        ess = float(r)
    else:
        ess = stats.sum_w**2 / stats.sum_w2 if stats.sum_w2 > 0 else 0.0
        if check_ess and ess < MIN_ESS:
            raise DegenerateWeightsError(
                f"effective sample size {ess:.3g} < {MIN_ESS:g}; the tilt misses the event"
            )
    return TailEstimate(p, se, r, method, ess, experimental)


def _blocks(reps, block):
    out, b = [], 0
    while reps > 0:
        out.append((b, min(block, reps)))
        reps -= block
        b += 1
    return out


def _root(stream) -> SeedStream:
    if isinstance(stream, SeedStream):
        return stream
    if isinstance(stream, (int, np.integer)):
        return SeedStream(int(stream))
    raise TypeError("tail estimators need a SeedStream or an int seed")


def estimate_tail_plain(dist: DistributionSpec, statistic, n: int, x: float, reps: int, stream,
                        kernel: KernelSpec | None = None,
                        block: int = DEFAULT_BLOCK) -> TailEstimate:
    """Indicator mean of {T >= x} under the base law with its binomial standard error."""
    if reps < 100:
        raise ValueError("reps must be >= 100")
    stat = statistic_function(statistic, dist, kernel)
    root = _root(stream)
    total = TailStats(0, 0.0, 0.0)
    for b, size in _blocks(reps, block):
        total = total + tail_block(dist, stat, n, x, size, root.child("block", b))
    return finalize(total, "plain")


def estimate_tail_tilted(dist: DistributionSpec, event=None, n: int = 10, x_tilt: float = 0.0,
                         reps: int = 10_000, stream=0, x: float | None = None,
                         statistic="self-normalized-sum", kernel: KernelSpec | None = None,
                         block: int = DEFAULT_BLOCK, grid_size: int = 4096) -> TailEstimate:
    """Importance-sampled P{T >= x} with the tilt at ``x_tilt``.

    ``event`` may be a batched predicate of the sample rows; by default the
    event is {statistic >= x} with ``x`` defaulting to ``x_tilt``.  Weights
    are formed in log space.  With a kernel the tilt acts on the linear part
    only, so such estimates are flagged experimental.
    """
    if reps < 100:
        raise ValueError("reps must be >= 100")
    x = x_tilt if x is None else x
    if event is None:
        stat = statistic_function(statistic, dist, kernel)
        thr = x
    else:
        stat = lambda rows: np.where(event(rows), 1.0, 0.0)  # noqa: E731
        thr = 0.5
    tilt_kernel = kernel if statistic == "studentized-u" else None
    tilted = build_tilted(dist, n, x_tilt, grid_size, kernel=tilt_kernel)
    root = _root(stream)
    total = TailStats(0, 0.0, 0.0)
    for b, size in _blocks(reps, block):
        total = total + tail_block(dist, stat, n, thr, size, root.child("block", b), tilted)
    method = "plain" if x_tilt == 0 else "tilted"
    return finalize(total, method, experimental=tilt_kernel is not None and x_tilt > 0)
