"""Symmetric U-statistic kernels and their Hoeffding projections.

Four kernels of degree two are built in (``t``, ``variance``, ``gini``,
``wilcoxon``), each carrying closed-form or quadrature-backed projections
``h1``, the mean ``theta``, ``sigma2 = Var h1(X)`` and ``sigma_h2 = Var h``,
plus the constants ``(c0, tau)`` of the quadratic domination condition

    {h(x_1..x_m) - theta}^2 <= c0 [tau * sigma2 + sum_i {h1(x_i) - theta}^2].

User kernels can be registered with :func:`register_kernel`; anything they do
not supply is estimated by Monte Carlo.
"""

from __future__ import annotations

import functools
import itertools
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .distributions import DistributionSpec
from .errors import (
    ArityError,
    DegenerateKernelError,
    InfiniteMomentError,
    UnknownKernelError,
)
from .rng import SeedStream, as_generator

SIGMA2_FLOOR = 1e-12
_MC_SEED = 0x5EED_0F_0C


@dataclass(frozen=True)
class KCConstants:
    """``c0`` and a ``tau`` that is either a number or a rule of (theta, sigma2)."""

    c0: float
    tau: float | Callable[[float, float], float]
    tau_text: str = ""

    def bind(self, theta: float, sigma2: float) -> tuple[float, float]:
        tau = self.tau(theta, sigma2) if callable(self.tau) else float(self.tau)
        return float(self.c0), float(tau)


class Projection(NamedTuple):
    value: float
    se: float


class ViolationReport(NamedTuple):
    trials: int
    violations: int
    worst_margin: float
    witness: tuple


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """A symmetric kernel of fixed degree.

    ``func`` is vectorised: it maps an array of shape ``(..., degree)`` to an
    array of shape ``(...)``.  The optional callables supply exact
    projections and moments; when absent the generic Monte Carlo fallbacks
    are used.  ``linear`` marks kernels whose degenerate remainder
    ``h - sum h1`` is identically zero, so decompositions can use an exact 0
    instead of a rounding residue.  ``jackknife`` is an optional O(n log n)
    routine returning the leave-one-out averages ``q`` for a batch of samples
    of shape ``(reps, n)``.
    """

    name: str
    degree: int
    func: Callable[[np.ndarray], np.ndarray]
    kc: KCConstants | None = None
    linear: bool = False
    h1_exact: Callable[[DistributionSpec, np.ndarray], np.ndarray] | None = None
    theta_exact: Callable[[DistributionSpec], float] | None = None
    sigma2_exact: Callable[[DistributionSpec], float] | None = None
    sigma_h2_exact: Callable[[DistributionSpec], float] | None = None
    jackknife: Callable[[np.ndarray], np.ndarray] | None = None
    growth: float | None = None  # |h1(y)| ~ |y|^growth, for moment divergence checks

    def __call__(self, *args):
        return eval_kernel(self, args)

    def h1(self, dist: DistributionSpec, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        if self.h1_exact is not None:
            return self.h1_exact(dist, y)
        return _h1_numeric(self, dist, y)

    def kc_for(self, dist: DistributionSpec) -> tuple[float, float]:
        if self.kc is None:
            raise ValueError(f"kernel {self.name!r} declares no (c0, tau) constants")
        return self.kc.bind(theta(self, dist), sigma2(self, dist))

    def a_m(self, dist: DistributionSpec) -> float:
        c0, tau = self.kc_for(dist)
        return max(c0 * tau, c0 + self.degree)


# ---------------------------------------------------------------------------
# built-in kernels


def _t_jackknife(x):
    n = x.shape[-1]
    s = x.sum(axis=-1, keepdims=True)
    return 0.5 * (x + (s - x) / (n - 1))


def _variance_jackknife(x):
    n = x.shape[-1]
    s = x.sum(axis=-1, keepdims=True)
    q2 = (x * x).sum(axis=-1, keepdims=True)
    m_rest = (s - x) / (n - 1)
    s2_rest = (q2 - x * x) / (n - 1)
    return 0.5 * (x * x - 2 * x * m_rest + s2_rest)


def _gini_jackknife(x):
    x = np.atleast_2d(x)
    n = x.shape[-1]
    order = np.argsort(x, axis=-1, kind="stable")
    xs = np.take_along_axis(x, order, axis=-1)
    csum = np.cumsum(xs, axis=-1)
    total = csum[..., -1:]
    k = np.arange(n)
    below = csum - xs  # sum of strictly-earlier order statistics
    above = total - csum
    dist_sum = k * xs - below + above - (n - 1 - k) * xs
    out = np.empty_like(x)
    np.put_along_axis(out, order, dist_sum / (n - 1), axis=-1)
    return out


def _wilcoxon_jackknife(x):
    x = np.atleast_2d(x)
    n = x.shape[-1]
    xs = np.sort(x, axis=-1)
    counts = np.empty_like(x)
    for r in range(x.shape[0]):
        counts[r] = np.searchsorted(xs[r], -x[r], side="right")
    counts -= (x <= 0)  # drop the j == i term
    return counts / (n - 1)


def _gini_h1(dist, y):
    y = np.asarray(y, dtype=float)
    return y * (2.0 * dist.cdf(y) - 1.0) - 2.0 * dist.partial_mean(y)


def _gini_theta(dist):
    if dist.family == "normal":
        return 2.0 * dist.sigma / math.sqrt(math.pi)
    return dist.expect(lambda t: _gini_h1(dist, t))


def _wilcoxon_theta(dist):
    if dist.family == "normal" or (dist.is_symmetric and not dist.is_discrete):
        return 0.5
    return dist.expect(lambda t: dist.cdf(-t))


_BUILTINS: dict[str, KernelSpec] = {}
_REGISTRY: dict[str, KernelSpec] = {}


def _install_builtins():
    t = KernelSpec(
        name="t",
        degree=2,
        func=lambda a: 0.5 * (a[..., 0] + a[..., 1]),
        kc=KCConstants(2.0, 0.0, "0"),
        linear=True,
        h1_exact=lambda d, y: 0.5 * np.asarray(y, dtype=float),
        theta_exact=lambda d: 0.0,
        sigma2_exact=lambda d: d.variance / 4.0,
        sigma_h2_exact=lambda d: d.variance / 2.0,
        jackknife=_t_jackknife,
        growth=1.0,
    )
    variance = KernelSpec(
        name="variance",
        degree=2,
        func=lambda a: 0.5 * (a[..., 0] - a[..., 1]) ** 2,
        kc=KCConstants(10.0, lambda th, s2: th * th / s2, "theta^2/sigma^2"),
        h1_exact=lambda d, y: 0.5 * (np.asarray(y, dtype=float) ** 2 + d.variance),
        theta_exact=lambda d: d.variance,
        sigma2_exact=lambda d: (d.abs_moment(4.0) - d.variance**2) / 4.0,
        sigma_h2_exact=lambda d: (d.abs_moment(4.0) + d.variance**2) / 2.0,
        jackknife=_variance_jackknife,
        growth=2.0,
    )
    gini = KernelSpec(
        name="gini",
        degree=2,
        func=lambda a: np.abs(a[..., 0] - a[..., 1]),
        kc=KCConstants(8.0, lambda th, s2: th * th / s2, "theta^2/sigma^2"),
        h1_exact=_gini_h1,
        theta_exact=_gini_theta,
        sigma_h2_exact=lambda d: 2.0 * d.variance - _gini_theta(d) ** 2,
        jackknife=_gini_jackknife,
        growth=1.0,
    )
    wilcoxon = KernelSpec(
        name="wilcoxon",
        degree=2,
        func=lambda a: (a[..., 0] + a[..., 1] <= 0).astype(float),
        kc=KCConstants(1.0, lambda th, s2: 1.0 / s2, "1/sigma^2"),
        h1_exact=lambda d, y: np.asarray(d.cdf(-np.asarray(y, dtype=float)), dtype=float),
        theta_exact=_wilcoxon_theta,
        sigma_h2_exact=lambda d: _wilcoxon_theta(d) * (1.0 - _wilcoxon_theta(d)),
        jackknife=_wilcoxon_jackknife,
        growth=0.0,
    )
    for k in (t, variance, gini, wilcoxon):
        _BUILTINS[k.name] = k


_install_builtins()
BUILTIN_NAMES = tuple(_BUILTINS)


def builtin_kernel(name: str) -> KernelSpec:
    if name in _BUILTINS:
        return _BUILTINS[name]
    if name in _REGISTRY:
        return _REGISTRY[name]
    raise UnknownKernelError(
        f"unknown kernel {name!r}; built-ins are {', '.join(BUILTIN_NAMES)}"
    )


def register_kernel(spec: KernelSpec) -> KernelSpec:
    if spec.degree < 2:
        raise ValueError("kernel degree must be >= 2")
    if spec.name in _BUILTINS:
        raise ValueError(f"{spec.name!r} would shadow a built-in kernel")
    _REGISTRY[spec.name] = spec
    _moments.cache_clear()
    return spec


def eval_kernel(k: KernelSpec, args) -> float:
    args = np.asarray(args, dtype=float)
    if args.shape[-1:] != (k.degree,):
        raise ArityError(f"kernel {k.name!r} has degree {k.degree}, got {args.shape[-1:]} args")
    out = k.func(args)
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# projections and moments


def _mc_tuples(k: KernelSpec, dist, size, gen):
    return dist.sample((size, k.degree), gen)


def _h1_numeric(k, dist, y, inner_reps=4000, stream=None):
    # common random numbers across y keep the estimated h1 smooth in y
    gen = as_generator(stream if stream is not None else SeedStream(_MC_SEED, 1))
    rest = dist.sample((inner_reps, k.degree - 1), gen)
    y = np.asarray(y, dtype=float)
    flat = y.reshape(-1)
    vals = np.empty(flat.shape)
    for i, v in enumerate(flat):
        args = np.concatenate([np.full((inner_reps, 1), v), rest], axis=1)
        vals[i] = k.func(args).mean()
    return vals.reshape(y.shape)


def h1_projection(k: KernelSpec, dist: DistributionSpec, y, inner_reps: int = 4000,
                  stream=None) -> Projection:
    """Conditional mean E[h(y, X_2, ..., X_m)].

    Exact for kernels with a registered projection (``se = 0``); otherwise a
    conditional Monte Carlo average whose standard error is reported.
    """
    if k.h1_exact is not None:
        return Projection(float(k.h1_exact(dist, np.asarray(float(y)))), 0.0)
    if inner_reps < 1:
        raise ValueError("inner_reps must be >= 1 for kernels without an exact h1")
    gen = as_generator(stream if stream is not None else SeedStream(_MC_SEED, 2))
    rest = dist.sample((inner_reps, k.degree - 1), gen)
    args = np.concatenate([np.full((inner_reps, 1), float(y)), rest], axis=1)
    vals = k.func(args)
    se = vals.std(ddof=1) / math.sqrt(inner_reps) if inner_reps > 1 else math.inf
    return Projection(float(vals.mean()), float(se))


class _Moments(NamedTuple):
    theta: float
    sigma2: float
    sigma_h2: float


def _h1_moment_finite(k, dist, p):
    if dist.family != "pareto-centered" or k.growth is None:
        return True
    return k.growth * p < dist.params["alpha"]


@functools.lru_cache(maxsize=256)
def _moments(k: KernelSpec, dist: DistributionSpec) -> _Moments:
    if k.theta_exact is not None:
        th = float(k.theta_exact(dist))
    else:
        gen = SeedStream(_MC_SEED, 3).generator()
        th = float(k.func(_mc_tuples(k, dist, 200_000, gen)).mean())

    if not _h1_moment_finite(k, dist, 2.0):
        s2 = math.inf
    elif k.sigma2_exact is not None:
        s2 = float(k.sigma2_exact(dist))
    elif k.h1_exact is not None:
        s2 = dist.expect(lambda t: (float(k.h1_exact(dist, np.asarray(t))) - th) ** 2)
    else:
        xs = dist.sample(2000, SeedStream(_MC_SEED, 4))
        s2 = float(np.var(_h1_numeric(k, dist, xs), ddof=1))

    if k.sigma_h2_exact is not None:
        sh2 = float(k.sigma_h2_exact(dist))
        if not np.isfinite(sh2) or (k.growth and not _h1_moment_finite(k, dist, 2.0)):
            sh2 = math.inf
    else:
        gen = SeedStream(_MC_SEED, 5).generator()
        sh2 = float(np.var(k.func(_mc_tuples(k, dist, 200_000, gen)), ddof=1))
    return _Moments(th, s2, sh2)


def theta(k: KernelSpec, dist: DistributionSpec) -> float:
    return _moments(k, dist).theta


def sigma2(k: KernelSpec, dist: DistributionSpec) -> float:
    """Var h1(X); raises when the kernel is degenerate under ``dist``."""
    s2 = _moments(k, dist).sigma2
    if math.isinf(s2):
        raise InfiniteMomentError(f"Var h1 is infinite for kernel {k.name!r} under {dist!r}")
    if s2 <= SIGMA2_FLOOR:
        raise DegenerateKernelError(
            f"kernel {k.name!r} is degenerate under {dist!r} (Var h1 = {s2:.3g})"
        )
    return s2


def sigma_h2(k: KernelSpec, dist: DistributionSpec) -> float:
    return _moments(k, dist).sigma_h2


def sigma_p(k: KernelSpec, dist: DistributionSpec, p: float) -> float:
    """(E|h1(X) - theta|^p)^{1/p}; ``inf`` when the moment diverges."""
    if not 2 < p <= 3:
        raise ValueError(f"p must lie in (2, 3], got {p}")
    if not _h1_moment_finite(k, dist, p):
        return math.inf
    th = theta(k, dist)
    if k.name == "t":
        return dist.sigma_p(p) / 2.0
    if k.h1_exact is not None:
        val = dist.expect(lambda t: abs(float(k.h1_exact(dist, np.asarray(t))) - th) ** p)
    else:
        xs = dist.sample(2000, SeedStream(_MC_SEED, 6))
        val = float(np.mean(np.abs(_h1_numeric(k, dist, xs) - th) ** p))
    return val ** (1.0 / p)


def standardized_h1(k: KernelSpec, dist: DistributionSpec) -> Callable[[np.ndarray], np.ndarray]:
    """The map y -> (h1(y) - theta) / sigma, mean zero and unit variance."""
    th = theta(k, dist)
    s = math.sqrt(sigma2(k, dist))
    return lambda y: (k.h1(dist, y) - th) / s


# ---------------------------------------------------------------------------
# domination condition

_STRESS_LEVELS = (1.0, 2.0, 4.0, 8.0)
_CHUNK = 200_000


def _kc_margin(k, dist, tuples, c0, tau, th, s2):
    lhs = (k.func(tuples) - th) ** 2
    h1 = k.h1(dist, tuples)
    rhs = c0 * (tau * s2 + ((h1 - th) ** 2).sum(axis=-1))
    return rhs - lhs, lhs, h1


def _stress_grid(k, dist):
    pts = [s * lvl * dist.sigma for lvl in _STRESS_LEVELS for s in (-1.0, 1.0)]
    return np.array(list(itertools.product(pts, repeat=k.degree)), dtype=float)


def check_condition_kc(k: KernelSpec, dist: DistributionSpec, c0: float | None = None,
                       tau: float | None = None, trials: int = 1_000_000,
                       stream=None) -> ViolationReport:
    """Evaluate the domination condition on random tuples plus a stress grid.

    Tuples are i.i.d. draws from ``dist``; the stress grid puts every
    coordinate at ``±{1, 2, 4, 8}`` standard deviations.  ``c0``/``tau``
    default to the kernel's own constants bound to ``dist``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    th, s2 = theta(k, dist), sigma2(k, dist)
    if c0 is None or tau is None:
        kc0, ktau = k.kc_for(dist)
        c0 = kc0 if c0 is None else c0
        tau = ktau if tau is None else tau
    gen = as_generator(stream if stream is not None else SeedStream(0))

    total = violations = 0
    worst, witness = math.inf, ()
    batches = [_stress_grid(k, dist)]
    remaining = trials
    while remaining > 0:
        size = min(_CHUNK, remaining)
        batches.append(dist.sample((size, k.degree), gen))
        remaining -= size
    for tuples in batches:
        margin, _, _ = _kc_margin(k, dist, tuples, c0, tau, th, s2)
        total += len(margin)
        violations += int(np.count_nonzero(margin < 0))
        j = int(np.argmin(margin))
        if margin[j] < worst:
            worst, witness = float(margin[j]), tuple(float(v) for v in tuples[j])
    return ViolationReport(total, violations, worst, witness)


def search_c0(k: KernelSpec, dist: DistributionSpec, tau: float, trials: int = 100_000,
              stream=None) -> float:
    """Smallest c0 (>= 1) satisfying the condition on the evaluated tuples at fixed tau.

    This is the limit a bisection on c0 would converge to; it is computed
    directly as the largest ratio LHS / [tau*sigma2 + sum (h1 - theta)^2].
    No claim of optimality over all of R^m is made.
    """
    th, s2 = theta(k, dist), sigma2(k, dist)
    gen = as_generator(stream if stream is not None else SeedStream(0))
    tuples = np.concatenate([_stress_grid(k, dist), dist.sample((trials, k.degree), gen)])
    lhs = (k.func(tuples) - th) ** 2
    denom = tau * s2 + ((k.h1(dist, tuples) - th) ** 2).sum(axis=-1)
    pos = denom > 0
    if np.any(~pos & (lhs > 0)):
        return math.inf
    ratio = np.max(lhs[pos] / denom[pos]) if np.any(pos) else 0.0
    return max(1.0, float(ratio))
