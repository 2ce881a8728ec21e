"""Exact U-statistics, jackknife Studentization and the Hoeffding decomposition.

Everything here enumerates all ``C(n, m)`` subsets, so results are exact up to
floating-point rounding.  Enumeration is capped (default ``10**7`` subsets);
larger problems raise :class:`TooLargeError` instead of silently sampling.

The decomposition works in standardized units ``h~ = (h - theta) / sigma``
with ``sigma^2 = Var h1(X)``.  In those units

    sqrt(n) U~ / m = W + D1,           s1*^2 = V^2 (1 + D2),
    T* = (W + D1) / (V sqrt(1 + D2)),

where ``s1*^2 = (n-1)/(n-m)^2 sum q~_i^2`` is the uncentered jackknife
variance.  ``T*`` relates to the usual Studentized statistic ``T_n`` through
:func:`t_star_transform`.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import DistributionSpec
from .errors import ArityError, OutOfRangeError, TooLargeError, ZeroVarianceError
from .kernels import KernelSpec, sigma2 as kernel_sigma2, sigma_h2 as kernel_sigma_h2, theta as kernel_theta

DEFAULT_CAP = 10**7
S1_FLOOR = 1e-12
_CHUNK = 1 << 20


def _check_sizes(n, m, cap, relax):
    if n <= m:
        raise ArityError(f"need more observations than the kernel degree (n={n}, m={m})")
    if n <= 2 * m and not relax:
        raise ArityError(f"n must exceed 2m (n={n}, m={m}); pass relax=True to override")
    count = math.comb(n, m)
    if count > cap:
        raise TooLargeError(
            f"C({n},{m}) = {count} subsets exceeds the enumeration cap {cap}; "
            "reduce n or raise cap explicitly"
        )
    return count


def _subset_chunks(n, m):
    """Yield index arrays of shape (k, m) covering all m-subsets in lexicographic order."""
    if m == 2:
        i, j = np.triu_indices(n, k=1)
        yield np.stack([i, j], axis=1)
        return
    it = itertools.combinations(range(n), m)
    while True:
        block = np.fromiter(itertools.islice(it, _CHUNK), dtype=np.dtype((np.intp, m)))
        if len(block) == 0:
            return
        yield block


def _enumerate(x, k: KernelSpec, cap, relax):
    """Return (U, q, per-subset values, subset indices) in one pass."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("sample must be one-dimensional")
    n, m = len(x), k.degree
    count = _check_sizes(n, m, cap, relax)
    parts, idx_parts = [], []
    qsum = np.zeros(n)
    for idx in _subset_chunks(n, m):
        vals = np.asarray(k.func(x[idx]), dtype=float)
        for c in range(m):
            qsum += np.bincount(idx[:, c], weights=vals, minlength=n)
        parts.append(vals)
        idx_parts.append(idx)
    vals = np.concatenate(parts)
    idx = np.concatenate(idx_parts)
    U = math.fsum(np.sum(p) for p in parts) / count
    q = qsum / math.comb(n - 1, m - 1)
    return U, q, vals, idx


def u_statistic(sample, k: KernelSpec, cap: int = DEFAULT_CAP, relax: bool = False) -> float:
    """Average of ``h`` over all ``C(n, m)`` subsets of the sample."""
    return _enumerate(sample, k, cap, relax)[0]


def _s1_from_q(q, U, n, m):
    return (n - 1) / (n - m) ** 2 * float(np.sum((q - U) ** 2))


def jackknife(sample, k: KernelSpec, cap: int = DEFAULT_CAP, relax: bool = False,
              fast: bool = True) -> tuple[np.ndarray, float]:
    """Leave-one-out averages ``q_i`` and the jackknife variance ``s1^2``.

    With ``fast=True`` kernels that ship an O(n log n) routine use it; the
    enumeration path is the reference.
    """
    x = np.asarray(sample, dtype=float)
    n, m = len(x), k.degree
    if fast and k.jackknife is not None:
        _check_sizes(n, m, math.inf, relax)
        q = k.jackknife(x[None, :])[0]
        U = float(np.mean(q))
    else:
        U, q, _, _ = _enumerate(x, k, cap, relax)
    return q, _s1_from_q(q, U, n, m)


def _star_const(n, m):
    return m * m * (n - 1) / (n - m) ** 2


def t_star_transform(x, n: int, m: int):
    """x -> x / sqrt(1 + x^2 m^2 (n-1)/(n-m)^2); maps T_n thresholds to T* thresholds."""
    x = np.asarray(x, dtype=float)
    out = x / np.sqrt(1.0 + x * x * _star_const(n, m))
    return float(out) if out.ndim == 0 else out


def t_star_inverse(y, n: int, m: int):
    y = np.asarray(y, dtype=float)
    c = _star_const(n, m)
    if np.any(y * y * c >= 1.0):
        raise OutOfRangeError(
            f"t_star_inverse needs y^2 < (n-m)^2/(m^2 (n-1)) = {1.0 / c:.6g}"
        )
    out = y / np.sqrt(1.0 - y * y * c)
    return float(out) if out.ndim == 0 else out


def studentize(sample, k: KernelSpec, theta: float, cap: int = DEFAULT_CAP,
               relax: bool = False, fast: bool = True) -> tuple[float, float]:
    """Return ``(T_n, T*)`` for a single sample with known ``theta``."""
    x = np.asarray(sample, dtype=float)
    n, m = len(x), k.degree
    q, s1_2 = jackknife(x, k, cap, relax, fast)
    U = float(np.mean(q))
    if s1_2 <= S1_FLOOR**2 or math.sqrt(s1_2) <= S1_FLOOR:
        raise ZeroVarianceError("jackknife standard deviation s1 is numerically zero")
    T = math.sqrt(n) * (U - theta) / (m * math.sqrt(s1_2))
    s_star = math.sqrt((n - 1) / (n - m) ** 2 * float(np.sum((q - theta) ** 2)))
    T_star = math.sqrt(n) * (U - theta) / (m * s_star)
    return T, T_star


def studentize_batch(samples, k: KernelSpec, theta: float) -> np.ndarray:
    """Vectorised ``T_n`` over rows of ``samples``; needs a fast jackknife.

    Rows whose ``s1`` is numerically zero give ``nan``.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    n, m = x.shape[1], k.degree
    if k.jackknife is None:
        out = np.empty(len(x))
        for r, row in enumerate(x):
            try:
                out[r] = studentize(row, k, theta, relax=True)[0]
            except ZeroVarianceError:
                out[r] = np.nan
        return out
    q = k.jackknife(x)
    U = q.mean(axis=1)
    s1 = np.sqrt((n - 1) / (n - m) ** 2 * np.sum((q - U[:, None]) ** 2, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        T = math.sqrt(n) * (U - theta) / (m * s1)
    T[s1 <= S1_FLOOR] = np.nan
    return T


# ---------------------------------------------------------------------------
# Hoeffding decomposition


def _d2_formula(n, m, W, V2, D1, Lambda2, xi_psi):
    c = math.comb(n - 2, m - 1)
    core = (
        Lambda2 / c**2
        + (m - 1) * ((m + 1) * n - 2 * m) * n / (n - m) ** 2 * W**2
        + 2.0 * math.sqrt(n) / c * xi_psi
        + 2.0 * m * (m - 1) * n * (n - 1) / (n - m) ** 2 * W * D1
    )
    with np.errstate(divide="ignore", invalid="ignore"):
        return (1.0 + core / V2) / (n - 1)


@dataclass(frozen=True, eq=False)
class HoeffdingDecomp:
    n: int
    m: int
    U_n: float
    theta: float
    sigma: float
    sigma_h_ratio: float  # sigma_h / sigma
    W_n: float
    V_n2: float
    xi: np.ndarray
    q: np.ndarray
    s1_2: float  # centered jackknife variance, original units
    s1_star_2: float  # uncentered jackknife variance, standardized units
    D1n: float
    D2n: float
    psi: np.ndarray
    Lambda2: float
    T_n: float
    T_star: float
    _r_sum: float = field(repr=False, default=0.0)
    _pair: np.ndarray | None = field(repr=False, default=None)

    @property
    def V_n(self) -> float:
        return math.sqrt(self.V_n2)

    def D3n(self, x: float, C4: float = 1.0) -> float:
        """C4 {s_h x / sqrt(n) + (s_h x)^{-1} n^{3/2 - 2m} Lambda^2}, s_h = sigma_h/sigma."""
        if x <= 0:
            raise ValueError("D3n needs x > 0")
        sh = self.sigma_h_ratio
        n, m = self.n, self.m
        return C4 * (sh * x / math.sqrt(n) + n ** (1.5 - 2 * m) * self.Lambda2 / (sh * x))

    def D1_loo(self) -> np.ndarray:
        """D1 with every subset containing observation i removed, for each i."""
        n, m = self.n, self.m
        return math.sqrt(n) / (m * math.comb(n, m)) * (self._r_sum - self.psi)

    def _psi_loo(self) -> np.ndarray:
        """Row i holds psi_k with all subsets containing i removed (psi_i^{(i)} = 0)."""
        n = self.n
        P = self._pair if self._pair is not None else np.zeros((n, n))
        out = self.psi[None, :] - P
        np.fill_diagonal(out, 0.0)
        return out

    def Lambda2_loo(self) -> np.ndarray:
        return np.sum(self._psi_loo() ** 2, axis=1)

    def D3n_loo(self, x: float, C4: float = 1.0) -> np.ndarray:
        """D3 with Lambda^2 replaced by its leave-one-out version."""
        if x <= 0:
            raise ValueError("D3n needs x > 0")
        sh, n, m = self.sigma_h_ratio, self.n, self.m
        return C4 * (sh * x / math.sqrt(n) + n ** (1.5 - 2 * m) * self.Lambda2_loo() / (sh * x))

    def D2_loo(self) -> np.ndarray:
        """D2 recomputed with xi_i = 0 and all subsets containing i removed.

        ``n`` and the combinatorial constants are held fixed, so each entry
        is a function of the other observations only.  Entries whose
        leave-one-out ``V^2`` vanishes are ``nan``.
        """
        n, m = self.n, self.m
        xi = self.xi
        psi_i = self._psi_loo()
        xi_i = np.broadcast_to(xi, (n, n)).copy()
        np.fill_diagonal(xi_i, 0.0)
        Lam = np.sum(psi_i**2, axis=1)
        xp = np.sum(xi_i * psi_i, axis=1)
        W = self.W_n - xi
        V2 = self.V_n2 - xi**2
        out = _d2_formula(n, m, W, V2, self.D1_loo(), Lam, xp)
        return np.where(V2 > 0, out, np.nan)


def hoeffding_decompose(sample, k: KernelSpec, dist: DistributionSpec,
                        cap: int = DEFAULT_CAP, relax: bool = False,
                        theta: float | None = None) -> HoeffdingDecomp:
    """Exact Hoeffding decomposition of the Studentized U-statistic."""
    x = np.asarray(sample, dtype=float)
    n, m = len(x), k.degree
    th = kernel_theta(k, dist) if theta is None else float(theta)
    s2 = kernel_sigma2(k, dist)  # raises on degenerate kernels
    sigma = math.sqrt(s2)
    sh_ratio = math.sqrt(kernel_sigma_h2(k, dist) / s2)

    U, q, vals, idx = _enumerate(x, k, cap, relax)
    h1t = (np.asarray(k.h1(dist, x), dtype=float) - th) / sigma
    xi = h1t / math.sqrt(n)
    W = float(np.sum(xi))
    V2 = float(np.sum(xi**2))

    if k.linear:
        r = np.zeros(len(vals))
    else:
        r = (vals - th) / sigma - h1t[idx].sum(axis=1)
    r_sum = math.fsum(r) if len(r) < 1_000_000 else float(np.sum(r))
    psi = np.zeros(n)
    for c in range(m):
        psi += np.bincount(idx[:, c], weights=r, minlength=n)
    pair = np.zeros((n, n))
    if not k.linear:
        for a, b in itertools.combinations(range(m), 2):
            np.add.at(pair, (idx[:, a], idx[:, b]), r)
            np.add.at(pair, (idx[:, b], idx[:, a]), r)

    D1 = math.sqrt(n) / (m * math.comb(n, m)) * r_sum
    Lambda2 = float(np.sum(psi**2))
    D2 = float(_d2_formula(n, m, W, V2, D1, Lambda2, float(np.sum(xi * psi))))

    s1_2 = _s1_from_q(q, U, n, m)
    qt = (q - th) / sigma
    s1_star_2 = (n - 1) / (n - m) ** 2 * float(np.sum(qt**2))
    with np.errstate(divide="ignore", invalid="ignore"):
        T_n = float(math.sqrt(n) * (U - th) / (m * np.sqrt(s1_2)))
        T_star = float(math.sqrt(n) * (U - th) / (m * sigma * np.sqrt(s1_star_2)))
    return HoeffdingDecomp(
        n=n, m=m, U_n=U, theta=th, sigma=sigma, sigma_h_ratio=sh_ratio,
        W_n=W, V_n2=V2, xi=xi, q=q, s1_2=s1_2, s1_star_2=s1_star_2,
        D1n=D1, D2n=D2, psi=psi, Lambda2=Lambda2, T_n=T_n, T_star=T_star,
        _r_sum=r_sum, _pair=pair,
    )


def membership_G_nx(decomp: HoeffdingDecomp, x: float) -> bool:
    """|W| <= sqrt(x) n^{1/4} (4 + V) and V^2 >= 1/2."""
    if x < 0:
        raise ValueError("x must be >= 0")
    bound = math.sqrt(x) * decomp.n**0.25 * (4.0 + decomp.V_n)
    return bool(abs(decomp.W_n) <= bound and decomp.V_n2 >= 0.5)
