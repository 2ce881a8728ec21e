import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from selfnorm.distributions import make_distribution
from selfnorm.errors import ArityError, OutOfRangeError, TooLargeError, ZeroVarianceError
from selfnorm.kernels import KernelSpec, builtin_kernel, sigma2, theta
from selfnorm.rng import SeedStream
from selfnorm.ustat import (hoeffding_decompose, jackknife, membership_G_nx, studentize,
                            studentize_batch, t_star_inverse, t_star_transform, u_statistic)

NORMAL = make_distribution("normal")
KERNELS = ["t", "variance", "gini", "wilcoxon"]


def brute_q(x, k):
    """Leave-one-in averages by direct enumeration."""
    n, m = len(x), k.degree
    q = np.zeros(n)
    for S in itertools.combinations(range(n), m):
        v = k.func(np.asarray([x[j] for j in S]))
        for j in S:
            q[j] += v
    return q / math.comb(n - 1, m - 1)


def triple_range():
    return KernelSpec(name="range3-test", degree=3,
                      func=lambda a: a.max(axis=-1) - a.min(axis=-1))


class TestUStatistic:
    def test_t_mean(self):
        assert u_statistic([1, 2, 3], builtin_kernel("t"), relax=True) == pytest.approx(2.0)

    def test_variance_pairs(self):
        assert u_statistic([0, 2, 0, 2], builtin_kernel("variance"), relax=True) == pytest.approx(4 / 3)

    def test_gini_small(self):
        assert u_statistic([1, 2, 4], builtin_kernel("gini"), relax=True) == pytest.approx(2.0)

    def test_size_rule(self):
        with pytest.raises(ArityError):
            u_statistic([1, 2, 3, 4], builtin_kernel("t"))
        with pytest.raises(ArityError):
            u_statistic([1, 2], builtin_kernel("t"), relax=True)

    def test_cap(self):
        with pytest.raises(TooLargeError):
            u_statistic(np.arange(50.0), builtin_kernel("t"), cap=100)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-100, 100), min_size=5, max_size=12), st.randoms(use_true_random=False),
           st.sampled_from(KERNELS))
    def test_permutation_invariant(self, xs, rnd, name):
        k = builtin_kernel(name)
        ys = list(xs)
        rnd.shuffle(ys)
        assert u_statistic(ys, k) == pytest.approx(u_statistic(xs, k), rel=1e-12, abs=1e-12)

    def test_degree_three(self):
        k = triple_range()
        x = np.array([0.0, 1.0, 3.0, 7.0, 2.0, 5.0, 4.0])
        expected = np.mean([max(S) - min(S) for S in itertools.combinations(x, 3)])
        assert u_statistic(x, k) == pytest.approx(expected, rel=1e-14)


class TestJackknife:
    def test_constant(self):
        q, s1 = jackknife(np.full(6, 2.5), builtin_kernel("t"))
        np.testing.assert_allclose(q, 2.5)
        assert s1 == 0.0

    def test_t_small_brute(self):
        x = np.array([-1.0, 0.0, 1.0, 2.0])
        k = builtin_kernel("t")
        q, s1 = jackknife(x, k, relax=True)
        qb = np.array([np.mean([(x[i] + x[j]) / 2 for j in range(4) if j != i]) for i in range(4)])
        np.testing.assert_allclose(q, qb, rtol=1e-15)
        assert s1 == pytest.approx(3 / 4 * np.sum((qb - x.mean()) ** 2), rel=1e-14)

    @pytest.mark.parametrize("name", KERNELS)
    def test_fast_matches_enumeration(self, name):
        k = builtin_kernel(name)
        x = NORMAL.sample(25, SeedStream(1).child(name))
        qf, sf = jackknife(x, k, fast=True)
        qe, se = jackknife(x, k, fast=False)
        np.testing.assert_allclose(qf, brute_q(x, k), rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(qf, qe, rtol=1e-12, atol=1e-14)
        assert sf == pytest.approx(se, rel=1e-10)

    @pytest.mark.parametrize("name", KERNELS)
    def test_algebraic_identity(self, name):
        k = builtin_kernel(name)
        x = NORMAL.sample(15, SeedStream(2).child(name))
        q, s1 = jackknife(x, k)
        n, m = len(x), k.degree
        U = u_statistic(x, k)
        assert (n - m) ** 2 / (n - 1) * s1 == pytest.approx(np.sum(q**2) - n * U * U, rel=1e-9)


class TestStudentize:
    def test_constant_sample(self):
        with pytest.raises(ZeroVarianceError):
            studentize(np.ones(10), builtin_kernel("t"), 0.0)

    def test_t_kernel_oracle(self):
        x = NORMAL.sample(100, SeedStream(3))
        n = 100
        # brute force: q_i from all pairs containing i
        q = np.array([np.mean([(x[i] + x[j]) / 2 for j in range(n) if j != i]) for i in range(n)])
        U = np.mean([(x[i] + x[j]) / 2 for i, j in itertools.combinations(range(n), 2)])
        s1 = math.sqrt((n - 1) / (n - 2) ** 2 * np.sum((q - U) ** 2))
        T, _ = studentize(x, builtin_kernel("t"), 0.0)
        assert T == pytest.approx(math.sqrt(n) * U / (2 * s1), rel=1e-10)

    @pytest.mark.parametrize("name", KERNELS)
    def test_batch_matches_single(self, name):
        k = builtin_kernel(name)
        xs = NORMAL.sample((5, 14), SeedStream(4).child(name))
        th = theta(k, NORMAL)
        single = [studentize(row, k, th)[0] for row in xs]
        np.testing.assert_allclose(studentize_batch(xs, k, th), single, rtol=1e-10)

    def test_batch_zero_variance_nan(self):
        out = studentize_batch(np.ones((2, 8)), builtin_kernel("t"), 0.0)
        assert np.all(np.isnan(out))


class TestTStarMap:
    def test_zero(self):
        assert t_star_transform(0.0, 37, 3) == 0.0

    @pytest.mark.parametrize("x", [0.5, 1.0, 3.0])
    def test_roundtrip(self, x):
        assert t_star_inverse(t_star_transform(x, 100, 2), 100, 2) == pytest.approx(x, rel=1e-12)
        assert t_star_transform(t_star_inverse(t_star_transform(x, 50, 3), 50, 3), 50, 3) == \
            pytest.approx(t_star_transform(x, 50, 3), rel=1e-12)

    def test_value(self):
        assert t_star_transform(2.0, 100, 2) == pytest.approx(1.853018872468188041533817, rel=1e-14)

    def test_inverse_range(self):
        with pytest.raises(OutOfRangeError):
            t_star_inverse(10.0, 100, 2)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-50, 50), st.floats(-50, 50))
    def test_monotone(self, a, b):
        lo, hi = min(a, b), max(a, b)
        assert t_star_transform(lo, 30, 2) <= t_star_transform(hi, 30, 2)


class TestHoeffdingDecompose:
    def test_t_kernel_linear(self):
        d = hoeffding_decompose(NORMAL.sample(20, SeedStream(5)), builtin_kernel("t"), NORMAL)
        assert d.D1n == 0.0
        assert d.Lambda2 == 0.0
        assert np.all(d.psi == 0.0)
        # pure linear case: s1*^2 = V^2 (1 + D2) with the W^2 term only
        n = d.n
        expected = (1 + (3 * n - 4) * n / (n - 2) ** 2 * d.W_n**2 / d.V_n2) / (n - 1)
        assert d.D2n == pytest.approx(expected, rel=1e-12)

    def _check_identities(self, d, rel=1e-9):
        n, m = d.n, d.m
        U = d.U_n
        assert (n - m) ** 2 / (n - 1) * d.s1_2 == pytest.approx(np.sum(d.q**2) - n * U * U, rel=rel)
        assert d.s1_star_2 == pytest.approx(d.V_n2 * (1 + d.D2n), rel=rel)
        assert math.sqrt(n) * (U - d.theta) / (m * d.sigma) == pytest.approx(d.W_n + d.D1n, rel=rel, abs=1e-12)
        assert d.T_star == pytest.approx((d.W_n + d.D1n) / (d.V_n * math.sqrt(1 + d.D2n)), rel=rel, abs=1e-12)
        assert d.Lambda2 == pytest.approx(np.sum(d.psi**2), rel=1e-12) and d.Lambda2 >= 0
        assert t_star_transform(d.T_n, n, m) == pytest.approx(d.T_star, rel=rel, abs=1e-12)

    @pytest.mark.parametrize("name", KERNELS)
    @pytest.mark.parametrize("fam", ["normal", "exponential-centered"])
    def test_identities(self, name, fam):
        dist = make_distribution(fam)
        k = builtin_kernel(name)
        for s in range(5):
            self._check_identities(hoeffding_decompose(dist.sample(20, SeedStream(6).child(name, fam, s)), k, dist))

    def test_degree_three_identities(self):
        # range kernel with the generic projection; theta/sigma fixed by the kernel's own MC moments
        k = triple_range()
        d = hoeffding_decompose(NORMAL.sample(14, SeedStream(7)), k, NORMAL)
        self._check_identities(d)

    def test_gini_brute_force(self):
        k = builtin_kernel("gini")
        x = NORMAL.sample(12, SeedStream(8))
        d = hoeffding_decompose(x, k, NORMAL)
        n, m = 12, 2
        th = 2 / math.sqrt(math.pi)
        sig = math.sqrt(sigma2(k, NORMAL))
        h1 = lambda y: 2 * math.exp(-y * y / 2) / math.sqrt(2 * math.pi) + y * math.erf(y / math.sqrt(2))
        h1t = np.array([(h1(v) - th) / sig for v in x])
        psi = np.zeros(n)
        rsum = 0.0
        for i, j in itertools.combinations(range(n), 2):
            r = (abs(x[i] - x[j]) - th) / sig - h1t[i] - h1t[j]
            rsum += r
            psi[i] += r
            psi[j] += r
        D1 = math.sqrt(n) / (m * math.comb(n, m)) * rsum
        q = brute_q(x, k)
        s1_star = (n - 1) / (n - m) ** 2 * np.sum(((q - th) / sig) ** 2)
        V2 = np.sum(h1t**2) / n
        assert d.D1n == pytest.approx(D1, rel=1e-10)
        assert d.Lambda2 == pytest.approx(np.sum(psi**2), rel=1e-10)
        assert d.D2n == pytest.approx(s1_star / V2 - 1, rel=1e-9)

    def test_leave_one_out_matches_recomputation(self):
        k = builtin_kernel("gini")
        x = NORMAL.sample(10, SeedStream(9))
        d = hoeffding_decompose(x, k, NORMAL)
        n, m = 10, 2
        th, sig = d.theta, d.sigma
        h1t = (k.h1(NORMAL, x) - th) / sig
        for i in range(n):
            rsum = 0.0
            psi = np.zeros(n)
            for a, b in itertools.combinations([j for j in range(n) if j != i], 2):
                r = (abs(x[a] - x[b]) - th) / sig - h1t[a] - h1t[b]
                rsum += r
                psi[a] += r
                psi[b] += r
            assert d.D1_loo()[i] == pytest.approx(math.sqrt(n) / (m * math.comb(n, m)) * rsum, rel=1e-10, abs=1e-14)
            assert d.Lambda2_loo()[i] == pytest.approx(np.sum(psi**2), rel=1e-10)

    def test_D3(self):
        d = hoeffding_decompose(NORMAL.sample(20, SeedStream(10)), builtin_kernel("gini"), NORMAL)
        assert d.D3n(1.0, C4=2.0) == pytest.approx(2 * d.D3n(1.0))
        with pytest.raises(ValueError):
            d.D3n(0.0)


class _Fake:
    def __init__(self, W, V2, n=25):
        self.W_n, self.V_n2, self.n = W, V2, n
        self.V_n = math.sqrt(V2)


class TestMembership:
    @pytest.mark.parametrize("x", [0.0, 0.5, 3.0])
    def test_centered(self, x):
        assert membership_G_nx(_Fake(0.0, 1.0), x)

    def test_small_V(self):
        assert not membership_G_nx(_Fake(0.0, 0.4), 1.0)

    def test_complement_shrinks(self):
        k = builtin_kernel("gini")
        rates = []
        for n in (10, 40):
            miss = sum(not membership_G_nx(hoeffding_decompose(NORMAL.sample(n, SeedStream(11).child(n, r)), k, NORMAL), 1.0)
                       for r in range(200))
            rates.append(miss / 200)
        assert rates[1] <= rates[0]
