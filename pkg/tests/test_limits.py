from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ruinwalk import limits
from ruinwalk.dists import Deterministic, DiscretePower, LimitLawG, Lognormal, Pareto
from ruinwalk.limits import (Cor71MixI, Cor71MixII, Cor71Power, EmpiricalDistribution, GLaw, QuadrupleLaw,
                             ScaledG, WStarBG)
from ruinwalk.models import CeilPower

STDEXP = LimitLawG("StdExp")
PTAIL = LimitLawG("ParetoTail", exponent=1.5)
WSTAR = WStarBG(Lognormal(math.log(0.5), 0.6), 1.0, 1.2, 2.5)


def _rng(seed=0):
    return np.random.default_rng(seed)


def _self_ks(law, n=100_000, seed=0):
    return limits.ks_distance(EmpiricalDistribution(law.sample(_rng(seed), n)), law)


class TestLaws:
    def test_scaled_g(self):
        assert ScaledG(0.5, STDEXP).sf(1.0) == pytest.approx(math.exp(-2.0))
        with pytest.raises(ValueError):
            ScaledG(0.0, STDEXP)

    def test_quadruple_joint_tail(self):
        q = QuadrupleLaw(STDEXP)
        assert q.joint_sf(1.0, 1.0) == pytest.approx(math.exp(-2.0))

    @pytest.mark.parametrize("g", [STDEXP, PTAIL], ids=["exp", "pareto"])
    def test_quadruple_sampling(self, g):
        q = QuadrupleLaw(g)
        s = q.sample(_rng(1), 100_000)
        assert s.shape == (100_000, 4)
        assert np.array_equal(s[:, 1], -s[:, 0]) and np.all(s[:, 2] == 0)
        crit = 1.36 / math.sqrt(100_000)
        for col in (0, 3):
            assert limits.ks_distance(EmpiricalDistribution(s[:, col]), GLaw(g)) <= crit
        for u, v in [(0.3, 0.5), (1.0, 1.0), (2.0, 0.2)]:
            emp = np.mean((s[:, 0] > u) & (s[:, 3] > v))
            assert emp == pytest.approx(float(q.joint_sf(u, v)), abs=4e-3)

    @pytest.mark.parametrize("law", [GLaw(STDEXP), GLaw(PTAIL), ScaledG(2.0, PTAIL)],
                             ids=["g-exp", "g-pareto", "scaled"])
    def test_self_draw_ks(self, law):
        assert _self_ks(law) <= 1.36 / math.sqrt(100_000)

    def test_wstar_self_draw_ks(self):
        # the exact CDF costs one quadrature per distinct point
        assert _self_ks(Cor71MixII(WSTAR), n=4000, seed=4) <= 1.36 / math.sqrt(4000)

    def test_mixture_self_draw_ks(self):
        for law in (Cor71MixI(0.7, 1.3, 2.0, PTAIL, WSTAR), Cor71Power(0.7, 1.5, PTAIL, WSTAR)):
            assert _self_ks(law, n=20_000, seed=2) <= 1.36 / math.sqrt(20_000) + 2e-3

    def test_mix_d_zero_is_scaled(self):
        t = np.linspace(0.0, 10.0, 41)
        a = Cor71MixI(0.0, 1.3, 2.0, PTAIL, WSTAR).cdf(t)
        b = ScaledG(1.3 / 2.0, PTAIL).cdf(t)
        assert np.array_equal(a, b)

    def test_wstar_cdf(self):
        tmax = 1.0 / (1.2 - 1.0)
        assert WSTAR.t_max == pytest.approx(tmax)
        t = np.linspace(0.01, tmax * 1.5, 60)
        F = WSTAR.cdf(t)
        assert np.all(np.diff(F) >= -1e-12)
        assert WSTAR.cdf(tmax) == 1.0 and WSTAR.cdf(tmax * 2) == 1.0
        assert WSTAR.cdf(tmax * (1 - 1e-9)) == pytest.approx(1.0, abs=1e-6)
        assert WSTAR.cdf(0.0) == 0.0
        assert np.allclose(WSTAR.table_cdf(t), F, atol=1e-3)

    def test_wstar_needs_supercritical_lam0(self):
        with pytest.raises(ValueError):
            WStarBG(Lognormal(0.0, 0.5), 1.0, 0.9, 2.5)

    def test_laws_are_distribution_functions(self):
        t = np.linspace(-1.0, 50.0, 80)
        for law in (GLaw(STDEXP), ScaledG(2.0, PTAIL), Cor71MixI(0.7, 1.3, 2.0, PTAIL, WSTAR),
                    Cor71Power(0.7, 1.5, PTAIL, WSTAR)):
            F = np.asarray(law.cdf(t))
            assert np.all(np.diff(F) >= -1e-12) and F[0] == 0.0 and F[-1] > 0.8


class TestEmpirical:
    def test_normalization(self):
        e = EmpiricalDistribution([3.0, 1.0, 2.0], [1.0, 1.0, 2.0])
        assert np.array_equal(e.values, [1.0, 2.0, 3.0])
        assert e.weights.sum() == pytest.approx(1.0)
        assert e.cdf(2.0) == pytest.approx(0.75)
        assert e.quantile(0.5) == 2.0

    def test_rejects_bad_input(self):
        for vals, w in [([], None), ([1.0, np.nan], None), ([1.0], [-1.0]), ([1.0, 2.0], [0.0, 0.0])]:
            with pytest.raises(ValueError):
                EmpiricalDistribution(vals, w)

    def test_ks_point_mass_at_median(self):
        med = math.log(2.0)
        assert limits.ks_distance(EmpiricalDistribution([med]), GLaw(STDEXP)) == pytest.approx(0.5)

    def test_two_sample_identical(self):
        v = _rng(3).random(500)
        assert limits.ks_two_sample(EmpiricalDistribution(v), EmpiricalDistribution(v.copy())) == 0.0

    def test_ess(self):
        assert EmpiricalDistribution(np.arange(10.0)).ess == pytest.approx(10.0)


class TestTrend:
    def test_pass(self):
        v = limits.trend_check([(10, 0.3), (100, 0.15), (1000, 0.07)], 0.1)
        assert v.passed and v.slope < 0
        assert v.rows()[0] == (10.0, 0.3, 0.1, True)

    def test_constant_fails(self):
        assert not limits.trend_check([(10, 0.3), (100, 0.3), (1000, 0.3)], 0.1).passed

    def test_final_above_threshold_fails(self):
        assert not limits.trend_check([(10, 0.5), (100, 0.3), (1000, 0.2)], 0.1).passed

    def test_validation(self):
        with pytest.raises(ValueError):
            limits.trend_check([(10, 0.3), (100, 0.2)])
        with pytest.raises(ValueError):
            limits.trend_check([(10, 0.3), (5, 0.2), (100, 0.1)])


class TestBgConstants:
    def test_constant_rate(self):
        c, c1 = limits.bg_constants(Deterministic(3.0), 1.0, 2.0, 2.5, mean_R=10.0, mean_lambda_R=3.0)
        assert c == pytest.approx(2.0 ** 2.5)
        assert c1 == pytest.approx(c / (1.5 * 7.0))

    def test_rate_below_threshold(self):
        assert limits.bg_constants(Deterministic(1.5), 1.0, 2.0, 2.5, 10.0, 1.5) == (0.0, 0.0)
        assert limits.bg_constants(Pareto(2.0, 1.0), 1.0, 1e300, 2.5, 10.0, 1.0)[0] == 0.0

    def test_lognormal_rate_by_direct_integration(self):
        from scipy import integrate
        rate = Lognormal(math.log(0.5), 0.6)
        c, _ = limits.bg_constants(rate, 1.0, 1.2, 2.5, 10.0, 0.5)
        direct = integrate.quad(lambda l: float(rate.pdf(l)) * (l - 1.0) ** 2.5, 1.2, np.inf, limit=400)[0]
        assert c == pytest.approx(direct, rel=1e-6)

    def test_nonpositive_denominator(self):
        with pytest.raises(ValueError):
            limits.bg_constants(Deterministic(3.0), 1.0, 2.0, 2.5, mean_R=1.0, mean_lambda_R=3.0)


class TestGrowthBound:
    def test_feasible(self):
        r = limits.growth_bound_check(DiscretePower(3.0, 1_000_000), CeilPower(2.0))
        assert r.feasible and r.bound_ok and r.recursion_ok
        assert r.witness_x is None
        assert r.term_exponent == pytest.approx(2.0, abs=0.1)
        sums = list(r.partial_sums.values())
        assert np.all(np.diff(sums) >= 0)
        assert r.tail_share < 0.01

    def test_infeasible(self):
        r = limits.growth_bound_check(DiscretePower(2.0, 1_000_000), CeilPower(3.0))
        assert not r.feasible
        assert r.term_exponent < 1.0 and r.tail_share > 0.5
        assert r.witness_x is not None and r.witness_x > 1

    def test_constant_phi(self):
        r = limits.growth_bound_check(DiscretePower(2.0, 100_000), lambda x: np.ones_like(x))
        assert r.feasible
        assert np.allclose(r.k, 1.0)

    def test_feasible_implies_bound_on_grid(self):
        F = DiscretePower(3.0, 200_000)
        r = limits.growth_bound_check(F, CeilPower(1.5))
        assert r.feasible
        g = r.grid.astype(int)
        assert np.all(r.k * np.asarray(F.tail(g)) <= r.k1_tail1 * (1 + 1e-12))


@settings(max_examples=25, deadline=None)
@given(u=st.floats(0.0, 20.0), v=st.floats(0.0, 20.0), gamma=st.floats(0.3, 4.0))
def test_quadruple_joint_tail_property(u, v, gamma):
    g = LimitLawG("ParetoTail", exponent=gamma)
    q = QuadrupleLaw(g)
    assert q.joint_sf(u, v) == pytest.approx((1.0 + u + v) ** -gamma, rel=1e-12)
    assert q.joint_sf(u, 0.0) == pytest.approx(float(g.sf(u)), rel=1e-12)


@settings(max_examples=25, deadline=None)
@given(vals=st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=50),
       t=st.floats(-2e6, 2e6))
def test_empirical_cdf_matches_count(vals, t):
    e = EmpiricalDistribution(vals)
    assert e.cdf(t) == pytest.approx(np.mean(np.asarray(vals) <= t))
