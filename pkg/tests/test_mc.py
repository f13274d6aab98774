from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ruinwalk import mc
from ruinwalk.dists import Deterministic, DiscretePower, Exponential, Pareto
from ruinwalk.exceed import StopRule
from ruinwalk.mc import RunConfig
from ruinwalk.models import IIDWalk, IncrementLaw, Regenerative

PARETO_WALK = IIDWalk(IncrementLaw(Pareto(2.5, 1.0), shift=5.0 / 3.0))
REGEN = Regenerative(Exponential(1.0), Pareto(2.5, 0.9), 1.0, 5.0 / 3.0)


def _lattice_walk(p_up):
    """+1 with probability p_up, -1 otherwise."""
    return IIDWalk(IncrementLaw(Deterministic(2.0), shift=1.0, heavy_prob=p_up, light=Deterministic(0.0)))


def _lattice_oracle(p_up, x, s):
    """P(walk from 0 exceeds x before dropping below -s x), by a linear solve."""
    top = math.floor(x) + 1
    low = -math.floor(s * x)  # lowest level still above the barrier
    z = np.arange(low, top)
    n = len(z)
    A = np.eye(n)
    b = np.zeros(n)
    for i in range(n):
        if i + 1 < n:
            A[i, i + 1] -= p_up
        else:
            b[i] += p_up
        if i - 1 >= 0:
            A[i, i - 1] -= 1.0 - p_up
    h = np.linalg.solve(A, b)
    return float(h[np.flatnonzero(z == 0)[0]])


class TestRunConfig:
    def test_validation(self):
        for kw in ({"n_paths": 0}, {"workers": 0}, {"sampler": "nope"}, {"seed": -1}, {"proposal": "x"}):
            with pytest.raises(ValueError):
                RunConfig(**kw)


class TestRng:
    def test_block_rng_deterministic(self):
        a = mc.block_rng(7, 3, 1).random(5)
        b = mc.block_rng(7, 3, 1).random(5)
        c = mc.block_rng(7, 4, 1).random(5)
        d = mc.block_rng(7, 3, 2).random(5)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c) and not np.array_equal(a, d)

    def test_replicate_order(self):
        assert mc.replicate(lambda b: b * b, 5, workers=1, start=2) == [4, 9, 16, 25, 36]


class TestEstimate:
    def test_bounds_and_ci(self):
        r = mc.estimate_ruin_prob(PARETO_WALK, 1e-6, RunConfig(n_paths=20_000, seed=1))
        assert 0 < r.p_hat < 1
        assert r.ci95[0] <= r.p_hat <= r.ci95[1]
        d = r.to_dict()
        for k in ("x", "p_hat", "stderr", "ci95", "asymptote", "ratio", "n_hits", "ess"):
            assert k in d

    def test_workers_identical(self):
        cfg1 = RunConfig(n_paths=40_000, seed=3, workers=1)
        cfg2 = RunConfig(n_paths=40_000, seed=3, workers=2)
        assert mc.estimate_ruin_prob(REGEN, 5.0, cfg1).to_dict() == mc.estimate_ruin_prob(REGEN, 5.0, cfg2).to_dict()

    def test_doubling_halves_variance(self):
        x = 5.0
        r1 = mc.estimate_ruin_prob(PARETO_WALK, x, RunConfig(n_paths=100_000, seed=4))
        r2 = mc.estimate_ruin_prob(PARETO_WALK, x, RunConfig(n_paths=200_000, seed=5))
        # binomial variance p(1-p)/n at the pooled p
        p = (r1.p_hat + 2 * r2.p_hat) / 3
        v1, v2 = p * (1 - p) / 100_000, p * (1 - p) / 200_000
        assert v2 / v1 == pytest.approx(0.5, rel=0.1)
        assert r2.stderr ** 2 / r1.stderr ** 2 == pytest.approx(0.5, rel=0.1)

    def test_disjoint_seeds_compatible(self):
        a = mc.estimate_ruin_prob(PARETO_WALK, 5.0, RunConfig(n_paths=100_000, seed=10))
        b = mc.estimate_ruin_prob(PARETO_WALK, 5.0, RunConfig(n_paths=100_000, seed=11))
        assert a.p_hat != b.p_hat
        assert abs(a.p_hat - b.p_hat) < 4 * math.hypot(a.stderr, b.stderr)

    def test_lattice_oracle_coverage(self):
        p_up, x, s = 0.3, 2.5, 4.0
        truth = _lattice_oracle(p_up, x, s)
        assert truth == pytest.approx(0.0787, abs=2e-3)
        model = _lattice_walk(p_up)
        covered = 0
        for rep in range(100):
            r = mc.estimate_ruin_prob(model, x, RunConfig(n_paths=4000, seed=1000 + rep, stop=StopRule(s)))
            covered += r.ci95[0] <= truth <= r.ci95[1]
        assert covered >= 90

    def test_all_inconclusive(self):
        cfg = RunConfig(n_paths=100, seed=1, stop=StopRule(4.0, max_cycles=1))
        with pytest.raises(RuntimeError):
            mc.estimate_ruin_prob(PARETO_WALK, 50.0, cfg)


class TestConditionalCrude:
    def test_zero_target(self):
        cs = mc.conditional_sample_crude(PARETO_WALK, 5.0, RunConfig(), 0)
        assert len(cs.records) == 0

    def test_weights_one_and_target(self):
        cs = mc.conditional_sample_crude(PARETO_WALK, 5.0, RunConfig(n_paths=200_000, seed=2), 300)
        assert len(cs.records) >= 300 and not cs.exhausted
        assert np.all(cs.records.log_w == 0) and np.all(cs.records.hit)

    def test_budget_exhaustion(self):
        cs = mc.conditional_sample_crude(PARETO_WALK, 50.0, RunConfig(n_paths=1000, seed=2), 500)
        assert cs.exhausted and len(cs.records) < 500

    def test_hit_fraction_matches_estimate(self):
        cfg = RunConfig(n_paths=100_000, seed=6)
        cs = mc.conditional_sample_crude(REGEN, 5.0, cfg, 10**9)
        r = mc.estimate_ruin_prob(REGEN, 5.0, RunConfig(n_paths=100_000, seed=7))
        p = len(cs.records) / (cs.n_paths - cs.n_inconclusive)
        assert abs(p - r.p_hat) < 4 * math.sqrt(2) * r.stderr

    def test_fluid_hits_land_on_upslope(self):
        from ruinwalk.dists import WeibullHeavy
        from ruinwalk.models import FluidTwoStage
        m = FluidTwoStage(3.0, WeibullHeavy(0.5, 1.0))
        cs = mc.conditional_sample_crude(m, 10.0, RunConfig(n_paths=100_000, seed=3), 200)
        rec = cs.records
        assert np.allclose(rec.overshoot, 0.0, atol=1e-9)
        # crossing happens on the up-slope: past the drain of length a1
        assert np.all(rec.t_in_cycle > 2 * 3.0)


class TestBigJump:
    def test_index_weight_ratio(self):
        x, a, sig, al, shift = 20.0, 1.0, 1.0, 2.5, 5.0 / 3.0
        w = mc.index_weights(PARETO_WALK, x, StopRule(4.0))
        n = np.arange(1, 6)
        want = ((sig + x + (n + 1) * a + shift) / (sig + x + n * a + shift)) ** -al
        assert np.allclose(w[1:6] / w[0:5], want)
        assert w.sum() == pytest.approx(1.0)

    def test_degenerate_rejected(self):
        m = IIDWalk(IncrementLaw(DiscretePower(3.0, 10), shift=1.0))
        with pytest.raises(ValueError):
            mc.index_weights(m, 100.0, StopRule(4.0))

    @pytest.mark.parametrize("proposal", ["hazard", "index"])
    def test_estimate_agrees_with_crude(self, proposal):
        x = 10.0
        cfg = RunConfig(n_paths=20_000, seed=8, sampler="bigjump", proposal=proposal, stop=StopRule(4.0))
        r = mc.estimate_ruin_prob(PARETO_WALK, x, cfg)
        c = mc.estimate_ruin_prob(PARETO_WALK, x, RunConfig(n_paths=1_000_000, seed=9, stop=StopRule(4.0)))
        assert abs(r.p_hat - c.p_hat) < 4 * math.hypot(r.stderr, c.stderr)
        assert r.ess > 0.1 * r.n_hits

    def test_regenerative_estimate_agrees(self):
        x = 10.0
        cfg = RunConfig(n_paths=12_288, seed=10, sampler="bigjump", stop=StopRule(4.0))
        r = mc.estimate_ruin_prob(REGEN, x, cfg)
        c = mc.estimate_ruin_prob(REGEN, x, RunConfig(n_paths=400_000, seed=11, stop=StopRule(4.0)))
        assert abs(r.p_hat - c.p_hat) < 4 * math.hypot(r.stderr, c.stderr)

    def test_workers_identical(self):
        cfgs = [RunConfig(n_paths=200_000, seed=12, sampler="bigjump", workers=w) for w in (1, 3)]
        a, b = (mc.big_jump_sampler(REGEN, 20.0, c, 3000) for c in cfgs)
        assert a.records.to_csv() == b.records.to_csv()
        assert (a.sum_w, a.n_paths) == (b.sum_w, b.n_paths)

    def test_summarize_sample(self):
        cfg = RunConfig(n_paths=50_000, seed=13, sampler="bigjump")
        cs = mc.big_jump_sampler(PARETO_WALK, 30.0, cfg, 1000)
        r = mc.summarize_sample(PARETO_WALK, 30.0, cfg, cs)
        assert r.n_hits == len(cs.records) and 0 < r.p_hat < 1
        assert r.ratio == pytest.approx(1.0, abs=0.3)
        assert cs.records.weights.sum() == pytest.approx(1.0)


@settings(max_examples=15, deadline=None)
@given(p_up=st.floats(0.05, 0.45), x=st.floats(0.5, 6.0))
def test_lattice_oracle_is_gamblers_ruin(p_up, x):
    """Linear-solve oracle matches the closed-form gambler's-ruin probability."""
    s = 4.0
    r = (1 - p_up) / p_up
    top, low = math.floor(x) + 1, -math.floor(s * x) - 1
    k, n = -low, top - low
    closed = (1 - r ** k) / (1 - r ** n)
    assert _lattice_oracle(p_up, x, s) == pytest.approx(closed, rel=1e-9)
