from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ruinwalk import exceed
from ruinwalk.dists import Deterministic, DiscretePower, Exponential, Pareto, WeibullHeavy
from ruinwalk.exceed import ExceedanceRecord, JumpHazard, RecordBatch, StopRule
from ruinwalk.models import (FluidTwoStage, IIDWalk, IncrementLaw, ModulatedRegenerative, RateConstruction,
                             Regenerative, CompoundLaw)


def _rng(seed=0):
    return np.random.default_rng(seed)


PARETO_WALK = IIDWalk(IncrementLaw(Pareto(2.5, 1.0), shift=5.0 / 3.0))
REGEN = Regenerative(Exponential(1.0), Pareto(2.5, 0.9), 1.0, 5.0 / 3.0)
RATE = RateConstruction(DiscretePower(3.0, 100_000), 2.0)


class TestStopRule:
    def test_validation(self):
        with pytest.raises(ValueError):
            StopRule(0.0)
        with pytest.raises(ValueError):
            StopRule(4.0, 0)

    def test_missed_mass_pareto(self):
        b = StopRule(4.0).missed_mass_bound(PARETO_WALK, 1e6)
        assert b == pytest.approx(5.0 ** -1.5, rel=1e-3)


class TestRunPath:
    def test_fluid_never_hits(self):
        m = FluidTwoStage(2.0, Deterministic(1.0))
        rec = exceed.run_path(m, 0.5, StopRule(4.0), _rng())
        assert not rec.hit and not rec.inconclusive
        assert math.isnan(rec.tau) and math.isnan(rec.overshoot)
        assert rec.steps_run == 3  # Z falls by 1 per cycle and first drops below -s x = -2 at Z = -3

    def test_positive_drift_rejected(self):
        with pytest.raises(ValueError):
            IIDWalk(IncrementLaw(Deterministic(1.0)))

    def test_level_must_be_positive(self):
        with pytest.raises(ValueError):
            exceed.simulate_paths(PARETO_WALK, 0.0, StopRule(), _rng(), 10)

    def test_rate_construction_first_jump(self):
        x = 5.0
        rec = exceed.simulate_paths(RATE, x, StopRule(4.0), _rng(3), 20_000)
        first = rec.hit & (rec.tau_hat_rw == 1)
        assert first.sum() > 10
        x0 = rec.overshoot[first] + x
        assert np.allclose(x0, np.round(x0))
        assert np.allclose(rec.tau[first], np.ceil(x0 ** 2) - 1)
        assert np.all(rec.tau_rw[first] == 1)

    def test_inconclusive_flagged(self):
        rec = exceed.simulate_paths(PARETO_WALK, 50.0, StopRule(4.0, max_cycles=3), _rng(), 200)
        assert rec.inconclusive.sum() > 150
        assert not np.any(rec.hit & rec.inconclusive)
        assert np.all(rec.steps_run[rec.inconclusive] == 3)

    @pytest.mark.parametrize("model", [PARETO_WALK, REGEN, RATE, FluidTwoStage(3.0, WeibullHeavy(0.5, 1.0))],
                             ids=["walk", "regen", "rate", "fluid"])
    def test_record_invariants(self, model):
        x = 5.0
        rec = exceed.simulate_paths(model, x, StopRule(4.0), _rng(5), 20_000)
        h = rec.hit
        assert h.sum() > 20
        # a continuous crossing lands exactly on x; jumps overshoot strictly
        assert np.all(rec.overshoot[h] >= 0)
        if model.unit_cycles or isinstance(model, RateConstruction):
            assert np.all(rec.overshoot[h] > 0)
        ok = h & np.isfinite(rec.tau_rw)
        assert np.all(rec.tau_rw[ok] >= rec.tau_hat_rw[ok])
        same = ok & (rec.tau_rw == rec.tau_hat_rw)
        assert np.allclose(rec.tau[same], rec.T_pre[same] + rec.t_in_cycle[same], rtol=1e-12, atol=1e-9)
        assert np.all(rec.Z_before[ok] <= x)
        assert np.all(np.isnan(rec.tau[~h]))
        assert np.all(rec.max_dev[ok] >= 0)

    def test_walk_indices_coincide(self):
        rec = exceed.simulate_paths(PARETO_WALK, 10.0, StopRule(4.0), _rng(6), 20_000)
        h = rec.hit
        assert np.array_equal(rec.tau_rw[h], rec.tau_hat_rw[h])
        assert np.array_equal(rec.tau[h], rec.tau_rw[h])

    def test_hits_only_path_agrees_with_full(self):
        a = exceed.simulate_paths(PARETO_WALK, 8.0, StopRule(4.0), _rng(7), 50_000, full_stats=False)
        b = exceed.simulate_paths(PARETO_WALK, 8.0, StopRule(4.0), _rng(8), 50_000)
        pa, pb = a.hit.mean(), b.hit.mean()
        se = math.sqrt(pa * (1 - pa) / 50_000 * 2)
        assert abs(pa - pb) < 5 * se


class TestQuadruple:
    def test_arithmetic(self):
        rec = ExceedanceRecord(True, tau=5.0, tau_rw=5.0, Z_before=-10.0, max_dev=0.0, overshoot=10.0)
        assert exceed.quadruple(rec, 20.0, 2.0, 10.0) == (1.0, -1.0, 0.0, 1.0)

    def test_nonhit_rejected(self):
        with pytest.raises(ValueError):
            exceed.quadruple(ExceedanceRecord(False), 1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            exceed.decomposition_stats(ExceedanceRecord(False), 1.0)


class TestDecomposition:
    def test_unit_cycles(self):
        rec = exceed.simulate_paths(PARETO_WALK, 10.0, StopRule(4.0), _rng(9), 5000)
        for i in np.flatnonzero(rec.hit)[:50]:
            r = rec.record(i)
            _, ratio, _ = exceed.decomposition_stats(r, 10.0)
            assert ratio == pytest.approx((r.tau_rw - 1) / r.tau_rw)

    def test_regenerative_ratio_near_mu(self):
        rec = exceed.simulate_paths(REGEN, 25.0, StopRule(4.0), _rng(10), 200_000)
        h = rec.hit & (rec.tau_rw > 5)
        r = rec.T_pre[h] / rec.tau_rw[h]
        assert float(np.mean(r)) == pytest.approx(1.0, rel=0.15)


class TestCsv:
    def test_roundtrip_exact(self):
        rec = exceed.simulate_paths(REGEN, 5.0, StopRule(4.0), _rng(11), 3000)
        back = RecordBatch.from_csv(rec.to_csv())
        assert back.to_csv() == rec.to_csv()
        assert np.array_equal(back.hit, rec.hit)
        assert np.array_equal(back.tau, rec.tau, equal_nan=True)
        assert rec.to_csv().splitlines()[0] == ",".join(exceed.CSV_HEADER)

    def test_bad_header(self):
        with pytest.raises(ValueError):
            RecordBatch.from_csv("a,b\n1,2\n")

    def test_weights_self_normalized(self):
        rec = RecordBatch.empty(4)
        rec.log_w[:] = [0.0, math.log(3.0), -1000.0, 0.0]
        assert rec.weights.sum() == pytest.approx(1.0)
        assert rec.weights[1] == pytest.approx(0.6)
        assert 1.0 < rec.ess < 4.0


class TestBigJumpPaths:
    def test_accepted_records_hit_at_index(self):
        n = 2000
        n_idx = _rng(12).integers(1, 40, n)
        rec, acc = exceed.big_jump_paths(PARETO_WALK, 20.0, StopRule(4.0), _rng(13), n_idx, np.zeros(n))
        assert acc.sum() > 0.5 * n
        assert np.all(rec.tau_hat_rw[acc] == n_idx[acc])
        assert np.all(np.isneginf(rec.log_w[~acc]))
        # a pre-path that already exceeded x is rejected, never double counted
        assert np.all(rec.hit[acc])

    def test_mixture_weights_finite_on_hits(self):
        hz = JumpHazard(REGEN, 25.0, 4.0)
        rec = exceed.mixture_paths(REGEN, 25.0, StopRule(4.0), _rng(14), 1000, hz)
        assert rec.hit.mean() > 0.5
        assert np.all(np.isfinite(rec.log_w[rec.hit]))
        assert np.all(np.isneginf(rec.log_w[~rec.hit]))

    def test_hazard_bounds(self):
        hz = JumpHazard(PARETO_WALK, 50.0, 4.0)
        u = np.geomspace(1e-4, 500.0, 100)
        h = hz(u)
        assert np.all((h >= 0) & (h <= 0.5))
        assert h[-1] < h[0]

    def test_mixture_unbiased_small_level(self):
        """The mixture estimator and crude simulation agree on P(M > x)."""
        x, n = 3.0, 40_000
        hz = JumpHazard(PARETO_WALK, x, 4.0)
        rec = exceed.mixture_paths(PARETO_WALK, x, StopRule(4.0), _rng(15), n, hz)
        w = np.where(rec.hit, np.exp(rec.log_w), 0.0)
        p_mix, se_mix = w.mean(), w.std() / math.sqrt(n)
        crude = exceed.simulate_paths(PARETO_WALK, x, StopRule(4.0), _rng(16), 200_000, full_stats=False)
        p_cr = crude.hit.mean()
        se_cr = math.sqrt(p_cr * (1 - p_cr) / 200_000)
        assert abs(p_mix - p_cr) < 4 * math.hypot(se_mix, se_cr)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), x=st.floats(1.0, 30.0))
def test_tau_decomposition_property(seed, x):
    m = ModulatedRegenerative([[0.6, 0.4], [0.5, 0.5]],
                              [CompoundLaw(Deterministic(1.0), Exponential(1.0), Pareto(2.5, 0.9), 2.0),
                               CompoundLaw(Deterministic(0.5), Exponential(0.5), Pareto(2.5, 0.9), 1.0)])
    rec = exceed.simulate_paths(m, x, StopRule(4.0), np.random.default_rng(seed), 300)
    h = rec.hit & np.isfinite(rec.tau_rw)
    same = h & (rec.tau_rw == rec.tau_hat_rw)
    assert np.allclose(rec.tau[same], rec.T_pre[same] + rec.t_in_cycle[same], atol=1e-9)
    assert np.all(rec.overshoot[rec.hit] > 0)
    assert np.all(rec.tau_rw[h] >= rec.tau_hat_rw[h])
