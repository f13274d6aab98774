"""End-to-end acceptance runs A1-A9.

Each test prints one ``A<k> PASS|FAIL`` line to the terminal.  The whole
module takes several minutes; deselect it with ``-m "not slow"``.
"""
from __future__ import annotations

import pytest

from ruinwalk import limits, mc
from ruinwalk.dists import DiscretePower
from ruinwalk.exceed import StopRule
from ruinwalk.experiment import get_preset, run_experiment
from ruinwalk.models import CeilPower, model_from_dict

pytestmark = pytest.mark.slow


def _report(capsys, tag: str, ok: bool, detail: str):
    with capsys.disabled():
        print(f"\n{tag} {'PASS' if ok else 'FAIL'} {detail}")
    assert ok, f"{tag}: {detail}"


def _run(name, tmp_path, **kw):
    return run_experiment(get_preset(name), tmp_path, **kw)


def test_a1_asymptote(tmp_path, capsys):
    rep = _run("thm11-asymptote", tmp_path)
    c = rep.criteria
    last = rep.summary["per_x"][-1]["estimate"]
    ok = (0.75 <= c["ratios"][-1] <= 1.25 and c["inversions"] <= 1
          and 5e-4 <= last["asymptote"] <= 2e-3 and last["n_paths"] >= 2_000_000)
    _report(capsys, "A1", ok, f"ratios={[round(r, 3) for r in c['ratios']]} inversions={c['inversions']} "
                              f"asymptote={last['asymptote']:.3g}")


def test_a2_pareto_walk_law(tmp_path, capsys):
    rep = _run("thm12-pareto", tmp_path)
    c = rep.criteria
    hits = min(e["estimate"]["n_hits"] for e in rep.summary["per_x"])
    ok = c["ks_trend_pass"] and c["ks_final"] <= 0.10 and c["crosscheck_ok"] and hits >= 2000
    _report(capsys, "A2", ok, f"ks={rep.summary['ks_trend']['ks']} crosscheck_ks={c['crosscheck_ks']:.3f} "
                              f"min_hits={hits}")


def test_a3_regenerative_law(tmp_path, capsys):
    rep = _run("thm13-regenerative", tmp_path)
    c = rep.criteria
    ok = c["ks_trend_pass"] and c["ks_final"] <= 0.10
    _report(capsys, "A3", ok, f"ks={rep.summary['ks_trend']['ks']} slope={rep.summary['ks_trend']['slope']:.4f}")


def test_a4_quadruple(tmp_path, capsys):
    rep = _run("thm35-quadruple", tmp_path)
    c = rep.criteria
    ok = c["joint_tail_maxdev"] <= 0.05 and c["q3_mean"] <= 0.05 and c["corr"] >= 0.9
    _report(capsys, "A4", ok, f"joint_tail_maxdev={c['joint_tail_maxdev']:.4f} q3_mean={c['q3_mean']:.4f} "
                              f"corr={c['corr']:.4f}")


def test_a5_decomposition(tmp_path, capsys):
    rep = _run("lem51-decomposition", tmp_path)
    c = rep.criteria
    ok = (c["rw_agree"] >= 0.95 and abs(c["T_pre_ratio_mean"] - c["mu"]) <= 0.1 * c["mu"]
          and c["t_in_median"] <= 0.1)
    _report(capsys, "A5", ok, f"rw_agree={c['rw_agree']:.4f} T_pre/tau_rw={c['T_pre_ratio_mean']:.4f} "
                              f"mu={c['mu']:.4f} t_in_median={c['t_in_median']:.4f}")


def test_a6_bjork_grandell_and_fluid(tmp_path, capsys):
    bg = _run("ex62-bg-iii-cor71", tmp_path)
    fl = _run("ex63-fluid", tmp_path)
    c, f = bg.criteria, fl.criteria
    ok = (c["slope_rel_err"] <= 0.25 and min(c["ks_mixture"], c["ks_power"]) <= 0.15
          and fl.verdict == "fail" and f["aux_t_in_bounded_below"])
    _report(capsys, "A6", ok, f"slope={c['slope']:.4f} c1={c['c1']:.4f} rel_err={c['slope_rel_err']:.3f} "
                              f"ks_mixture={c['ks_mixture']:.3f} ks_power={c['ks_power']:.3f} "
                              f"fluid_verdict={fl.verdict} min_t_in_median={min(f['t_in_medians']):.3f}")


def test_a7_growth_bound(tmp_path, capsys):
    good = limits.growth_bound_check(DiscretePower(3.0, 1_000_000), CeilPower(2.0))
    bad = limits.growth_bound_check(DiscretePower(2.0, 1_000_000), CeilPower(3.0))
    rep = _run("ex73-construction", tmp_path)
    fr = [e["stats"]["phi_frac"] for e in rep.summary["per_x"]]
    # asymptotic statement: judged at the largest level, with the fraction rising along the grid
    ok = good.feasible and not bad.feasible and fr[-1] >= 0.95 and fr[-1] >= fr[0]
    _report(capsys, "A7", ok, f"feasible(3,2)={good.feasible} feasible(2,3)={bad.feasible} "
                              f"witness={bad.witness_x} phi_frac={[round(v, 4) for v in fr]}")


def test_a8_sampler_equivalence(capsys):
    model = model_from_dict(get_preset("thm12-pareto").model)
    x, stop = 15.0, StopRule(40.0)
    cfg = mc.RunConfig(n_paths=1_000_000, seed=21, sampler="bigjump", stop=stop)
    bj = mc.big_jump_sampler(model, x, cfg, 3000).records
    cr_s = mc.conditional_sample_crude(model, x, mc.RunConfig(n_paths=2_000_000, seed=22, stop=stop), 3000)
    cr = cr_s.records
    p = len(cr) / cr_s.n_paths
    ks = {f: limits.ks_two_sample(limits.EmpiricalDistribution(getattr(bj, f), bj.weights),
                                  limits.EmpiricalDistribution(getattr(cr, f)))
          for f in ("tau", "tau_rw", "overshoot")}
    ess_frac = bj.ess / len(bj)
    ok = (max(ks.values()) <= 0.05 and min(len(bj), len(cr)) >= 2000 and ess_frac >= 0.10
          and 5e-3 <= p <= 2e-2)
    _report(capsys, "A8", ok, f"p_crude={p:.4f} ks={ {k: round(v, 4) for k, v in ks.items()} } "
                              f"hits=({len(bj)}, {len(cr)}) ess_frac={ess_frac:.3f}")


def test_a9_determinism(tmp_path, capsys):
    spec = get_preset("thm12-weibull")
    run_experiment(spec, tmp_path / "w1", workers=1)
    run_experiment(spec, tmp_path / "w2", workers=2)
    a = (tmp_path / "w1" / spec.name / "summary.json").read_bytes()
    b = (tmp_path / "w2" / spec.name / "summary.json").read_bytes()
    _report(capsys, "A9", a == b, f"summary bytes {len(a)} vs {len(b)} identical={a == b}")
