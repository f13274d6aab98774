from __future__ import annotations

import json

import pytest

from ruinwalk.experiment import (ExperimentSpec, SpecError, get_preset, list_presets, recompute_stats,
                                 run_experiment)

NAMES = [p.name for p in list_presets()]


def _small(name, **over):
    """A preset shrunk to a quick run."""
    base = {"sampler.target_hits": 300, "sampler.max_paths": 60_000}
    base.update(over)
    return get_preset(name).with_overrides(base)


class TestPresets:
    def test_catalog(self):
        assert len(NAMES) == 14 and len(set(NAMES)) == 14
        for p in list_presets():
            p.validate()

    @pytest.mark.parametrize("name", NAMES)
    def test_json_roundtrip(self, name):
        p = get_preset(name)
        back = ExperimentSpec.from_json(p.to_json())
        assert back == p
        assert back.to_json() == p.to_json()

    def test_unknown(self):
        with pytest.raises(KeyError):
            get_preset("nope")

    def test_presets_are_copies(self):
        p = get_preset("thm12-pareto")
        p.x_grid.append(1e9)
        assert get_preset("thm12-pareto").x_grid[-1] != 1e9


class TestValidation:
    def test_empty_grid(self):
        with pytest.raises(SpecError) as ei:
            get_preset("thm12-pareto").with_overrides({"x_grid": []}).validate()
        assert any(p.startswith("x_grid") for p in ei.value.problems)

    def test_lists_every_problem(self):
        spec = get_preset("thm12-pareto").with_overrides(
            {"x_grid": [5, 2], "expect": "maybe", "thresholds.ks": -1, "sampler.kind": "other"})
        with pytest.raises(SpecError) as ei:
            spec.validate()
        keys = {p.split(":")[0] for p in ei.value.problems}
        assert {"x_grid", "expect", "thresholds.ks", "sampler.kind"} <= keys

    def test_bad_model(self):
        spec = get_preset("thm12-pareto").with_overrides({"model": {"kind": "Nope", "params": {}}})
        with pytest.raises(SpecError):
            spec.validate()

    def test_unknown_field_and_missing(self):
        with pytest.raises(SpecError):
            ExperimentSpec.from_dict({"name": "a", "check": "bound", "colour": 1})
        with pytest.raises(SpecError):
            ExperimentSpec.from_dict({"name": "a"})

    def test_override_missing_parent(self):
        with pytest.raises(SpecError):
            get_preset("thm72-bound").with_overrides({"nothere.x": 1})


class TestRuns:
    def test_bound_preset(self, tmp_path):
        rep = run_experiment(get_preset("thm72-bound"), tmp_path)
        assert rep.verdict == "pass" and rep.as_expected
        assert json.loads((tmp_path / "thm72-bound" / "summary.json").read_text())["verdict"] == "pass"

    def test_bound_override_infeasible(self):
        rep = run_experiment(get_preset("thm72-bound").with_overrides({"params.beta": 3.5}))
        assert rep.verdict == "fail" and not rep.as_expected

    def test_fluid_fails_as_expected(self, tmp_path):
        rep = run_experiment(_small("ex63-fluid"), tmp_path)
        assert rep.verdict == "fail" and rep.expected == "fail" and rep.as_expected
        assert all(e["stats"]["t_in_median"] >= 0.5 for e in rep.summary["per_x"])

    def test_artifacts_and_recompute(self, tmp_path):
        spec = _small("thm12-weibull", x_grid=[100, 400, 1600])
        rep = run_experiment(spec, tmp_path)
        d = tmp_path / spec.name
        for f in ("summary.json", "ks_series.json", "ks_series.csv", "plot_data.csv",
                  "records_x100.csv", "records_x400.csv", "records_x1600.csv"):
            assert (d / f).exists()
        assert (d / "ks_series.csv").read_text().splitlines()[0] == "x,ks,threshold,pass"
        again = recompute_stats(tmp_path, spec)
        stored = [e["stats"] for e in rep.summary["per_x"]]
        assert json.dumps(again, sort_keys=True) == json.dumps(stored, sort_keys=True)

    def test_seed_override_changes_records(self, tmp_path):
        spec = _small("thm12-weibull", x_grid=[100, 400, 1600])
        a = run_experiment(spec, tmp_path / "a", seed=1)
        b = run_experiment(spec, tmp_path / "b", seed=2)
        assert a.summary["seed"] == 1
        assert a.summary["per_x"][0]["stats"] != b.summary["per_x"][0]["stats"]

    def test_workers_byte_identical(self, tmp_path):
        spec = _small("thm13-regenerative", x_grid=[2, 5, 25])
        run_experiment(spec, tmp_path / "w1", workers=1)
        run_experiment(spec, tmp_path / "w2", workers=2)
        a = (tmp_path / "w1" / spec.name / "summary.json").read_bytes()
        b = (tmp_path / "w2" / spec.name / "summary.json").read_bytes()
        assert a == b
