import json
from pathlib import Path

import numpy as np
import pytest

from rsergodic import cli, errors, experiments

CONFIGS = sorted((Path(__file__).parent.parent / "configs").glob("*.toml"))

SMALL_CHAIN = {"experiment": "chain-coupling", "mc": {"N": 3000, "block_size": 1000}}


def read_bytes(path):
    return Path(path).read_bytes()


class TestCatalog:
    def test_names_and_order(self):
        names = [e["name"] for e in experiments.list_experiments()]
        assert names == ["chain-coupling", "wasserstein-ode", "wasserstein-noise", "tv-example",
                         "moment-bound", "certificates", "subordination"]

    def test_every_entry_has_anchor_and_runner(self):
        for e in experiments.list_experiments():
            assert e["description"] and e["anchor"]
            assert e["name"] in experiments.RUNNERS

    def test_anchors(self):
        cat = {e["name"]: e["anchor"] for e in experiments.list_experiments()}
        assert "deterministic" in cat["wasserstein-ode"]
        assert "subordination" in cat["subordination"].lower()


class TestConfig:
    @pytest.mark.parametrize("path", CONFIGS, ids=lambda p: p.stem)
    def test_shipped_configs_validate(self, path):
        cfg = experiments.load_config(path)
        full = experiments.resolve_config(cfg)
        assert full["experiment"] == path.stem
        # shipped files spell out the defaults
        assert full == experiments.resolve_config({"experiment": path.stem})

    def test_every_experiment_ships_a_config(self):
        assert {p.stem for p in CONFIGS} == set(experiments.CATALOG)

    def test_unknown_experiment(self):
        with pytest.raises(errors.UnknownExperiment):
            experiments.resolve_config({"experiment": "nope"})

    def test_missing_experiment(self):
        with pytest.raises(errors.ConfigError):
            experiments.resolve_config({"seed": 1})

    @pytest.mark.parametrize("override", [
        {"mc": {"N": 0}},
        {"mc": {"h": -0.1}},
        {"mc": {"time_grid": [1.0, 0.5]}},
        {"mc": {"time_grid": {"start": 1.0}}},
        {"seed": -3},
        {"model": {"name": "no-such-model"}},
        {"model": {"params": {"q": 0.5}}},
        {"tolerances": 3},
    ])
    def test_invalid(self, override):
        with pytest.raises(errors.ConfigError):
            experiments.resolve_config({"experiment": "wasserstein-ode", **override})

    def test_seed_override(self):
        full = experiments.resolve_config({"experiment": "certificates"}, seed=5)
        assert full["seed"] == 5

    def test_model_replaced_when_renamed(self):
        full = experiments.resolve_config({"experiment": "moment-bound",
                                           "model": {"name": "ode-example"}})
        assert full["model"] == {"name": "ode-example"}

    def test_model_params_merged(self):
        full = experiments.resolve_config({"experiment": "moment-bound",
                                           "model": {"params": {"b": 0.5}}})
        assert full["model"]["params"] == {"b": 0.5, "q": 2.0, "sigma": [1.0, 1.0]}

    @pytest.mark.parametrize("spec, expected", [
        ([1.0, 2.0], [1.0, 2.0]),
        ({"start": 1.0, "stop": 3.0, "num": 3}, [1.0, 2.0, 3.0]),
        ({"start": 1.0, "stop": 100.0, "num": 3, "spacing": "log"}, [1.0, 10.0, 100.0]),
    ])
    def test_time_grid(self, spec, expected):
        np.testing.assert_allclose(experiments.time_grid_from(spec), expected)

    def test_load_errors(self, tmp_path):
        with pytest.raises(errors.ConfigError):
            experiments.load_config(tmp_path / "missing.toml")
        bad = tmp_path / "bad.toml"
        bad.write_text("experiment = [")
        with pytest.raises(errors.ConfigError):
            experiments.load_config(bad)

    def test_hash_is_canonical(self):
        a = {"x": 1, "y": [1, 2]}
        b = {"y": [1, 2], "x": 1}
        assert experiments.config_hash(a) == experiments.config_hash(b)
        assert experiments.config_hash(a) != experiments.config_hash({"x": 2, "y": [1, 2]})


class TestRun:
    def test_csv_round_trip(self, tmp_path):
        experiments.write_curve(tmp_path / "c.csv", [1.0, 2.0], [0.1, 1 / 3], [0.01, 0.0], 10)
        cur = experiments.read_curve(tmp_path / "c.csv")
        assert cur["estimate"][1] == 1 / 3
        assert read_bytes(tmp_path / "c.csv").startswith(b"t,estimate,stderr,n\n")

    def test_byte_identical_reruns(self, tmp_path):
        experiments.run(SMALL_CHAIN, out=tmp_path / "a")
        experiments.run(SMALL_CHAIN, out=tmp_path / "b")
        for name in ("survival.csv", "tail_bound.csv", "report.json"):
            assert read_bytes(tmp_path / "a" / name) == read_bytes(tmp_path / "b" / name)

    def test_seed_changes_output(self, tmp_path):
        experiments.run(SMALL_CHAIN, out=tmp_path / "a")
        experiments.run(SMALL_CHAIN, seed=1, out=tmp_path / "b")
        assert read_bytes(tmp_path / "a/survival.csv") != read_bytes(tmp_path / "b/survival.csv")

    def test_workers_do_not_change_output(self, tmp_path):
        cfg = {"experiment": "wasserstein-ode",
               "mc": {"N": 40, "block_size": 10, "h": 0.05,
                      "time_grid": [1.0, 1.5, 2.0, 3.0, 4.0]}, "params": {"fit_window": [1.0, 4.0]}}
        experiments.run(cfg, out=tmp_path / "one")
        experiments.run({**cfg, "mc": {**cfg["mc"], "workers": 2}}, out=tmp_path / "two")
        assert read_bytes(tmp_path / "one/decay.csv") == read_bytes(tmp_path / "two/decay.csv")

    def test_report_embeds_config_and_reproduces(self, tmp_path):
        rep = experiments.run(SMALL_CHAIN, out=tmp_path / "a")
        stored = json.loads(read_bytes(tmp_path / "a/report.json"))
        prov = stored["provenance"]
        assert prov["config_hash"] == experiments.config_hash(prov["config"])
        assert prov["seed"] == 20240601
        again = experiments.run(prov["config"], out=tmp_path / "b")
        assert again.provenance["config_hash"] == rep.provenance["config_hash"]
        assert read_bytes(tmp_path / "a/report.json") == read_bytes(tmp_path / "b/report.json")

    def test_verdicts_name_tolerances(self, tmp_path):
        rep = experiments.run(SMALL_CHAIN, out=tmp_path)
        assert set(rep.verdicts) == {"bound_domination", "exact_law"}
        for v in rep.verdicts.values():
            section, key = v["tolerance"].split(".")
            assert key in rep.provenance["config"][section]

    def test_certificates_report(self, tmp_path):
        rep = experiments.run({"experiment": "certificates",
                               "params": {"m_matrix_instances": 50}}, out=tmp_path)
        assert rep.passed, rep.verdicts
        # c = (1, -2) has a negative entry, so neither wiring is an M-matrix
        assert rep.certificates["m_matrix"]["wirings"] == {"-Q+diag(c)": "not-M",
                                                            "-(Q+diag(c))": "not-M"}

    def test_subordination_small(self, tmp_path):
        rep = experiments.run({"experiment": "subordination", "mc": {"N": 2000}}, out=tmp_path)
        assert (tmp_path / "subordinate_rate.csv").exists()
        assert rep.predicted["slope"] == pytest.approx(0.625)

    def test_wrapped_errors(self, tmp_path):
        cfg = {"experiment": "wasserstein-ode",
               "params": {"profile": {"kind": "capped", "cap": -1.0}}}
        with pytest.raises(errors.ExperimentFailed):
            experiments.run(cfg, out=tmp_path)


class TestCli:
    def write(self, tmp_path, text):
        p = tmp_path / "cfg.toml"
        p.write_text(text)
        return str(p)

    def test_list(self, capsys):
        assert cli.main(["list"]) == 0
        out = capsys.readouterr().out
        assert "chain-coupling" in out and "subordination" in out

    def test_validate(self, capsys):
        assert cli.main(["validate", "--config", str(CONFIGS[0])]) == 0
        assert capsys.readouterr().out.startswith("ok:")

    def test_pass_exit_code(self, tmp_path, capsys):
        cfg = self.write(tmp_path, 'experiment = "chain-coupling"\n[mc]\nN = 3000\n')
        assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
        assert "PASS chain-coupling:bound_domination" in capsys.readouterr().out

    def test_fail_exit_code(self, tmp_path, capsys):
        cfg = self.write(tmp_path, 'experiment = "chain-coupling"\n[mc]\nN = 3000\n'
                                   '[tolerances]\nsigma_multiplier = -100.0\n')
        assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
        assert "FAIL" in capsys.readouterr().out

    def test_error_exit_code(self, tmp_path, capsys):
        cfg = self.write(tmp_path, 'experiment = "nope"\n')
        assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 1
        assert "error" in capsys.readouterr().err

    def test_seed_flag(self, tmp_path):
        cfg = self.write(tmp_path, 'experiment = "chain-coupling"\n[mc]\nN = 3000\n')
        cli.main(["run", "--config", cfg, "--seed", "9", "--out", str(tmp_path / "o")])
        stored = json.loads((tmp_path / "o/report.json").read_text())
        assert stored["provenance"]["seed"] == 9
