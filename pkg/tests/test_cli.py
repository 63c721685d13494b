import json

import pytest
import yaml

from revnorm import cli
from revnorm import experiment as E
from revnorm.config import ExperimentConfig
from revnorm.exceptions import ConfigInvalid

BASE = {
    "schema_version": 1,
    "name": "syn",
    "dataset": {"synthetic": {"kind": "two_cluster", "users_per_cluster": 3, "length": 400, "seed": 0}},
    "settings": ["20-5"],
    "cells": [{"strategy": "none", "bp_space": "data"}, {"strategy": "cmin", "bp_space": "normalized"}],
    "seeds": [0],
    "training": {"epochs": 3, "samples_per_epoch": 64},
    "shift": {"n": 50},
    "out": "res",
}


def write_cfg(tmp_path, **changes):
    d = json.loads(json.dumps(BASE))
    d.update(changes)
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(d))
    return path


class TestConfig:
    def test_parse(self, tmp_path):
        cfg = ExperimentConfig.load(write_cfg(tmp_path, settings=["40-10", [100, 20]]))
        assert cfg.settings == [(40, 10), (100, 20)]
        assert cfg.cells == [("none", "data"), ("cmin", "normalized")]
        assert cfg.train_config(40, 10, "none", "data", 3).epochs == 3

    @pytest.mark.parametrize("changes", [
        {"settings": []}, {"cells": []}, {"seeds": []}, {"settings": ["40"]},
        {"cells": [{"strategy": "standard", "bp_space": "normalized"}]},
        {"cells": [{"strategy": "magic"}]}, {"training": {"epoch": 3}}, {"bogus": 1},
        {"schema_version": 2}, {"dataset": {}}, {"split": {"period_fractions": [0.5, 0.5, 0.5]}},
        {"dataset": {"path": "x.csv"}},  # cmin without labels
    ])
    def test_invalid(self, tmp_path, changes):
        with pytest.raises(ConfigInvalid):
            ExperimentConfig.load(write_cfg(tmp_path, **changes))

    def test_bad_yaml(self, tmp_path):
        (tmp_path / "b.yaml").write_text("a: [")
        with pytest.raises(ConfigInvalid):
            ExperimentConfig.load(tmp_path / "b.yaml")


class TestRunExperiment:
    def test_entries_resume_and_parallel(self, tmp_path, monkeypatch):
        cfg = ExperimentConfig.load(write_cfg(tmp_path))
        out = E.run_experiment(cfg, tmp_path / "a")
        doc = json.loads((out / "results.json").read_text())
        assert len(doc["entries"]) == 2
        assert set(doc["runs"]) == {"syn|20-5|none|data|0", "syn|20-5|cmin|normalized|0"}
        first = (out / "results.json").read_bytes()
        assert (out / "runs" / "20-5_cmin_normalized_seed0.history.csv").is_file()

        def boom(*a, **k):
            raise AssertionError("retrained a completed run")

        monkeypatch.setattr(E, "train", boom)
        E.run_experiment(cfg, out)
        assert (out / "results.json").read_bytes() == first
        monkeypatch.undo()

        # a changed training config invalidates the stored record
        changed = ExperimentConfig.load(write_cfg(tmp_path, training={"epochs": 2, "samples_per_epoch": 64}))
        E.run_experiment(changed, out)
        assert (out / "results.json").read_bytes() != first

        par = E.run_experiment(cfg, tmp_path / "b", jobs=2)
        assert (par / "results.json").read_bytes() == first

    def test_corrupt_record_is_rerun(self, tmp_path):
        cfg = ExperimentConfig.load(write_cfg(tmp_path, cells=[{"strategy": "instance", "bp_space": "data"}]))
        out = E.run_experiment(cfg, tmp_path / "a")
        first = (out / "results.json").read_bytes()
        (out / "runs" / "20-5_instance_data_seed0.json").write_text("{not json")
        E.run_experiment(cfg, out)
        assert (out / "results.json").read_bytes() == first


class TestCli:
    def test_full_flow(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path)
        assert cli.main(["generate", "--out", str(tmp_path / "gen"), "--users", "3", "--length", "300"]) == 0
        assert (tmp_path / "gen" / "labels.csv").is_file()
        assert cli.main(["split", "--config", str(cfg), "--out", str(tmp_path / "sp")]) == 0
        assert cli.main(["train", "--config", str(cfg), "--out", str(tmp_path / "tr"), "--cell", "revin:normalized"]) == 0
        assert cli.main(["eval", "--config", str(cfg), "--out", str(tmp_path / "tr"),
                         "--model", str(tmp_path / "tr" / "model.json")]) == 0
        train_metrics = json.loads((tmp_path / "tr" / "metrics.json").read_text())["metrics"]
        eval_metrics = json.loads((tmp_path / "tr" / "eval_metrics.json").read_text())
        assert eval_metrics == train_metrics
        assert cli.main(["shift-report", "--config", str(cfg), "--out", str(tmp_path / "sh")]) == 0
        assert (tmp_path / "sh" / "shift_modulations.csv").is_file()
        assert cli.main(["run", "--config", str(cfg), "--jobs", "1"]) == 0
        assert cli.main(["report", "--config", str(cfg)]) == 0
        assert (tmp_path / "res" / "report" / "tables.md").is_file()

    def test_csv_dataset_via_config(self, tmp_path):
        assert cli.main(["generate", "--out", str(tmp_path), "--users", "3", "--length", "300", "--seed", "4"]) == 0
        cfg = write_cfg(tmp_path, dataset={"path": "data.csv", "labels": "labels.csv"})
        assert cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / "r")]) == 0

    def test_exit_codes(self, tmp_path):
        (tmp_path / "bad.yaml").write_text("settings: [")
        assert cli.main(["run", "--config", str(tmp_path / "bad.yaml")]) == 2
        assert cli.main(["run", "--config", str(tmp_path / "missing.yaml")]) == 2
        assert cli.main(["run"]) == 2
        missing_data = write_cfg(tmp_path, dataset={"path": "nope.csv", "labels": "l.csv"})
        assert cli.main(["run", "--config", str(missing_data)]) == 3
        (tmp_path / "short.csv").write_text("time,a,b\n" + "".join(f"{t},{t},{t * 2}\n" for t in range(30)))
        short = write_cfg(tmp_path, dataset={"path": "short.csv"}, cells=[{"strategy": "none"}])
        assert cli.main(["run", "--config", str(short)]) == 3
        assert cli.main(["report", "--out", str(tmp_path / "empty")]) == 3
        with pytest.raises(SystemExit) as exc:
            cli.main(["frobnicate"])
        assert exc.value.code == 2
