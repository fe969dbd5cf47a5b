import csv
import json
from pathlib import Path

import numpy as np
import pytest

from lipdf.cli import main, parse_sweep
from lipdf.errors import ConfigError
from lipdf.harness import (
    ExperimentConfig,
    ExperimentReport,
    emit_all,
    emit_csv,
    lipdf_config_for,
    run_experiment,
    trial_rngs,
)
from lipdf.models import UnivariateGrowthModel
from lipdf.ssm import CountingModel

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def small(**kw):
    base = {"experiment": "bench1d", "filter": "sir", "particles": [20], "steps": 30, "trials": 2}
    base.update(kw)
    return ExperimentConfig.from_dict(base)


class TestConfig:
    @pytest.mark.parametrize("field, value", [
        ("particles", [0]), ("trials", 0), ("steps", 0), ("filter", "kalman"),
        ("experiment", "nope"), ("seed", -1), ("fulcrums", 0), ("scan_lines", 0),
        ("world", "/nonexistent/world.yaml"),
    ])
    def test_invalid_names_field(self, field, value):
        with pytest.raises(ConfigError) as err:
            ExperimentConfig.from_dict({field: value})
        assert err.value.field == field

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as err:
            ExperimentConfig.from_dict({"partcles": 10})
        assert err.value.field == "partcles"

    def test_yaml_and_overrides(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("experiment: bench1d\nparticles: [10, 20]\ntrials: 3\n")
        cfg = ExperimentConfig.load(path, trials=5)
        assert cfg.particles == [10, 20] and cfg.trials == 5

    @pytest.mark.parametrize("name", ["bench1d.yaml", "mcl.yaml", "fit_demo.yaml", "bench1d_sir_sweep.yaml"])
    def test_shipped_configs_load(self, name):
        ExperimentConfig.load(CONFIGS / name)

    def test_echo_is_flat(self):
        cfg = small(lipdf={"smoother": {"kernel": "nn"}})
        echo = cfg.echo()
        assert echo["lipdf.smoother.kernel"] == "nn"
        assert echo["particles"] == "20"

    def test_fulcrum_override_on_active_dims(self):
        cfg = small(filter="lipdf", fulcrums=7)
        lcfg = lipdf_config_for(cfg, CountingModel(UnivariateGrowthModel()))
        assert list(lcfg.grid.counts) == [7]

    def test_bad_smoother_option(self):
        cfg = small(filter="lipdf", lipdf={"smoother": {"kernal": "nn"}})
        with pytest.raises(ConfigError):
            lipdf_config_for(cfg, UnivariateGrowthModel())


class TestRng:
    def test_streams_independent_of_particles(self):
        a, _ = trial_rngs(3, 1)
        b, _ = trial_rngs(3, 1)
        c, _ = trial_rngs(3, 2)
        x, y, z = a.random(4), b.random(4), c.random(4)
        np.testing.assert_array_equal(x, y)
        assert not np.array_equal(x, z)

    def test_truth_shared_across_filters(self):
        sir = run_experiment(small(filter="sir"))
        gpf = run_experiment(small(filter="gpf"))
        assert [r["trial"] for r in sir.records] == [r["trial"] for r in gpf.records]


class TestEmit:
    def test_empty_report_writes_header_only(self, tmp_path):
        report = ExperimentReport({"seed": 0, "filter": "sir"})
        text = emit_csv(report, tmp_path / "e.csv").read_text()
        assert text == "config.seed,config.filter\n"

    def test_byte_identical_reruns(self, tmp_path):
        cfg = small(filter="lipdf", fulcrums=8)
        emit_csv(run_experiment(cfg), tmp_path / "a.csv")
        emit_csv(run_experiment(cfg), tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_round_trip(self, tmp_path):
        report = run_experiment(small())
        path = emit_csv(report, tmp_path / "r.csv")
        with path.open() as fh:
            rows = list(csv.DictReader(fh))
        assert list(rows[0])[0].startswith("config.")
        for row, rec in zip(rows, report.records):
            assert float(row["rmse"]) == pytest.approx(rec["rmse"], rel=1e-12)
            assert int(row["model_calls"]) == rec["model_calls"]

    def test_emit_all_siblings(self, tmp_path):
        written = emit_all(run_experiment(small()), tmp_path / "out.csv")
        names = sorted(p.name for p in written)
        assert names == ["out.csv", "out.summary.csv", "out.timings.csv"]

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(OSError, match="missing"):
            emit_csv(ExperimentReport({}), tmp_path / "missing" / "x.csv")


class TestExperiments:
    def test_sir_calls_n_times_t(self):
        report = run_experiment(small(particles=[20, 40]))
        for rec in report.records:
            assert rec["model_calls"] == rec["reported_calls"] == rec["particles"] * 30

    def test_lipdf_calls_m_times_t(self):
        report = run_experiment(small(filter="lipdf", fulcrums=10, particles=[50]))
        for rec in report.records:
            assert rec["model_calls"] == rec["reported_calls"] == 10 * 30
            assert rec["active_steps"] == 30

    def test_batch_calls_once(self):
        report = run_experiment(small(filter="lipdf-batch", particles=[50]))
        assert all(rec["model_calls"] == 100 for rec in report.records)

    def test_mcl_short(self):
        cfg = ExperimentConfig.from_dict({"experiment": "mcl", "filter": "lipdf", "particles": [100],
                                          "trials": 1, "steps": 6, "scan_lines": 12,
                                          "fulcrums": 5, "vectorized": True})
        report = run_experiment(cfg)
        assert len(report.records) == 6
        active = [r["lipdf_active"] for r in report.records]
        calls = [r["model_calls"] for r in report.records]
        assert all(c == (25 if a else 100) for a, c in zip(active, calls))
        assert report.summary[0]["lost_trials"] in (0, 1)

    def test_fit_demo(self):
        report = run_experiment(ExperimentConfig.from_dict({"experiment": "fit-demo"}))
        assert len(report.records) == 8
        assert len(report.curves) == 201 and len(report.samples) == 100
        tri50 = [r for r in report.records if r["basis"] == "trinomial" and r["fulcrums"] == 50][0]
        assert 0.04 <= tri50["c3"] <= 0.06


class TestCli:
    def test_sweep(self):
        assert parse_sweep("particles=10:50:10") == ("particles", [10, 20, 30, 40, 50])
        assert parse_sweep("particles=7") == ("particles", [7])
        with pytest.raises(ConfigError):
            parse_sweep("steps=1:2")
        with pytest.raises(ConfigError):
            parse_sweep("particles=a:b")

    def test_run_writes_csv(self, tmp_path, capsys):
        out = tmp_path / "o.csv"
        code = main(["bench1d", "--particles", "10", "--steps", "5", "--trials", "1", "--out", str(out)])
        assert code == 0 and out.exists()
        row = json.loads(capsys.readouterr().out.splitlines()[0])
        assert row["particles"] == 10

    def test_sweep_flag(self, capsys):
        code = main(["bench1d", "--sweep", "particles=10:30:10", "--steps", "3", "--trials", "1"])
        assert code == 0
        assert len(capsys.readouterr().out.splitlines()) == 3

    def test_config_error_exit(self, capsys):
        code = main(["bench1d", "--particles", "0"])
        assert code == 2
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert err["error"] == "config" and err["field"] == "particles"

    def test_io_error_exit(self, tmp_path, capsys):
        code = main(["bench1d", "--particles", "5", "--steps", "2", "--trials", "1",
                     "--out", str(tmp_path / "no" / "x.csv")])
        assert code == 2
        assert json.loads(capsys.readouterr().err.strip())["error"] == "io"

    def test_missing_config_file(self, capsys):
        assert main(["mcl", "--config", "/nonexistent.yaml"]) == 2
