import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from cipt.cli import main
from cipt.generators import gen_exp3
from cipt.harness import CSV_FIELDS, ExperimentConfig, m_from_rule, run_experiment, write_csv


@pytest.fixture
def data_csv(tmp_path):
    ds = gen_exp3(150, 1.0, True, np.random.default_rng(0))
    p = tmp_path / "d.csv"
    with open(p, "w") as fh:
        fh.write("x,y,z\n")
        for x, y, z in ds.triples():
            fh.write(f"{x},{y},{z}\n")
    return p


class TestConfig:
    def test_defaults_per_experiment(self):
        c = ExperimentConfig("exp3-type1")
        assert c.experiment == "exp3_type1"
        assert c.theta == (1.0, 5.0, 10.0, 15.0, 20.0) and c.m_rule == ("n^2/5",)
        assert c.B == 100 and c.reps == 1000 and c.alpha == 0.05

    def test_rules(self):
        assert m_from_rule(100, "n^2/5") == 7
        assert m_from_rule(400, "n^1/10") == 2
        assert m_from_rule(100, "n^1/2") == 10
        with pytest.raises(ValueError):
            m_from_rule(100, "log")

    @pytest.mark.parametrize("kwargs", [
        {"reps": 0}, {"n": (0,)}, {"m": (3,), "m_rule": ("n",)}, {"methods": ("triple",)},
        {"poisson": ("sometimes",)},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ExperimentConfig("exp1", **kwargs)

    def test_custom_needs_generator(self):
        with pytest.raises(ValueError):
            ExperimentConfig("custom")

    def test_dict_roundtrip(self):
        c = ExperimentConfig("exp2", n=(50,), m=(5,), reps=3)
        assert ExperimentConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c
        with pytest.raises(ValueError):
            ExperimentConfig.from_dict({"experiment": "exp1", "bogus": 1})


class TestRun:
    def test_rows_and_se(self):
        rows = run_experiment(ExperimentConfig("exp1", n=(40,), m=(2, 20), reps=20, seed=1))
        assert [r.M for r in rows] == [2, 20]
        for r in rows:
            assert 0 <= r.rejection_rate <= 1
            assert r.se == pytest.approx(np.sqrt(r.rejection_rate * (1 - r.rejection_rate) / 20))

    def test_exp3_methods_share_data(self):
        cfg = ExperimentConfig("exp3_type1", n=(60,), theta=(1.0,), reps=10, seed=3)
        rows = run_experiment(cfg)
        assert [(r.perm_mode, r.b) for r in rows] == [("full", None), ("cyclic", 6)]

    def test_poisson_variants(self):
        cfg = ExperimentConfig("exp3_power", n=(60,), reps=8, seed=3, poisson=("none", "half", "full"))
        rows = run_experiment(cfg)
        assert [r.poisson for r in rows] == ["none", "half", "full"] * 2

    def test_custom_generator(self):
        g = {"tag": "generic_ci", "params": {"pmf_z": [0.5, 0.5], "x_family": [[0.5, 0.5]] * 2,
                                             "y_family": [[0.2, 0.8], [0.7, 0.3]]}}
        rows = run_experiment(ExperimentConfig("custom", n=(30,), reps=10, generator=g))
        assert len(rows) == 1

    def test_deterministic_csv(self, tmp_path):
        cfg = ExperimentConfig("exp2", n=(60,), m=(3, 60), reps=15, seed=4)
        write_csv(run_experiment(cfg), tmp_path / "a.csv")
        write_csv(run_experiment(cfg), tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    def test_worker_count_irrelevant(self):
        cfg = ExperimentConfig("exp3_type1", n=(50,), theta=(5.0,), reps=12, seed=8)
        one = run_experiment(cfg)
        two = run_experiment(ExperimentConfig(**{**cfg.to_dict(), "workers": 2}))
        assert [r.rejection_rate for r in one] == [r.rejection_rate for r in two]

    def test_csv_schema(self, tmp_path):
        rows = run_experiment(ExperimentConfig("exp1", n=(20,), m=(2,), reps=5))
        write_csv(rows, tmp_path / "r.csv")
        with open(tmp_path / "r.csv") as fh:
            r = csv.reader(fh)
            assert tuple(next(r)) == CSV_FIELDS


class TestCLI:
    def test_test_command(self, data_csv, capsys):
        code = main(["test", "--input", str(data_csv), "--bins", "5", "--stat", "ustat",
                     "--perm", "full", "--B", "100", "--alpha", "0.05", "--seed", "7"])
        out = capsys.readouterr().out
        assert code == 0
        assert "statistic:" in out and "p_value:" in out and "decision:" in out

    def test_json_output(self, data_csv, capsys):
        code = main(["test", "--input", str(data_csv), "--bins", "4", "--sub-bins", "3",
                     "--perm", "cyclic", "--json"])
        rec = json.loads(capsys.readouterr().out)
        assert code == 0 and rec["config"]["sub_bins"] == 3

    def test_missing_bins_is_usage_error(self, data_csv, capsys):
        assert main(["test", "--input", str(data_csv)]) == 2
        assert "usage" in capsys.readouterr().err

    def test_inconsistent_config_is_usage_error(self, data_csv):
        assert main(["test", "--input", str(data_csv), "--bins", "3", "--perm", "half"]) == 2

    def test_data_errors(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("x,y,z\n1,1,0.5\n1,2,1.7\n")
        assert main(["test", "--input", str(bad), "--bins", "3"]) == 1
        assert "z out of support" in capsys.readouterr().err
        assert main(["test", "--input", str(tmp_path / "none.csv"), "--bins", "3"]) == 1

    def test_overflow_flag(self, tmp_path):
        p = tmp_path / "o.csv"
        p.write_text("x,y,z\n" + "".join(f"{1 + i % 2},{1 + i % 3 // 2},{i / 10}\n" for i in range(15)))
        assert main(["test", "--input", str(p), "--bins", "2", "--overflow"]) == 0

    def test_real_axes(self, tmp_path):
        rng = np.random.default_rng(0)
        p = tmp_path / "r.csv"
        p.write_text("x,y,z\n" + "".join(f"{a},{b},{c}\n" for a, b, c in rng.random((40, 3))))
        assert main(["test", "--input", str(p), "--x-type", "real", "--y-type", "real",
                     "--bins", "4", "--holder-s", "2"]) == 0

    def test_experiment_command(self, tmp_path):
        out = tmp_path / "r.csv"
        code = main(["experiment", "exp3-type1", "--n", "60", "--theta", "1,5", "--reps", "5",
                     "--seed", "7", "--out", str(out)])
        assert code == 0
        rows = list(csv.DictReader(open(out)))
        assert len(rows) == 4 and {r["perm_mode"] for r in rows} == {"full", "cyclic"}

    def test_experiment_config_file(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"n": [30], "m": [3], "reps": 4}))
        out = tmp_path / "r.csv"
        assert main(["experiment", "exp1", "--config", str(cfg), "--seed", "2", "--out", str(out)]) == 0
        row = next(csv.DictReader(open(out)))
        assert row["M"] == "3" and row["seed"] == "2" and row["reps"] == "4"

    def test_experiment_bad_rule(self, tmp_path):
        assert main(["experiment", "exp2", "--m-rule", "bogus", "--out", str(tmp_path / "x")]) == 2

    def test_module_entry_point(self, data_csv):
        r = subprocess.run([sys.executable, "-m", "cipt", "test", "--input", str(data_csv),
                            "--bins", "3"], capture_output=True, text=True)
        assert r.returncode == 0 and "decision" in r.stdout
