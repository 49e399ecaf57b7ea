import argparse
import subprocess
import sys
from pathlib import Path

import pytest

from wpfeel import experiments as ex
from wpfeel.cli import main, parse_seeds
from wpfeel.config import parse_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

SMALL_SIM = """
[experiment]
seed = 1

[system]
num_devices = 6
model_dim = 15
num_rounds = 12
learning_rate = auto

[wpt]
source = beacon
power = 1.0
density = 1.0

[devices]
compute_coeff_grid = 0.010:0.100:0.001
grad_variance = measured
dataset_size = 20

[task]
feature_dim = 4
num_classes = 3
test_size = 30
"""

GOLDEN_HEADERS = {
    "bounds.csv": ("# wpfeel bounds schema 1",
                   "point,sweep_value,mode,lambda_energy_or_P0,xi_or_tau,P_out,descent,deviation,residue,total"),
    "scaling.csv": ("# wpfeel scaling schema 1", "variable,slope,points_used,status"),
    "runs.csv": ("# wpfeel runs schema 1",
                 "point,sweep_value,seed,avg_grad_norm,test_accuracy,final_loss,mean_active,idle_rounds,"
                 "mu_hat,phi_hat,mean_sigma2_hat,descent_rhs,descent_inequality_holds,bound_total,artifact"),
    "rounds": ("# wpfeel rounds schema 1",
               "round,loss,grad_norm_sq,active_devices,global_grad_norm,deviation_sample,update_applied,"
               "bound_descent,bound_deviation,bound_residue,bound_total"),
    "validation.csv": ("# wpfeel validation schema 1", "check,passed,statistic,threshold,detail"),
}


def header(path):
    lines = Path(path).read_text().splitlines()
    return lines[0], lines[1]


@pytest.fixture
def small_config(tmp_path):
    path = tmp_path / "small.ini"
    path.write_text(SMALL_SIM)
    return path


class TestSeeds:
    @pytest.mark.parametrize("text,expected", [("1,2", [1, 2]), ("1-4", [1, 2, 3, 4]), ("3,1-2,3", [1, 2, 3])])
    def test_parse(self, text, expected):
        assert parse_seeds(text) == expected

    @pytest.mark.parametrize("text", ["", "a", "1-b", ","])
    def test_bad(self, text):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_seeds(text)


class TestSweepSpec:
    def test_parse(self):
        s = ex.parse_sweep("lambda_energy:10:1e4:4:log")
        assert s.values() == pytest.approx([10, 100, 1000, 10000])
        assert ex.parse_sweep("N0:-90:-70:3:lin").values() == [-90, -80, -70]

    @pytest.mark.parametrize("text", ["lambda_energy:1:2:1:log", "foo:1:2:3:log", "P0:-1:2:3:log",
                                      "P0:1:2:3:cubic", "P0:1:2"])
    def test_bad(self, text):
        with pytest.raises(ex.SweepError):
            ex.parse_sweep(text)

    def test_source_mismatch(self):
        exp = parse_config((CONFIGS / "baseline.ini").read_text())
        with pytest.raises(ex.SweepError):
            ex.check_sweep(ex.parse_sweep("P0:1:10:3:log"), exp)

    def test_compute_energy_rate(self):
        exp = parse_config((CONFIGS / "baseline.ini").read_text())
        swept = ex.apply_sweep(exp, "compute_energy_rate", 1e-3)
        c = swept.compute_coeffs()
        e = c * exp.devices.workload ** 3 / exp.system.compute_time ** 2
        assert e == pytest.approx(1e-3, rel=1e-12)

    def test_lambda_energy(self):
        exp = parse_config((CONFIGS / "baseline.ini").read_text())
        swept = ex.apply_sweep(exp, "lambda_energy", 42.0)
        assert swept.source.power * swept.source.density * swept.system.round_time == pytest.approx(42.0)


class TestAnalyze:
    def test_scaling_slope(self, tmp_path):
        code = main(["--mode", "analyze", "--config", str(CONFIGS / "baseline.ini"),
                     "--sweep", "lambda_energy:10:1e4:13:log", "--out", str(tmp_path)])
        assert code == 0
        assert header(tmp_path / "bounds.csv") == GOLDEN_HEADERS["bounds.csv"]
        assert header(tmp_path / "scaling.csv") == GOLDEN_HEADERS["scaling.csv"]
        fit = ex.read_csv(tmp_path / "scaling.csv")[0]
        assert fit["status"] == "ok"
        assert -0.36 <= float(fit["slope"]) <= -0.31
        assert len(ex.read_csv(tmp_path / "bounds.csv")) == 13
        assert (tmp_path / "index.txt").read_text() == "bounds.csv\nscaling.csv\n"

    def test_server(self, tmp_path):
        code = main(["--mode", "analyze", "--config", str(CONFIGS / "server_small_cell.ini"),
                     "--sweep", "P0:1:1e3:5:log", "--out", str(tmp_path)])
        assert code == 0
        rows = ex.read_csv(tmp_path / "bounds.csv")
        totals = [float(r["total"]) for r in rows]
        assert totals == sorted(totals, reverse=True)

    def test_sweep_mismatch_exit_code(self, tmp_path, capsys):
        code = main(["--mode", "analyze", "--config", str(CONFIGS / "baseline.ini"),
                     "--sweep", "P0:1:10:3:log", "--out", str(tmp_path)])
        assert code == 2
        assert "P0 sweeps need a server source" in capsys.readouterr().err

    def test_bad_config_exit_code(self, tmp_path, capsys):
        bad = tmp_path / "bad.ini"
        bad.write_text("[system]\nwhatever = 1\n")
        assert main(["--mode", "analyze", "--config", str(bad), "--out", str(tmp_path)]) == 2
        assert "unknown key" in capsys.readouterr().err

    def test_needs_config(self, tmp_path):
        with pytest.raises(SystemExit) as err:
            main(["--mode", "analyze", "--out", str(tmp_path)])
        assert err.value.code == 2


class TestSimulate:
    def test_outputs_and_determinism(self, tmp_path, small_config):
        a, b = tmp_path / "a", tmp_path / "b"
        args = ["--mode", "simulate", "--config", str(small_config), "--seeds", "1,2"]
        assert main(args + ["--out", str(a)]) == 0
        assert main(args + ["--out", str(b), "--workers", "2"]) == 0
        files = sorted(p.name for p in a.iterdir())
        assert files == sorted(p.name for p in b.iterdir())
        assert files == ["index.txt", "run_base_p000_s1.csv", "run_base_p000_s1.json",
                         "run_base_p000_s2.csv", "run_base_p000_s2.json", "runs.csv"]
        for name in files:
            assert (a / name).read_bytes() == (b / name).read_bytes()
        assert header(a / "runs.csv") == GOLDEN_HEADERS["runs.csv"]
        assert header(a / "run_base_p000_s1.csv") == GOLDEN_HEADERS["rounds"]
        rows = ex.read_csv(a / "run_base_p000_s1.csv")
        assert len(rows) == 12
        runs = ex.read_csv(a / "runs.csv")
        assert [r["descent_inequality_holds"] for r in runs] == ["1", "1"]

    def test_sweep_names(self, tmp_path, small_config):
        code = main(["--mode", "simulate", "--config", str(small_config), "--seeds", "3",
                     "--sweep", "lambda_energy:0.1:10:2:log", "--out", str(tmp_path)])
        assert code == 0
        assert (tmp_path / "run_lambda_energy_p001_s3.csv").exists()

    def test_missing_task_exit_code(self, tmp_path):
        code = main(["--mode", "simulate", "--config", str(CONFIGS / "baseline.ini"),
                     "--out", str(tmp_path)])
        assert code == 2


class TestValidate:
    def test_selected_checks(self, tmp_path, capsys):
        code = main(["--mode", "validate", "--checks", "beta_values,xi_identity", "--out", str(tmp_path)])
        assert code == 0
        assert header(tmp_path / "validation.csv") == GOLDEN_HEADERS["validation.csv"]
        rows = ex.read_csv(tmp_path / "validation.csv")
        assert [(r["check"], r["passed"]) for r in rows] == [("beta_values", "1"), ("xi_identity", "1")]
        assert capsys.readouterr().out.count("PASS") == 2

    def test_unknown_check(self, tmp_path):
        assert main(["--mode", "validate", "--checks", "nope", "--out", str(tmp_path)]) == 2

    def test_full_suite_subprocess(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "wpfeel.cli", "--mode", "validate",
                               "--out", str(tmp_path), "--workers", "4"],
                              capture_output=True, text=True, timeout=600)
        assert proc.returncode == 0, proc.stdout + proc.stderr
        rows = ex.read_csv(tmp_path / "validation.csv")
        assert rows and all(r["passed"] == "1" for r in rows)

    def test_failed_check_exit_code(self, tmp_path, monkeypatch, capsys):
        from wpfeel import validation

        def broken(seed):
            return validation.CheckResult("broken", 2.0, 1.0)

        monkeypatch.setitem(validation.CHECKS, "broken", broken)
        assert main(["--mode", "validate", "--checks", "broken", "--out", str(tmp_path)]) == 1
        assert "first failed check: broken" in capsys.readouterr().err
