import json
import subprocess
import sys

import pytest

from tdbounds.cli import COMMANDS, dispatch, main
from tdbounds.config import parse_config
from tdbounds.report import load_json

SMALL = {
    "analyze": ["--problem", "const-chain"],
    "simulate": ["--problem", "noisy-chain", "--n-max", "200", "--seed", "3"],
    "verify-expectation": ["--problem", "noisy-chain", "--sigmas", "0.5,0.75", "--n-max", "300",
                           "--trials", "12", "--seed", "5"],
    "verify-concentration": ["--problem", "noisy-chain", "--trials", "12", "--n0", "10",
                             "--n1", "40", "--step-trials", "6", "--step-n-max", "200"],
    "sample-complexity": ["--problem", "noisy-chain", "--epsilon", "0.1", "--delta", "0.05"],
    "sweep-sigma": ["--problem", "noisy-chain", "--sigmas", "0.5,0.75", "--n-max", "500",
                    "--trials", "12"],
    "counterexample": ["--n-max", "300", "--seeds", "0,1,2,3,4,5"],
}


def run(tmp_path, command, args, tag=""):
    out = tmp_path / f"{command}{tag}.json"
    csv = tmp_path / f"{command}{tag}.csv"
    code = main([command, *args, "--output", str(out), "--csv", str(csv)])
    return code, out, csv


class TestCommands:
    def test_every_command_has_a_smoke_case(self):
        assert set(SMALL) == set(COMMANDS)

    def test_analyze_const_chain(self, tmp_path):
        code, out, _ = run(tmp_path, "analyze", SMALL["analyze"])
        rep = load_json(out)
        assert code == 0
        assert rep["problem"]["A"] == [[0.125]] and rep["problem"]["b"] == [0.5]
        assert rep["problem"]["theta_star"] == [4.0]
        assert rep["problem"]["sym_min_eig"] == 0.25
        c = rep["constants"]
        assert c["k_m"] == 2.0 and c["k_s"] == 8.0 and c["c_star"] == 5.0
        for key in ("k_lambda", "k_p", "mu", "m", "i0", "k_b", "k_1", "k_2", "c_m2",
                    "lambda_exp", "lambda_hp", "r0"):
            assert key in c

    def test_analyze_counterexample_inapplicable(self, tmp_path):
        code, out, _ = run(tmp_path, "analyze", ["--problem", "counterexample"])
        rep = load_json(out)
        assert code == 0 and rep["constants"] is None
        assert "positive definite" in rep["expectation_inapplicable"]

    def test_analyze_falls_back_to_high_probability(self, tmp_path):
        code, out, _ = run(tmp_path, "analyze", ["--problem", "const-chain", "--sigma", "0.25"])
        rep = load_json(out)
        assert code == 0 and "cap" in rep["expectation_inapplicable"]
        assert rep["constants"]["k_p"] is None and rep["constants"]["k_m"] == 2.0

    def test_simulate_csv(self, tmp_path):
        code, out, csv = run(tmp_path, "simulate", SMALL["simulate"] + ["--full"])
        lines = csv.read_text().splitlines()
        assert code == 0
        assert lines[0] == "step,t,theta_0,err_norm,noise_norm"
        assert len(lines) == 202 and lines[-1].endswith(",nan")

    def test_simulate_ode_csv(self, tmp_path):
        ode = tmp_path / "ode.csv"
        code = main(["simulate", *SMALL["simulate"], "--checkpoints", "10,100",
                     "--ode-csv", str(ode), "--output", str(tmp_path / "s.json")])
        lines = ode.read_text().splitlines()
        assert code == 0 and lines[0] == "restart_step,t,theta_0"
        assert {l.split(",")[0] for l in lines[1:]} == {"0", "10", "100"}

    def test_verify_expectation(self, tmp_path):
        code, out, csv = run(tmp_path, "verify-expectation", SMALL["verify-expectation"])
        rep = load_json(out)
        assert code == 0 and rep["passed"]
        assert [r["sigma"] for r in rep["results"]] == [0.5, 0.75]
        header = csv.read_text().splitlines()[0]
        assert header == "sigma,step,empirical_mean,std_err,log10_bound_general,log10_bound_closed"

    def test_verify_concentration(self, tmp_path):
        code, out, _ = run(tmp_path, "verify-concentration", SMALL["verify-concentration"])
        rep = load_json(out)
        assert code == 0 and rep["passed"]
        assert rep["step_bounds"]["noise_violations"] == 0
        assert not rep["events_compared"] and rep["events"]["failed_prerequisites"]

    def test_sample_complexity(self, tmp_path):
        code, out, _ = run(tmp_path, "sample-complexity", SMALL["sample-complexity"])
        res = load_json(out)["result"]
        assert code == 0
        for key in ("n0", "nc", "n1", "n_total", "branch"):
            assert key in res
        assert res["branch"] == "lambda_lt_half" and res["n_total"] >= res["n0"]

    def test_sweep(self, tmp_path):
        code, out, csv = run(tmp_path, "sweep-sigma", SMALL["sweep-sigma"])
        assert code == 0 and len(load_json(out)["rows"]) == 2
        assert csv.read_text().splitlines()[0].startswith("sigma,")

    def test_counterexample_csv(self, tmp_path):
        code, out, csv = run(tmp_path, "counterexample", SMALL["counterexample"])
        lines = csv.read_text().splitlines()
        assert code == 0 and load_json(out)["second_coordinate_constant"]
        assert lines[0] == "seed,theta_0,theta_1" and len(lines) == 8
        assert lines[-1].startswith("noiseless,")

    def test_stdout_when_no_output(self, capsys):
        assert main(["analyze", "--problem", "const-chain"]) == 0
        assert json.loads(capsys.readouterr().out)["problem"]["dim"] == 1


class TestExitCodes:
    def test_config_error(self, capsys):
        assert main(["analyze", "--problem", "const-chain", "--sigma", "1.5"]) == 2
        assert "schedule.sigma" in capsys.readouterr().err

    def test_config_file_errors(self, tmp_path, capsys):
        path = tmp_path / "c.json"
        path.write_text(json.dumps({"alpha_schedule": 1, "schedule": {"sigma": 0}}))
        assert main(["analyze", "--config", str(path)]) == 2
        err = capsys.readouterr().err
        assert "alpha_schedule" in err and "schedule.sigma" in err

    def test_missing_problem(self, capsys):
        assert main(["analyze"]) == 2

    def test_runtime_error(self, capsys):
        # sample complexity is undefined for the singular system
        assert main(["sample-complexity", "--problem", "counterexample"]) == 1
        assert "error:" in capsys.readouterr().err

    def test_failed_check_exit_one(self, tmp_path, monkeypatch):
        import tdbounds.bounds as b
        cfg = parse_config({"problem": "noisy-chain", "schedule": {"sigmas": [0.5]},
                            "experiment": {"n_max": 50, "trials": 4},
                            "output": {"json": str(tmp_path / "o.json")}})
        orig = b.derive_constants
        # shrink K_p so the bound must fail
        monkeypatch.setattr(b, "derive_constants",
                            lambda *a, **k: b.with_overrides(orig(*a, **k), log_k_p=-50.0))
        assert dispatch("verify-expectation", cfg) == 1
        assert not load_json(tmp_path / "o.json")["passed"]

    def test_bad_workers(self, capsys):
        assert main(["counterexample", "--workers", "0"]) == 2


class TestDeterminism:
    @pytest.mark.parametrize("command", COMMANDS)
    def test_byte_identical_across_workers(self, tmp_path, command):
        blobs = set()
        for w in (1, 4, 16):
            code, out, csv = run(tmp_path, command, SMALL[command] + ["--workers", str(w)],
                                 tag=f"-{w}")
            assert code == 0
            blobs.add((out.read_bytes(), csv.read_bytes() if csv.exists() else b""))
        assert len(blobs) == 1

    def test_env_workers(self, tmp_path, monkeypatch):
        code, a, _ = run(tmp_path, "counterexample", SMALL["counterexample"], tag="-a")
        monkeypatch.setenv("TD0_WORKERS", "3")
        code2, b, _ = run(tmp_path, "counterexample", SMALL["counterexample"], tag="-b")
        assert code == code2 == 0 and a.read_bytes() == b.read_bytes()


def test_console_script(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "tdbounds.cli", "analyze", "--problem",
                           "const-chain"], capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["constants"]["k_s"] == 8.0
