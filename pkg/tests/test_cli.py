import json
import subprocess
import sys

import pytest

from ttrl_guard.cli import main

FAST = ["--steps", "12"]


def small_config(tmp_path, extra=""):
    path = tmp_path / "c.ini"
    path.write_text("[scenario]\nn_problems = 10\n\n[run]\ntotal_steps = 12\n" + extra)
    return str(path)


def last_json(text):
    return json.loads(text.strip().splitlines()[-1])


def test_run_then_analyze_then_report(tmp_path, capsys):
    cfg = small_config(tmp_path)
    out = tmp_path / "run"
    assert main(["run", "--config", cfg, "--seed", "2", "--method", "ttrl", "--out", str(out)]) == 0
    info = last_json(capsys.readouterr().out)
    assert info["method"] == "ttrl" and info["seed"] == 2
    summary = json.loads((out / "summary.json").read_text())

    assert main(["analyze", str(out / "trajectory.jsonl")]) == 0
    assert json.loads(capsys.readouterr().out) == summary["analysis"]

    assert main(["analyze", str(out / "trajectory.jsonl"), "--out", str(tmp_path / "an")]) == 0
    capsys.readouterr()
    assert json.loads((tmp_path / "an" / "analysis.json").read_text()) == summary["analysis"]

    assert main(["report", str(out), "--out", str(tmp_path / "rep")]) == 0
    text = capsys.readouterr().out
    assert text == (tmp_path / "rep" / "report.txt").read_text()
    assert len((tmp_path / "rep" / "report.csv").read_text().splitlines()) == 2


def test_sweep_cli(tmp_path, capsys):
    cfg = small_config(tmp_path, "\n[sweep]\ntau_fr = 0.1, 0.5\n")
    assert main(["sweep", "--config", cfg, "--grid", "window=3,5", "--seeds", "0,1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "cell,params,mean_pass_at_1,ld_ratio" and len(lines) == 5
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "sw")]) == 0
    assert last_json(capsys.readouterr().out)["cells"] == 2


@pytest.mark.parametrize("argv,kind,code", [
    (["run", "--method", "magic"], "UsageError", 2),
    (["frobnicate"], "UsageError", 2),
    (["sweep", "--grid", "tau_xx=0.1"] + FAST, "ConfigurationError", 2),
    (["sweep", "--grid", "nonsense"] + FAST, "ConfigurationError", 2),
    (["run", "--config", "/nonexistent/c.ini"], "ConfigurationError", 2),
    (["analyze", "/nonexistent/log.jsonl"], "FileNotFoundError", 1),
])
def test_errors_are_one_json_line(argv, kind, code, capsys):
    assert main(argv) == code
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    obj = json.loads(err[0])
    assert obj["error"] == kind and obj["message"]


def test_malformed_log_error_names_line(tmp_path, capsys):
    log = tmp_path / "l.jsonl"
    log.write_text('{"schema": "ttrl-guard-trajectory", "version": 1}\n{"step": 0\n')
    assert main(["analyze", str(log)]) == 1
    obj = json.loads(capsys.readouterr().err)
    assert obj["error"] == "LogParseError" and obj["message"].startswith("line 2")


def test_report_offenders_exit_nonzero(tmp_path, capsys):
    cfg = small_config(tmp_path)
    main(["run", "--config", cfg, "--out", str(tmp_path / "a")])
    main(["run", "--config", cfg, "--steps", "2", "--out", str(tmp_path / "b")])
    capsys.readouterr()
    assert main(["report", str(tmp_path / "a"), str(tmp_path / "b")]) == 1
    assert json.loads(capsys.readouterr().err)["error"] == "ReportError"


def test_module_entry_point(tmp_path):
    cfg = small_config(tmp_path)
    proc = subprocess.run([sys.executable, "-m", "ttrl_guard", "run", "--config", cfg, "--backend", "numpy"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
    assert last_json(proc.stdout)["log"] is None
    proc = subprocess.run([sys.executable, "-m", "ttrl_guard", "run", "--seed", "x"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 2 and json.loads(proc.stderr)["error"] == "UsageError"
