import json
import os
import shutil
import subprocess
import sys

import pytest
import yaml

from inertial_init import cli
from inertial_init.evaluation import window_starts


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def write_scenario(path, **doc):
    path.write_text(yaml.safe_dump(doc))
    return path


@pytest.fixture(scope="module")
def datasets(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    made = {}
    specs = {
        "clean": dict(duration=8.0, noisy=False, scale=3.0, random_bias=True, seed=5),
        "still": dict(duration=4.0, noisy=False, model={"drift": [0.5, 0.2, 0.0]}, seed=1),
    }
    for name, doc in specs.items():
        scen = write_scenario(root / f"{name}.yaml", **doc)
        assert cli.main(["simulate", "--scenario", str(scen), "--output", str(root / name)]) == 0
        made[name] = root / name
    return made


# ------------------------------------------------------------------ general

def test_version_and_usage(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["--version"])
    assert info.value.code == 0
    assert "inertial-init" in capsys.readouterr().out
    with pytest.raises(SystemExit) as info:
        cli.main([])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        cli.main(["init", "--dataset", "x", "--seeds", "a,b"])
    assert info.value.code == 2


# ------------------------------------------------------------------ simulate

def test_simulate_default_scenario_deterministic(tmp_path, capsys):
    code, out, _ = run(capsys, "simulate", "--output", tmp_path / "a")
    assert code == 0 and "simulated" in out
    assert run(capsys, "simulate", "--output", tmp_path / "b")[0] == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert {str(f) for f in files} >= {"mav0/imu0/data.csv", "mav0/imu0/sensor.yaml",
                                       "mav0/state_groundtruth_estimate0/data.csv",
                                       "sim_truth.json", "visual_trajectory.csv"}
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes(), f
    code, out, _ = run(capsys, "simulate", "--output", tmp_path / "c", "--seed", "8", "--json")
    doc = json.loads(out)
    assert code == 0 and doc["seed"] == 8 and doc["imu_samples"] == 6000
    assert (tmp_path / "a" / "mav0/imu0/data.csv").read_bytes() != \
        (tmp_path / "c" / "mav0/imu0/data.csv").read_bytes()


def test_simulate_invalid_scenario(tmp_path, capsys):
    bad = write_scenario(tmp_path / "bad.yaml", duration=5.0, sclae=2.0)
    code, _, err = run(capsys, "simulate", "--scenario", bad, "--output", tmp_path / "o")
    assert code == 2 and "sclae" in err
    broken = tmp_path / "broken.yaml"
    broken.write_text("duration: [1, 2\n")
    code, _, err = run(capsys, "simulate", "--scenario", broken, "--output", tmp_path / "o")
    assert code == 2 and "error" in err
    code, _, err = run(capsys, "simulate", "--scenario", tmp_path / "none.yaml",
                       "--output", tmp_path / "o")
    assert code == 2 and "none.yaml" in err


# ------------------------------------------------------------------ init

def test_init_noise_free_accepted(datasets, capsys):
    code, out, _ = run(capsys, "init", "--dataset", datasets["clean"], "--start", "1.0")
    assert code == 0 and out.startswith("ACCEPTED")
    assert "gravity direction azimuth" in out and "seed 16" in out
    code, out, _ = run(capsys, "init", "--dataset", datasets["clean"], "--start", "1.0", "--json")
    doc = json.loads(out)
    assert doc["accepted"] and doc["scale_error_percent"] < 0.5
    assert doc["scale_true"] == 3.0 and doc["gravity_error_deg"] < 0.5
    assert doc["trajectory_source"].endswith("visual_trajectory.csv")
    assert len(doc["seeds"]) == 3 and doc["n_keyframes"] == 10


def test_init_rejects_constant_velocity(datasets, capsys):
    code, out, _ = run(capsys, "init", "--dataset", datasets["still"])
    assert code == 3
    first = out.splitlines()[0]
    assert first.startswith("REJECTED: ") and len(first) > len("REJECTED: ")


def test_init_seed_list(datasets, capsys):
    code, out, _ = run(capsys, "init", "--dataset", datasets["clean"], "--seeds", "1", "--json")
    doc = json.loads(out)
    assert code == 0 and [s["seed"] for s in doc["seeds"]] == [1.0]
    _, out, _ = run(capsys, "init", "--dataset", datasets["clean"], "--seeds", "2,8", "--json")
    assert [s["seed"] for s in json.loads(out)["seeds"]] == [2.0, 8.0]


def test_init_ground_truth_surrogate(datasets, tmp_path, capsys):
    copy = tmp_path / "copy"
    shutil.copytree(datasets["clean"], copy)
    (copy / "visual_trajectory.csv").unlink()
    out_file = tmp_path / "res.json"
    code, out, _ = run(capsys, "init", "--dataset", copy, "--true-scale", "7.5", "--json",
                       "--output", out_file)
    doc = json.loads(out)
    assert code == 0 and doc["trajectory_source"] == "ground-truth surrogate"
    assert doc["scale_true"] == 7.5 and doc["scale_error_percent"] < 0.5
    assert json.loads(out_file.read_text()) == doc


def test_init_config_layering(datasets, tmp_path, capsys):
    conf = tmp_path / "run.yaml"
    conf.write_text("window_length: 1.75\n")
    _, out, _ = run(capsys, "init", "--dataset", datasets["clean"], "--config", conf, "--json")
    assert json.loads(out)["n_keyframes"] == 8
    _, out, _ = run(capsys, "init", "--dataset", datasets["clean"], "--config", conf,
                    "--window-length", "1.5", "--json")
    assert json.loads(out)["n_keyframes"] == 7
    conf.write_text("windw_length: 1.75\n")
    code, _, err = run(capsys, "init", "--dataset", datasets["clean"], "--config", conf)
    assert code == 2 and "windw_length" in err


def test_init_usage_errors(datasets, tmp_path, capsys):
    code, _, err = run(capsys, "init", "--dataset", tmp_path / "missing")
    assert code == 2 and "missing" in err
    code, _, err = run(capsys, "init", "--dataset", datasets["clean"], "--start", "100")
    assert code == 2 and "exceeds" in err
    code, _, _ = run(capsys, "init", "--dataset", datasets["clean"], "--prior-std", "-1")
    assert code == 2


# ------------------------------------------------------------------ eval and report

@pytest.fixture(scope="module")
def evaluated(datasets, tmp_path_factory):
    out = tmp_path_factory.mktemp("eval")
    argv = ["eval", "--dataset", str(datasets["clean"]), "--refine-length", "0",
            "--workers", "1", "--json"]
    return out, argv


def test_eval_outputs(evaluated, datasets, capsys):
    out, argv = evaluated
    code, stdout, _ = run(capsys, *argv, "--output", out / "a")
    assert code == 0
    printed = json.loads(stdout)
    report = json.loads((out / "a" / "report.json").read_text())
    assert printed["aggregates"] == report["aggregates"]
    n = len(window_starts(0.0, 8.0 - 0.005, 2.25, 0.5))
    assert report["aggregates"]["n_windows"] == n == len(report["windows"])
    assert report["aggregates"]["n_accepted"] == n and report["aggregates"]["mean_scale_error"] < 0.5
    assert len((out / "a" / "windows.csv").read_text().splitlines()) == n + 1
    assert (out / "a" / "histogram.txt").read_text().startswith("#")
    assert len(json.loads((out / "a" / "timings.json").read_text())) == n
    # text mode prints the same aggregates line that the report subcommand derives
    code, text, _ = run(capsys, *argv[:-1], "--output", out / "b")
    line = text.splitlines()[0]
    _, rep_text, _ = run(capsys, "report", "--report", out / "a" / "report.json")
    assert rep_text.splitlines()[0] == line
    assert line.startswith(f"windows {n} accepted {n}")


def test_eval_deterministic(evaluated, capsys):
    out, argv = evaluated
    for name in ("c", "d"):
        assert run(capsys, *argv, "--output", out / name)[0] == 0
    assert (out / "c" / "report.json").read_bytes() == (out / "d" / "report.json").read_bytes()
    assert (out / "c" / "windows.csv").read_bytes() == (out / "d" / "windows.csv").read_bytes()


def test_report_subcommand(evaluated, tmp_path, capsys):
    out, argv = evaluated
    run(capsys, *argv, "--output", out / "e")
    path = out / "e" / "report.json"
    code, text, _ = run(capsys, "report", "--report", path, "--histogram")
    assert code == 0 and text.rstrip().endswith("consistent") and "0.0000" in text
    code, text, _ = run(capsys, "report", "--report", path, "--json")
    assert code == 0 and json.loads(text)["consistent"]
    doc = json.loads(path.read_text())
    doc["aggregates"]["mean_scale_error"] = 42.0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(doc))
    code, text, _ = run(capsys, "report", "--report", bad)
    assert code == 1 and "INCONSISTENT" in text and "mean_scale_error" in text
    doc["version"] = 7
    bad.write_text(json.dumps(doc))
    code, _, err = run(capsys, "report", "--report", bad)
    assert code == 2 and "version" in err


def test_eval_too_short(datasets, tmp_path, capsys):
    code, _, err = run(capsys, "eval", "--dataset", datasets["still"], "--output", tmp_path,
                       "--window-length", "10", "--workers", "1")
    assert code == 2 and err


# ------------------------------------------------------------------ jacobian-check

def test_jacobian_check(capsys):
    code, out, _ = run(capsys, "jacobian-check", "--trials", "20")
    assert code == 0 and out.splitlines()[-1].startswith("PASS")
    assert len(out.splitlines()) == 19
    code, out, _ = run(capsys, "jacobian-check", "--trials", "20", "--corrupt-block", "dv/g_dir")
    assert code == 1
    assert "failing blocks: dv/g_dir" in out.splitlines()[-1]
    a = run(capsys, "jacobian-check", "--trials", "10", "--seed", "3", "--json")[1]
    b = run(capsys, "jacobian-check", "--trials", "10", "--seed", "3", "--json")[1]
    assert a == b and json.loads(a)["passed"]


# ------------------------------------------------------------------ logging

def test_log_level_environment(datasets):
    env = dict(os.environ, INERTIAL_INIT_LOG="INFO")
    proc = subprocess.run([sys.executable, "-m", "inertial_init.cli", "init", "--dataset",
                           str(datasets["clean"])], capture_output=True, text=True, env=env)
    assert proc.returncode == 0
    assert "INFO" in proc.stderr and "ACCEPTED" in proc.stdout
    env["INERTIAL_INIT_LOG"] = "ERROR"
    proc = subprocess.run([sys.executable, "-m", "inertial_init.cli", "init", "--dataset",
                           str(datasets["clean"])], capture_output=True, text=True, env=env)
    assert proc.returncode == 0 and proc.stderr == ""
