import json
import subprocess
import sys

import pytest

from avgcontrol.cli import main


def run(tmp_path, command, config=None, *extra, name="out"):
    out = tmp_path / name
    args = [command, "--out", str(out), *extra]
    if config is not None:
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps(config))
        args += ["--config", str(path)]
    return main(args), out


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


def test_propagate_defaults_and_manifest(tmp_path):
    code, out = run(tmp_path, "propagate")
    assert code == 0
    m = manifest(out)
    assert set(m) >= {"command", "config", "config_hash", "seed", "threads", "versions", "wall_time_s",
                      "checks", "files", "exit_code"}
    assert len(m["config_hash"]) == 64 and m["exit_code"] == 0
    for f in m["files"]:
        assert (out / f).exists()
    head = (out / "trajectory.csv").read_text().splitlines()[0]
    assert head == "t,j,re,im"


def test_reruns_are_byte_identical(tmp_path):
    cfg = {"kernel": {"law": "uniform(1,2)", "kind": "schrodinger"}, "mode_count": 6, "y0": {"harmonic": 6},
           "nodes": 5}
    _, a = run(tmp_path, "propagate", cfg, name="a")
    _, b = run(tmp_path, "propagate", cfg, name="b")
    assert (a / "trajectory.csv").read_bytes() == (b / "trajectory.csv").read_bytes()
    assert manifest(a)["config_hash"] == manifest(b)["config_hash"]


def test_mc_threads_do_not_change_artifacts(tmp_path):
    cfg = {"lambdas": [1.0], "times": [0.3], "mc": {"samples": 20000, "block_size": 1000},
           "second_moment": False}
    c1, a = run(tmp_path, "mc-validate", cfg, "--threads", "1", name="a")
    c4, b = run(tmp_path, "mc-validate", cfg, "--threads", "4", name="b")
    assert c1 == c4 == 0
    names = [f for f in manifest(a)["files"] if f.endswith(".csv")]
    assert names
    for f in names:
        assert (a / f).read_bytes() == (b / f).read_bytes()


@pytest.mark.parametrize("command,config", [
    ("propagate", {"bogus": 1}),
    ("propagate", {"kernel": {"law": "cauchy", "kind": "heat"}}),
    ("control", {"objective": {"type": "approx", "epsilon": -1.0}}),
    ("control", {"geometry": {"observation": {"interior": [[0.3, 0.8]]}, "time_set": [[0.5, 0.5]], "T": 1.0}}),
])
def test_configuration_errors_exit_3(tmp_path, command, config):
    code, out = run(tmp_path, command, config)
    assert code == 3
    assert manifest(out)["exit_code"] == 3


def test_unreadable_config_and_bad_arguments(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["propagate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 3
    assert main(["no-such-command"]) == 3
    assert main(["propagate", "--threads", "0", "--out", str(tmp_path / "o")]) == 3


EXACT = {"kernel": {"law": "exponential", "kind": "schrodinger"}, "mode_count": 10, "y0": {"unit": 1},
         "objective": {"type": "exact", "y1": {"unit": 2}}, "perturbations": 4}


def test_control_exit_codes(tmp_path):
    code, _ = run(tmp_path, "control", EXACT, name="ok")
    assert code == 0
    code, out = run(tmp_path, "control", {**EXACT, "cg_maxit": 2}, name="starved")
    assert code == 2
    assert manifest(out)["checks"]["target_reached"] is False
    code, _ = run(tmp_path, "control", {**EXACT, "tolerance": 1e-30}, name="strict")
    assert code == 1


def test_observability_reports_findings_with_exit_0(tmp_path):
    cfg = {"fit_modes": [2, 4, 6, 8, 10], "factorization": {"trials": 2}}
    code, out = run(tmp_path, "observability", cfg)
    assert code == 0
    checks = manifest(out)["checks"]
    assert checks["factorization"] and checks["telescope_violation_detected"]


def test_finite_dim_and_module_entry(tmp_path):
    code, _ = run(tmp_path, "finite-dim-demo")
    assert code == 0
    res = subprocess.run([sys.executable, "-m", "avgcontrol", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "transport-demo" in res.stdout


def test_multiplier_tables(tmp_path):
    cfg = {"kernels": [{"law": "cauchy", "kind": "schrodinger"}], "mode_count": 2, "times": [0.0, 0.3],
           "mc": {"samples": 5000}}
    code, out = run(tmp_path, "multiplier", cfg)
    assert code == 0
    rows = (out / "multiplier.csv").read_text().splitlines()
    assert rows[0] == "law,kind,j,t,re,im" and len(rows) == 5
    assert rows[1].startswith("cauchy,schrodinger,1,0.0,1.0,0.0")
