import json
import subprocess
import sys

import pytest

from rela.cli import COMMANDS, EXIT_CONFIG, EXIT_OK, EXIT_VALIDATION, config_hash, main, resolve_config

SMALL = {
    "case-sigma": {"grid": [0.1, 1.0], "n_seeds": 2, "n_train": 200, "n_val": 200, "steps": 150},
    "case-rho": {"grid": [0.0, 1.0], "n_seeds": 2, "n_train": 200, "n_val": 200, "steps": 150},
    "pca-verify": {"n_matrices": 3, "max_rows": 64, "max_cols": 12, "max_k": 4},
    "grad-check": {"n_batches": 2},
    "rela-run": {"n_train": 256, "n_probe": 200, "prior_epochs": 2, "max_steps": 40, "probe_every": 20,
                 "compare_ssl": True},
    "overlap": {"n": 20000},
    "repdist": {"n_samples": 400},
}


def run_cli(tmp_path, command, params=None, extra=(), name="cfg.json"):
    cfg = tmp_path / name
    cfg.write_text(json.dumps({"experiment": command, "params": params or {}}))
    return main([command, "--config", str(cfg), "--out", str(tmp_path / "runs"), "--quiet", *extra])


def dir_bytes(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


def test_small_configs_cover_every_command():
    assert set(SMALL) == set(COMMANDS)


@pytest.mark.parametrize("command", sorted(SMALL))
def test_command_succeeds_and_replays(tmp_path, command):
    assert run_cli(tmp_path, command, SMALL[command]) == EXIT_OK
    (first,) = (tmp_path / "runs").iterdir()
    files = dir_bytes(first)
    assert "config.json" in files and "summary.json" in files
    assert not any(n.endswith(".tmp") for n in files)
    assert run_cli(tmp_path, command, SMALL[command], extra=("--out", str(tmp_path / "again"))) == EXIT_OK
    (second,) = (tmp_path / "again").iterdir()
    assert second.name == first.name
    assert dir_bytes(second) == files


def test_expected_artifacts(tmp_path):
    assert run_cli(tmp_path, "rela-run", SMALL["rela-run"]) == EXIT_OK
    (d,) = (tmp_path / "runs").iterdir()
    names = set(dir_bytes(d))
    assert {"targets.rela", "run_log_rela.csv", "run_log_ssl.csv", "summary.json"} <= names
    header = (d / "run_log_rela.csv").read_text().splitlines()[0]
    assert header == "step,epoch,phase,loss,lambda,ell_s,ell_f"


def test_sweep_writes_trajectories(tmp_path):
    assert run_cli(tmp_path, "case-sigma", SMALL["case-sigma"]) == EXIT_OK
    (d,) = (tmp_path / "runs").iterdir()
    names = set(dir_bytes(d))
    assert "steps_to_threshold.csv" in names
    assert sum(n.startswith("traj_") for n in names) == 4


def test_threads_do_not_change_results(tmp_path, monkeypatch):
    p = SMALL["case-sigma"]
    assert run_cli(tmp_path, "case-sigma", p, extra=("--threads", "1")) == EXIT_OK
    monkeypatch.setenv("RELA_THREADS", "3")
    assert run_cli(tmp_path, "case-sigma", p, extra=("--out", str(tmp_path / "t3"))) == EXIT_OK
    (a,) = (tmp_path / "runs").iterdir()
    (b,) = (tmp_path / "t3").iterdir()
    assert dir_bytes(a) == dir_bytes(b)


def test_seed_override_changes_output_dir(tmp_path):
    assert run_cli(tmp_path, "grad-check", SMALL["grad-check"]) == EXIT_OK
    assert run_cli(tmp_path, "grad-check", SMALL["grad-check"], extra=("--seed", "5")) == EXIT_OK
    dirs = list((tmp_path / "runs").iterdir())
    assert len(dirs) == 2
    seeds = sorted(json.loads((d / "config.json").read_text())["seed"] for d in dirs)
    assert seeds == [0, 5]


@pytest.mark.parametrize("raw", [
    {"experiment": "grad-check", "bogus": 1},
    {"experiment": "grad-check", "params": {"n_batches": "two"}},
    {"experiment": "grad-check", "params": {"n_batchez": 2}},
    {"experiment": "grad-check", "params": {"n_batches": True}},
    {"experiment": "overlap"},
    {"experiment": "grad-check", "seed": -1},
    {"experiment": "grad-check", "seed": 2**64},
    {"experiment": "grad-check", "params": []},
])
def test_malformed_config_rejected(tmp_path, capsys, raw):
    cfg = tmp_path / "bad.json"
    cfg.write_text(json.dumps(raw))
    code = main(["grad-check", "--config", str(cfg), "--out", str(tmp_path / "runs")])
    assert code == EXIT_CONFIG
    err = json.loads(capsys.readouterr().err)
    assert err["status"] == "error" and err["reason"] == "invalid_config"
    assert not (tmp_path / "runs").exists()


def test_unparseable_config(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text("{not json")
    assert main(["grad-check", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["grad-check", "--config", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_validation_failure_exit_code(tmp_path, capsys):
    code = run_cli(tmp_path, "grad-check", {"n_batches": 1, "tolerance": 1e-30})
    assert code == EXIT_VALIDATION
    assert json.loads(capsys.readouterr().err)["reason"] == "validation_failed"


def test_hash_ignores_key_order():
    a, _ = resolve_config("overlap", {"params": {"n": 100, "k": 2.0}}, None, None)
    b, _ = resolve_config("overlap", {"params": {"k": 2.0, "n": 100}}, None, None)
    assert config_hash(a) == config_hash(b)
    c, _ = resolve_config("overlap", {"params": {"k": 2}}, None, None)
    assert c["params"]["k"] == 2.0 and isinstance(c["params"]["k"], float)


def test_ok_status_on_stdout(tmp_path):
    out = subprocess.run([sys.executable, "-m", "rela.cli", "grad-check", "--out", str(tmp_path),
                          "--config", "/dev/null"], capture_output=True, text=True)
    assert out.returncode == EXIT_CONFIG  # empty file is not JSON
    out = subprocess.run([sys.executable, "-m", "rela.cli", "overlap", "--out", str(tmp_path), "--seed", "1"],
                         capture_output=True, text=True)
    assert out.returncode == EXIT_OK, out.stderr
    status = json.loads(out.stdout)
    assert status["status"] == "ok" and "overlap.csv" in status["files"]
