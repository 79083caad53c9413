"""Command-line experiment runner.

Every subcommand reads an optional JSON run config, writes its artifacts into
``<out>/<command>-<config hash>/`` and prints a one-line JSON status.  Replays
with the same config and seed produce byte-identical files.
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import case_study as cs
from .core_math import RngStream
from .data_factory import overlap_exact, overlap_mc, overlap_paper, save_target_store
from .evaluation import DistanceConfig, distance_matrix
from .mlp import MLP
from .pca import align_signs, batch_pca, full_pca
from .rela_train import AccelConfig, TrainConfig, build_task, train_rela, make_encoder
from .ssl_zoo import SslConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_VALIDATION = 3
EXIT_RUNTIME = 4


class ConfigError(ValueError):
    pass


class ValidationFailure(RuntimeError):
    pass


# --- output helpers ---------------------------------------------------------------


class RunDir:
    """Collects artifacts and writes each one atomically (temp file then rename)."""

    def __init__(self, path: Path):
        self.path = path
        self.files: list[str] = []
        path.mkdir(parents=True, exist_ok=True)

    def _commit(self, name: str, data: bytes) -> None:
        target = self.path / name
        tmp = self.path / (name + ".tmp")
        tmp.write_bytes(data)
        os.replace(tmp, target)
        self.files.append(name)

    def csv(self, name: str, header, rows) -> None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])
        self._commit(name, buf.getvalue().encode())

    def json(self, name: str, obj) -> None:
        self._commit(name, (json.dumps(jsonable(obj), sort_keys=True, indent=2) + "\n").encode())

    def raw(self, name: str, data: bytes) -> None:
        self._commit(name, data)


def fmt(v):
    """Shortest round-trip text for floats; everything else via ``str``."""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        f = float(obj)
        return f if math.isfinite(f) else ("inf" if f > 0 else "-inf" if f < 0 else "nan")
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


# --- commands -----------------------------------------------------------------------

SWEEP_DEFAULTS = {
    "n_seeds": 20,
    "n_train": 1000,
    "n_val": 2000,
    "val_seed": 999,
    "dim": 2,
    "steps": 1000,
    "batch_size": 1,
    "learning_rate": 0.002,
    "momentum": 0.98,
}


def _sweep_config(p: dict, seed: int, grid, threshold, extra=None) -> cs.SweepConfig:
    sgd = cs.SgdConfig(p["steps"], p["batch_size"], p["learning_rate"], p["momentum"])
    kw = dict(grid=tuple(grid), n_seeds=p["n_seeds"], base_seed=seed, n_train=p["n_train"],
              n_val=p["n_val"], val_seed=p["val_seed"], dim=p["dim"], threshold=threshold, sgd=sgd)
    kw.update(extra or {})
    return cs.SweepConfig(**kw)


def _write_sweep(run: RunDir, res: cs.SweepResult, label: str, increasing: bool) -> dict:
    for (g, s), tr in res.trajectories.items():
        tr.to_csv(run.path / f"traj_{label}-{g!r}_seed-{s}.csv")
        run.files.append(f"traj_{label}-{g!r}_seed-{s}.csv")
    rows = []
    for i, g in enumerate(res.grid):
        for j, s in enumerate(res.seeds):
            rows.append([float(g), s, res.steps[i, j], res.final[i, j]])
    run.csv("steps_to_threshold.csv", [label, "seed", "steps_to_threshold", "final_val_mse"], rows)
    summary = cs.sweep_summary(res, increasing)
    summary["monotone"] = summary["steps_monotone"] and summary["final_mse_monotone"]
    return summary


def cmd_case_sigma(p, seed, run: RunDir, workers: int):
    cfg = _sweep_config(p, seed, p["grid"], p["threshold"])
    summary = _write_sweep(run, cs.sigma_sweep(cfg, workers), "sigma", increasing=True)
    run.json("summary.json", summary)


def cmd_case_rho(p, seed, run: RunDir, workers: int):
    extra = {"data_sigma": p["data_sigma"], "prior_sigma": p["prior_sigma"], "prior_seed": p["prior_seed"]}
    cfg = _sweep_config(p, seed, p["grid"], p["threshold"], extra)
    res = cs.rho_sweep(cfg, workers)
    summary = _write_sweep(run, res, "rho", increasing=False)
    # only the steps criterion is predicted for rho
    summary["monotone"] = summary["steps_monotone"]
    run.json("summary.json", summary)


def random_matrix(rng: RngStream, max_rows: int, max_cols: int, max_k: int):
    d = int(rng.integers(2, max_cols + 1))
    n = int(rng.integers(max(d + 1, 3), max_rows + 1))
    k = int(rng.integers(1, min(max_k, d) + 1))
    scales = np.exp(rng.normal(0.0, 1.0, d))
    Y = rng.normal(0.0, 1.0, (n, d)) * scales + rng.normal(0.0, 3.0, d)
    return Y, k


def cmd_pca_verify(p, seed, run: RunDir, workers: int):
    rng = RngStream(seed)
    rows = []
    worst = 0.0
    for m in range(p["n_matrices"]):
        Y, k = random_matrix(rng, p["max_rows"], p["max_cols"], p["max_k"])
        _, ref = full_pca(Y, k)
        for bs in p["batch_sizes"]:
            b = Y.shape[0] if bs == "n" else int(bs)
            _, red = batch_pca(Y, k, b)
            dev = float(np.max(np.abs(align_signs(ref, red) - ref)))
            worst = max(worst, dev)
            rows.append([m, Y.shape[0], Y.shape[1], k, b, dev])
    run.csv("deviations.csv", ["matrix", "rows", "cols", "k", "batch_size", "max_abs_dev"], rows)
    ok = worst <= p["tolerance"]
    run.json("summary.json", {"max_abs_dev": worst, "tolerance": p["tolerance"], "passed": ok})
    if not ok:
        raise ValidationFailure(f"batch/full PCA deviation {worst} exceeds {p['tolerance']}")


def cmd_grad_check(p, seed, run: RunDir, workers: int):
    from .gradcheck import gradient_errors

    table = gradient_errors(p["n_batches"], p["rows"], p["cols"], p["bank"], p["tau"], p["lambda_bt"],
                            p["eps"], RngStream(seed))
    rows = [[m, i, e] for m, errs in table.items() for i, e in enumerate(errs)]
    run.csv("gradient_errors.csv", ["method", "batch", "rel_error"], rows)
    worst = {m: max(errs) for m, errs in table.items()}
    ok = all(v <= p["tolerance"] for v in worst.values())
    run.json("summary.json", {"max_rel_error": worst, "tolerance": p["tolerance"], "passed": ok})
    if not ok:
        raise ValidationFailure(f"gradient check failed: {worst}")


def _accel_config(p: dict, seed: int) -> AccelConfig:
    train = TrainConfig(
        epochs=p["epochs"], batch_size=p["batch_size"], learning_rate=p["learning_rate"],
        optimizer=p["optimizer"], ssl=SslConfig(method=p["ssl_method"]), use_rela=p["use_rela"],
        seed=seed, max_steps=p["max_steps"], probe_every=p["probe_every"],
    )
    return AccelConfig(n_train=p["n_train"], n_probe=p["n_probe"], signal=p["signal"],
                       data_seed=p["data_seed"], target_dim=p["target_dim"],
                       prior_epochs=p["prior_epochs"], accuracy=p["accuracy"], train=train)


def cmd_rela_run(p, seed, run: RunDir, workers: int):
    from .rela_train import write_run_log, write_summary

    cfg = _accel_config(p, seed)
    data, probe, store, prior = build_task(cfg)
    save_target_store(store, run.path / "targets.rela")
    run.files.append("targets.rela")
    arms = [("rela", True)] + ([("ssl", False)] if p["compare_ssl"] else [])
    summary = {"seed": seed, "prior_samples_seen": prior.samples_seen}
    for name, use in arms:
        enc = make_encoder(data.flat.shape[1], store.cols, RngStream(seed, 5), cfg.encoder_hidden)
        res = train_rela(enc, data.images, store, replace(cfg.train, use_rela=use), RngStream(seed, 6),
                         (probe.images, probe.labels))
        write_run_log(run.path / f"run_log_{name}.csv", res.log)
        run.files.append(f"run_log_{name}.csv")
        s = res.summary()
        s["steps_to_accuracy"] = res.steps_to_accuracy(cfg.accuracy)
        summary[name] = s
    run.json("summary.json", summary)


def cmd_overlap(p, seed, run: RunDir, workers: int):
    rng = RngStream(seed)
    rows = []
    mc, se, formula = [], [], []
    for a in p["grid"]:
        est, err = overlap_mc(0.0, p["delta_mu"], a, p["n"], rng, return_stderr=True)
        op = overlap_paper(p["delta_mu"], p["sigma2"], p["k"], a)
        rows.append([float(a), est, err, overlap_exact(p["delta_mu"], a), op])
        mc.append(est)
        se.append(err)
        formula.append(op)
    run.csv("overlap.csv", ["value", "overlap_mc", "overlap_mc_stderr", "overlap_exact", "overlap_formula"], rows)
    steps = [(mc[i + 1] - mc[i], max(se[i], se[i + 1])) for i in range(len(mc) - 1)]
    run.json("summary.json", {
        "mc_increasing": all(d > s for d, s in steps),
        "formula_decreasing": all(b < a for a, b in zip(formula, formula[1:])),
        "grid": p["grid"],
    })


def _build_encoder(spec: dict, dim: int):
    kind = spec.get("kind")
    seed = int(spec.get("seed", 0))
    if kind == "identity":
        return lambda X: X
    if kind == "affine":
        rng = RngStream(seed)
        A = rng.normal(0.0, 1.0, (dim, dim)) + 3.0 * np.eye(dim)
        c = rng.normal(0.0, 1.0, dim)
        return lambda X: X @ A.T + c
    if kind == "square":
        return lambda X: X * X
    if kind == "mlp":
        net = MLP.init([dim, int(spec.get("width", dim)), int(spec.get("out", dim))], RngStream(seed))
        return net.forward
    raise ConfigError(f"unknown encoder kind {kind!r}")


def cmd_repdist(p, seed, run: RunDir, workers: int):
    X = RngStream(seed).normal(0.0, 1.0, (p["n_samples"], p["dim"]))
    ids = [e["id"] for e in p["encoders"]]
    if len(set(ids)) != len(ids):
        raise ConfigError("encoder ids must be unique")
    enc = {e["id"]: _build_encoder(e, p["dim"]) for e in p["encoders"]}
    D = distance_matrix(enc, X, DistanceConfig(rel_tol=p["rel_tol"], seed=seed))
    from .evaluation import write_distance_matrix

    write_distance_matrix(run.path / "distance_matrix.csv", ids, D)
    run.files.append("distance_matrix.csv")
    run.json("summary.json", {"ids": ids, "diagonal_max": float(np.max(np.diag(D)))})


COMMANDS = {
    "case-sigma": (cmd_case_sigma, {**SWEEP_DEFAULTS, "grid": [0.1, 0.3, 0.5, 0.8, 1.0], "threshold": 0.1}),
    "case-rho": (cmd_case_rho, {**SWEEP_DEFAULTS, "grid": [0.0, 0.25, 0.5, 0.75, 1.0], "threshold": 0.15,
                                "data_sigma": 1.0, "prior_sigma": 0.1, "prior_seed": 12345}),
    "pca-verify": (cmd_pca_verify, {"n_matrices": 30, "max_rows": 512, "max_cols": 64, "max_k": 16,
                                    "batch_sizes": [1, 7, 64, "n"], "tolerance": 1e-8}),
    "grad-check": (cmd_grad_check, {"n_batches": 20, "rows": 8, "cols": 16, "bank": 0, "tau": 0.5,
                                    "lambda_bt": 0.005, "eps": 1e-6, "tolerance": 1e-4}),
    "rela-run": (cmd_rela_run, {"n_train": 2000, "n_probe": 1000, "signal": 0.03, "data_seed": 100,
                                "target_dim": 16, "prior_epochs": 30, "epochs": 100, "max_steps": 1000,
                                "batch_size": 64, "learning_rate": 0.001, "optimizer": "adam",
                                "ssl_method": "byol", "use_rela": True, "probe_every": 50,
                                "accuracy": 0.9, "compare_ssl": False}),
    "overlap": (cmd_overlap, {"delta_mu": 1.0, "sigma2": 0.25, "k": 1.0, "grid": [0.25, 0.5, 1.0, 2.0],
                              "n": 1_000_000}),
    "repdist": (cmd_repdist, {"n_samples": 2000, "dim": 8, "rel_tol": 0.05, "encoders": [
        {"id": "identity", "kind": "identity"},
        {"id": "affine", "kind": "affine", "seed": 1},
        {"id": "square", "kind": "square"},
        {"id": "mlp", "kind": "mlp", "seed": 2, "width": 8, "out": 8},
    ]}),
}

CONFIG_KEYS = {"experiment", "seed", "params", "out"}


def _check_type(key, value, default):
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, list):
        ok = isinstance(value, list)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"parameter {key!r} has the wrong type ({type(value).__name__})")
    return float(value) if isinstance(default, float) else value


def resolve_config(command: str, raw: dict | None, seed: int | None, out: str | None):
    """Merge a run config with the command defaults; unknown keys are errors."""
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    if raw.get("experiment", command) != command:
        raise ConfigError(f"config is for {raw['experiment']!r}, not {command!r}")
    defaults = COMMANDS[command][1]
    params = copy.deepcopy(defaults)
    given = raw.get("params", {})
    if not isinstance(given, dict):
        raise ConfigError("params must be a JSON object")
    bad = set(given) - set(defaults)
    if bad:
        raise ConfigError(f"unknown params {sorted(bad)} for {command}")
    for k, v in given.items():
        params[k] = _check_type(k, v, defaults[k])
    s = raw.get("seed", 0) if seed is None else seed
    if not isinstance(s, int) or isinstance(s, bool) or s < 0 or s >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    return {"experiment": command, "seed": s, "params": params}, out or raw.get("out") or "runs"


def config_hash(resolved: dict) -> str:
    blob = json.dumps(jsonable(resolved), sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _report(obj, stream) -> None:
    stream.write(json.dumps(obj, sort_keys=True) + "\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, help="seed override")
    common.add_argument("--out", help="output root (default: runs)")
    common.add_argument("--threads", type=int, help="worker threads (fallback: RELA_THREADS)")
    common.add_argument("--quiet", action="store_true")
    parser = argparse.ArgumentParser(prog="rela", description="Representation-learning accelerator lab")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        raw = None
        if args.config:
            try:
                raw = json.loads(Path(args.config).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config: {exc}") from exc
        resolved, out_root = resolve_config(args.command, raw, args.seed, args.out)
        threads = args.threads if args.threads is not None else int(os.environ.get("RELA_THREADS", "1"))
        if threads < 1:
            raise ConfigError("threads must be >= 1")
    except (ConfigError, ValueError) as exc:
        _report({"status": "error", "reason": "invalid_config", "detail": str(exc)}, sys.stderr)
        return EXIT_CONFIG

    run = RunDir(Path(out_root) / f"{args.command}-{config_hash(resolved)}")
    func = COMMANDS[args.command][0]
    try:
        run.json("config.json", resolved)
        func(resolved["params"], resolved["seed"], run, threads)
    except ConfigError as exc:
        _report({"status": "error", "reason": "invalid_config", "detail": str(exc)}, sys.stderr)
        return EXIT_CONFIG
    except ValidationFailure as exc:
        _report({"status": "error", "reason": "validation_failed", "detail": str(exc), "out_dir": str(run.path)},
                sys.stderr)
        return EXIT_VALIDATION
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        _report({"status": "error", "reason": "runtime_error", "detail": str(exc)}, sys.stderr)
        return EXIT_RUNTIME
    if not args.quiet:
        _report({"status": "ok", "out_dir": str(run.path), "files": sorted(run.files)}, sys.stdout)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
