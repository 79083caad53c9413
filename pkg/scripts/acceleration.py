"""Steps to linear-probe accuracy with and without the transport phase on the image mixture task."""

import argparse
import csv
import time
from pathlib import Path

import numpy as np

from rela.rela_train import AccelConfig, build_task, run_pair, write_run_log


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    cfg = AccelConfig()
    data, probe, store, _ = build_task(cfg)
    rows = []
    for seed in range(args.seeds):
        res = run_pair(cfg, seed, data, probe, store)
        for arm, r in res.items():
            write_run_log(out / f"accel_{arm}_seed-{seed}.csv", r.log)
        steps = {arm: r.steps_to_accuracy(cfg.accuracy) for arm, r in res.items()}
        final = {arm: r.probes[-1][1] if r.probes else float("nan") for arm, r in res.items()}
        rows.append([seed, steps["rela"], steps["ssl"], res["rela"].flip_step, final["rela"], final["ssl"]])
        print(f"seed {seed}: rela {steps['rela']} (flip {res['rela'].flip_step}, final {final['rela']:.3f}), "
              f"ssl {steps['ssl']} (final {final['ssl']:.3f})")
    with open(out / "acceleration.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "steps_rela", "steps_ssl", "flip_step", "final_probe_rela", "final_probe_ssl"])
        w.writerows(rows)
    arr = np.array([[r[1], r[2]] for r in rows], dtype=float)
    print(f"median steps to {cfg.accuracy}: rela {np.median(arr[:, 0])}, ssl {np.median(arr[:, 1])} "
          f"({time.perf_counter() - t0:.1f}s)")


if __name__ == "__main__":
    main()
