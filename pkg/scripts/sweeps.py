"""Sigma and rho sweeps on the two-Gaussian toy task; prints median tables and writes CSVs."""

import argparse
import csv
import time
from pathlib import Path

from rela import case_study as cs


def dump(path, label, res):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([label, "seed", "steps_to_threshold", "final_val_mse"])
        for i, g in enumerate(res.grid):
            for j, s in enumerate(res.seeds):
                w.writerow([g, s, repr(float(res.steps[i, j])), repr(float(res.final[i, j]))])


def show(label, res, increasing):
    s = cs.sweep_summary(res, increasing)
    print(f"{label:>6} {'median steps':>14} {'median final mse':>18}")
    for g, st, m in zip(s["grid"], s["median_steps_to_threshold"], s["median_final_val_mse"]):
        print(f"{g:>6} {st:>14.1f} {m:>18.5f}")
    print(f"steps monotone: {s['steps_monotone']}, final mse monotone: {s['final_mse_monotone']}\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--n-val", type=int, default=2000)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="results")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    t0 = time.perf_counter()
    res = cs.sigma_sweep(cs.SweepConfig(n_seeds=args.seeds, n_val=args.n_val), args.workers)
    dump(out / "sigma_sweep.csv", "sigma", res)
    show("sigma", res, increasing=True)

    cfg = cs.SweepConfig(grid=(0.0, 0.25, 0.5, 0.75, 1.0), threshold=0.15, n_seeds=args.seeds, n_val=args.n_val)
    res = cs.rho_sweep(cfg, args.workers)
    dump(out / "rho_sweep.csv", "rho", res)
    show("rho", res, increasing=False)
    print(f"done in {time.perf_counter() - t0:.1f}s")


if __name__ == "__main__":
    main()
