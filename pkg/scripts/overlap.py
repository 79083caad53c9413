"""Overlap of two augmented Gaussians versus augmentation strength, next to the closed expression."""

import argparse

from rela.core_math import RngStream
from rela.data_factory import overlap_exact, overlap_mc, overlap_paper


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--delta-mu", type=float, default=1.0)
    ap.add_argument("--n", type=int, default=1_000_000)
    ap.add_argument("--grid", type=float, nargs="+", default=[0.25, 0.5, 1.0, 2.0])
    args = ap.parse_args()
    rng = RngStream(0)
    print(f"{'s':>6} {'mc':>8} {'stderr':>8} {'exact':>8} {'closed expr':>12}")
    for s in args.grid:
        est, se = overlap_mc(0.0, args.delta_mu, s, args.n, rng, return_stderr=True)
        print(f"{s:>6} {est:>8.4f} {se:>8.5f} {overlap_exact(args.delta_mu, s):>8.4f} "
              f"{overlap_paper(args.delta_mu, 0.25, 1.0, s):>12.4f}")


if __name__ == "__main__":
    main()
