"""Where converged 1-D tiny networks put their 0.5 level, for several Sigma."""

import argparse

import numpy as np

from rela.case_study import boundary_crossings


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--sigmas", type=float, nargs="+", default=[0.1, 0.5, 1.0])
    args = ap.parse_args()
    out = boundary_crossings(tuple(args.sigmas), n_seeds=args.seeds)
    for sigma, nets in out.items():
        xs = np.array([x for c in nets for x in c])
        print(f"sigma={sigma}: crossings per net {[len(c) for c in nets]}, "
              f"mean {xs.mean():.4f}, max |x-1.5| {np.abs(xs - 1.5).max():.4f}")


if __name__ == "__main__":
    main()
