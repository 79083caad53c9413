"""Monte-Carlo check of the closed-form expected squared error of 1-D online SGD."""

import argparse

import numpy as np

from rela import case_study as cs
from rela.core_math import RngStream


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--runs", type=int, default=100_000)
    ap.add_argument("--theta0", type=float, default=0.0)
    args = ap.parse_args()
    mu1, mu2 = 1.0, 2.0
    print(f"{'eta':>5} {'beta':>5} {'alpha':>5} {'t':>4} {'monte carlo':>12} {'closed form':>12} {'rel err':>8}")
    for eta, beta, alpha in [(0.1, 2.0, 1.0), (0.05, 1.0, 1.0)]:
        traj = cs.linear_1d_sgd_runs(mu1, mu2, alpha, beta, eta, 500, args.theta0, 0.0, RngStream(1), args.runs)
        for t in (10, 100, 500):
            mc = float(np.mean((traj[t] - cs.optimal_theta(mu1, mu2)) ** 2))
            cf = cs.closed_form_gap(mu1, mu2, alpha, beta, eta, t, args.theta0)
            print(f"{eta:>5} {beta:>5} {alpha:>5} {t:>4} {mc:>12.6f} {cf:>12.6f} {abs(mc - cf) / cf:>8.4f}")


if __name__ == "__main__":
    main()
