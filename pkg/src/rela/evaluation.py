"""Linear probing, the affine-transport representation distance, and 1-D Gaussian TV."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.special import softmax

from .core_math import RngStream, std_normal_cdf
from .mlp import Adam


def split_indices(n: int, rng: RngStream, train_frac: float = 0.8):
    perm = rng.permutation(n)
    cut = int(round(train_frac * n))
    if cut < 1 or cut >= n:
        raise ValueError(f"split of {n} rows at {train_frac} leaves an empty side")
    return perm[:cut], perm[cut:]


# --- linear probe ---------------------------------------------------------------


@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 3e-4
    optimizer: str = "adam"
    train_frac: float = 0.8

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("probe epochs, batch size and learning rate must be positive")
        if self.optimizer != "adam":
            raise ValueError("the probe uses the adaptive-moment optimizer")


def softmax_regression(F: np.ndarray, y: np.ndarray, n_classes: int, cfg: ProbeConfig, rng: RngStream):
    """Affine softmax classifier trained with Adam on cross-entropy; returns ``(W, b)``."""
    n, p = F.shape
    W = np.zeros((n_classes, p))
    b = np.zeros(n_classes)
    onehot = np.eye(n_classes)[y]
    opt = Adam(lr=cfg.learning_rate)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for i in range(0, n, cfg.batch_size):
            idx = order[i : i + cfg.batch_size]
            P = softmax(F[idx] @ W.T + b, axis=1)
            d = (P - onehot[idx]) / len(idx)
            opt.step([W, b], [d.T @ F[idx], d.sum(axis=0)])
    return W, b


def linear_probe(features, labels, cfg: ProbeConfig | None = None, rng: RngStream | None = None) -> float:
    """Held-out accuracy of a linear softmax probe on frozen features.

    Features are z-scored with train-split statistics before fitting.
    """
    cfg = cfg or ProbeConfig()
    rng = rng or RngStream(0)
    F = np.asarray(features, dtype=np.float64)
    if F.ndim == 1:
        F = F[:, None]
    classes, y = np.unique(np.asarray(labels), return_inverse=True)
    if len(classes) < 2:
        raise ValueError("linear probe needs at least two classes")
    if F.shape[0] != y.shape[0]:
        raise ValueError("features and labels differ in length")
    tr, te = split_indices(F.shape[0], rng, cfg.train_frac)
    mu = F[tr].mean(axis=0)
    sd = F[tr].std(axis=0)
    sd[sd == 0] = 1.0
    Z = (F - mu) / sd
    W, b = softmax_regression(Z[tr], y[tr], len(classes), cfg, rng.spawn(rng.stream_id + 1))
    pred = np.argmax(Z[te] @ W.T + b, axis=1)
    return float(np.mean(pred == y[te]))


# --- representation distance ------------------------------------------------------


@dataclass(frozen=True)
class DistanceConfig:
    train_frac: float = 0.8
    ridge_scale: float = 1e-6
    rel_tol: float = 0.05
    categorical: bool = False
    seed: int = 0


@dataclass(frozen=True)
class DistanceEstimate:
    value: float
    stderr: float
    ridge: float
    n_train: int
    n_test: int
    seed: int
    rank: int
    full_rank: bool


def fit_affine(F: np.ndarray, T: np.ndarray, ridge_scale: float = 1e-6):
    """Ridge least squares for ``T ~ F W^T + b``; ridge = ``ridge_scale * trace / dim``."""
    A = np.hstack([F, np.ones((F.shape[0], 1))])
    G = A.T @ A
    lam = ridge_scale * np.trace(G) / G.shape[0]
    rank = int(np.linalg.matrix_rank(A))
    coef = np.linalg.solve(G + lam * np.eye(G.shape[0]), A.T @ T)
    return coef[:-1].T, coef[-1], lam, rank


def rep_distance(phi_S: Callable, phi_T: Callable, X, cfg: DistanceConfig | None = None) -> DistanceEstimate:
    """Held-out mismatch rate of the best ridge-fitted affine map from ``phi_S`` to ``phi_T``.

    Vector targets count a mismatch when the relative Euclidean error exceeds
    ``rel_tol``; categorical targets (class ids or one-hot rows) compare argmax.
    """
    cfg = cfg or DistanceConfig()
    X = np.asarray(X, dtype=np.float64)
    F = np.asarray(phi_S(X), dtype=np.float64)
    T = np.asarray(phi_T(X), dtype=np.float64)
    F = F[:, None] if F.ndim == 1 else F
    if cfg.categorical and T.ndim == 1:
        T = np.eye(int(T.max()) + 1)[T.astype(int)]
    T = T[:, None] if T.ndim == 1 else T
    n = F.shape[0]
    if n < 10 * F.shape[1]:
        raise ValueError(f"need at least {10 * F.shape[1]} samples for {F.shape[1]} source features")
    tr, te = split_indices(n, RngStream(cfg.seed), cfg.train_frac)
    W, b, lam, rank = fit_affine(F[tr], T[tr], cfg.ridge_scale)
    pred = F[te] @ W.T + b
    if cfg.categorical:
        miss = np.argmax(pred, axis=1) != np.argmax(T[te], axis=1)
    else:
        err = np.linalg.norm(pred - T[te], axis=1)
        miss = err > cfg.rel_tol * np.linalg.norm(T[te], axis=1)
    value = float(np.mean(miss))
    stderr = math.sqrt(max(value * (1 - value), 0.0) / len(te))
    full = rank == F.shape[1] + 1
    return DistanceEstimate(value, stderr, float(lam), len(tr), len(te), cfg.seed, rank, full)


def distance_matrix(encoders: dict, X, cfg: DistanceConfig | None = None) -> np.ndarray:
    ids = list(encoders)
    out = np.zeros((len(ids), len(ids)))
    for i, s in enumerate(ids):
        for j, t in enumerate(ids):
            out[i, j] = rep_distance(encoders[s], encoders[t], X, cfg).value
    return out


def write_distance_matrix(path, ids, matrix) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model"] + list(ids))
        for name, row in zip(ids, matrix):
            w.writerow([name] + [repr(float(v)) for v in row])
    tmp.replace(path)


# --- total variation --------------------------------------------------------------


def _normal_pdf(x, mu, sigma):
    return np.exp(-0.5 * ((x - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))


def _crossings(mu1, s1, mu2, s2) -> list[float]:
    """Points where the two densities are equal."""
    if s1 == s2:
        return [] if mu1 == mu2 else [0.5 * (mu1 + mu2)]
    # log p1 = log p2 rearranged to a x^2 + b x + c = 0
    a = 1 / s2**2 - 1 / s1**2
    b = 2 * (mu1 / s1**2 - mu2 / s2**2)
    c = mu2**2 / s2**2 - mu1**2 / s1**2 + 2 * math.log(s2 / s1)
    disc = b * b - 4 * a * c
    if disc < 0:
        return []
    r = math.sqrt(disc)
    return sorted([(-b - r) / (2 * a), (-b + r) / (2 * a)])


def tv_gaussian_1d_quad(mu1, sigma1, mu2, sigma2) -> float:
    """``(1/2) integral |p - q|`` by adaptive quadrature split at the density crossings."""
    if sigma1 <= 0 or sigma2 <= 0:
        raise ValueError("standard deviations must be positive")
    smax = max(sigma1, sigma2)
    lo = min(mu1, mu2) - 40 * smax
    hi = max(mu1, mu2) + 40 * smax
    cuts = [lo] + [x for x in _crossings(mu1, sigma1, mu2, sigma2) if lo < x < hi] + [hi]
    f = lambda x: abs(_normal_pdf(x, mu1, sigma1) - _normal_pdf(x, mu2, sigma2))
    total = 0.0
    for a, b in zip(cuts[:-1], cuts[1:]):
        total += integrate.quad(f, a, b, epsabs=1e-13, epsrel=1e-12, limit=200,
                                points=[mu1, mu2] if a < min(mu1, mu2) < b else None)[0]
    return float(min(max(0.5 * total, 0.0), 1.0))


def tv_gaussian_1d(mu1, sigma1, mu2, sigma2) -> float:
    """Total variation between ``N(mu1, sigma1^2)`` and ``N(mu2, sigma2^2)``.

    Equal variances use ``2 Phi(|dmu| / (2 sigma)) - 1``; otherwise quadrature.
    """
    if sigma1 <= 0 or sigma2 <= 0:
        raise ValueError("standard deviations must be positive")
    if sigma1 == sigma2:
        return 2.0 * std_normal_cdf(abs(mu1 - mu2) / (2.0 * sigma1)) - 1.0
    return tv_gaussian_1d_quad(mu1, sigma1, mu2, sigma2)
