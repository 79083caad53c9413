"""Numerical substrate: seeded streams, samplers, the normal CDF and a Jacobi eigensolver."""

from __future__ import annotations

import math

import numpy as np
from scipy import special


class ConvergenceError(RuntimeError):
    """Raised when an iterative routine hits its iteration cap."""


class RngStream:
    """A seeded random stream.

    Streams derived from the same ``(seed, stream_id)`` produce identical draws;
    different stream ids yield statistically independent PCG64 sequences.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        if seed < 0 or stream_id < 0:
            raise ValueError("seed and stream_id must be non-negative")
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def spawn(self, stream_id: int) -> "RngStream":
        """Independent child stream keyed by ``stream_id`` under the same seed."""
        return RngStream(self.seed, stream_id)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"

    # thin pass-throughs used across the package
    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def random(self, size=None):
        return self.generator.random(size)

    def permutation(self, n):
        return self.generator.permutation(n)


def as_rng(rng: RngStream | int) -> RngStream:
    return rng if isinstance(rng, RngStream) else RngStream(int(rng))


def sample_gaussian(rng: RngStream, mean: float, std: float, n: int) -> np.ndarray:
    if std < 0:
        raise ValueError(f"std must be non-negative, got {std}")
    return rng.generator.normal(mean, std, n)


def sample_generalized_gaussian(
    rng: RngStream, mu: float, alpha: float, beta: float, n: int
) -> np.ndarray:
    """Draw from the density ``beta / (2 alpha Gamma(1/beta)) exp(-(|x - mu| / alpha)^beta)``.

    Uses ``(|x - mu| / alpha)^beta ~ Gamma(1/beta, 1)`` with an independent
    symmetric sign.
    """
    if alpha <= 0 or beta <= 0:
        raise ValueError(f"alpha and beta must be positive, got alpha={alpha}, beta={beta}")
    g = rng.generator.standard_gamma(1.0 / beta, n)
    sign = np.where(rng.generator.random(n) < 0.5, -1.0, 1.0)
    return mu + sign * alpha * g ** (1.0 / beta)


def generalized_gaussian_variance(alpha: float, beta: float) -> float:
    return alpha**2 * math.gamma(3.0 / beta) / math.gamma(1.0 / beta)


def std_normal_cdf(z):
    """Phi(z) = (1 + erf(z / sqrt 2)) / 2, evaluated through erfc for tail accuracy."""
    z = np.asarray(z, dtype=np.float64)
    out = 0.5 * special.erfc(-z / math.sqrt(2.0))
    return float(out) if out.ndim == 0 else out


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return special.expit(z)


def _round_robin(n: int) -> list[list[tuple[int, int]]]:
    """Tournament schedule: ``n - 1`` rounds (``n`` even) of disjoint index pairs."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = []
        for i in range(m // 2):
            p, q = players[i], players[m - 1 - i]
            if p < n and q < n:
                pairs.append((min(p, q), max(p, q)))
        rounds.append(pairs)
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _fix_signs(v: np.ndarray) -> np.ndarray:
    idx = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[idx, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return v * signs


def eig_symmetric(a, tol: float = 1e-10, max_sweeps: int = 100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Rotations are applied in round-robin order so each round touches disjoint
    index pairs and can be vectorised.  Returns eigenvalues sorted descending
    and column eigenvectors whose largest-magnitude entry is positive.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix has non-finite entries")
    n = a.shape[0]
    scale = max(np.max(np.abs(a)), 1.0) if n else 1.0
    if np.max(np.abs(a - a.T), initial=0.0) > tol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    a = 0.5 * (a + a.T)
    v = np.eye(n)
    if n <= 1:
        return np.diag(a).copy(), v

    rounds = [
        (np.array([p for p, _ in r]), np.array([q for _, q in r])) for r in _round_robin(n)
    ]
    fro = np.linalg.norm(a)
    offmask = ~np.eye(n, dtype=bool)
    for _ in range(max_sweeps):
        off = np.linalg.norm(a[offmask])
        if off <= 1e-15 * fro:
            break
        for ps, qs in rounds:
            apq = a[ps, qs]
            active = np.abs(apq) > 1e-300
            if not np.any(active):
                continue
            p, q, apq = ps[active], qs[active], apq[active]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.hypot(theta, 1.0))
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            cp, cq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * cp - s * cq
            a[:, q] = s * cp + c * cq
            rp, rq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
    else:
        raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")

    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return w[order], _fix_signs(v[:, order])
