"""Self-supervised losses on embedding batches with analytic gradients.

Three families are covered: contrastive (InfoNCE), asymmetric with a
predictor (BYOL) and feature decorrelation (Barlow Twins).  Cosines are taken
on the raw rows, so every gradient is chained through the normalisation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

SSL_METHODS = ("infonce", "byol", "simsiam", "barlow")


@dataclass(frozen=True)
class SslConfig:
    method: str = "byol"
    temperature: float = 0.5
    lambda_bt: float = 5e-3
    ema_momentum: float = 0.99

    def __post_init__(self):
        if self.method not in SSL_METHODS:
            raise ValueError(f"unknown SSL method {self.method!r}")
        if self.temperature <= 0 or self.lambda_bt <= 0:
            raise ValueError("temperature and lambda_bt must be positive")
        if not 0.0 <= self.ema_momentum < 1.0:
            raise ValueError("ema_momentum must lie in [0, 1)")


@dataclass
class EmbeddingBatch:
    U1: np.ndarray
    U2: np.ndarray
    bank: np.ndarray | None = None

    def __post_init__(self):
        self.U1 = np.atleast_2d(np.asarray(self.U1, dtype=np.float64))
        self.U2 = np.atleast_2d(np.asarray(self.U2, dtype=np.float64))
        if self.U1.shape != self.U2.shape:
            raise ValueError(f"view shapes differ: {self.U1.shape} vs {self.U2.shape}")
        if self.bank is not None:
            self.bank = np.atleast_2d(np.asarray(self.bank, dtype=np.float64))
            if self.bank.shape[1] != self.U1.shape[1]:
                raise ValueError("bank width differs from embedding width")
        for m in (self.U1, self.U2) + (() if self.bank is None else (self.bank,)):
            if not np.all(np.isfinite(m)):
                raise ValueError("embeddings must be finite")


def _normalize(U: np.ndarray, what: str = "embedding"):
    norms = np.linalg.norm(U, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError(f"zero-norm {what} row")
    return U / norms, norms


def _through_normalization(Uhat: np.ndarray, norms: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Map a gradient w.r.t. ``u / |u|`` back to ``u``: ``(I - u_hat u_hat^T) g / |u|``."""
    return (G - np.sum(G * Uhat, axis=1, keepdims=True) * Uhat) / norms


def cosine(a, b) -> np.ndarray:
    a_hat, _ = _normalize(np.atleast_2d(a))
    b_hat, _ = _normalize(np.atleast_2d(b))
    return np.sum(a_hat * b_hat, axis=1)


# --- InfoNCE ---------------------------------------------------------------------


def _infonce_parts(batch: EmbeddingBatch, tau: float):
    if tau <= 0:
        raise ValueError("temperature must be positive")
    U1h, n1 = _normalize(batch.U1)
    U2h, _ = _normalize(batch.U2)
    N = U1h.shape[0]
    if batch.bank is None:
        if N < 2:
            raise ValueError("in-batch negatives need at least two rows; pass a bank")
        # candidates for anchor i: every second-view row, the positive sits at column i
        V = U2h
        logits = U1h @ V.T / tau
        pos = np.arange(N)
    else:
        Bh, _ = _normalize(batch.bank, "bank")
        V = None
        logits = np.concatenate([np.sum(U1h * U2h, axis=1, keepdims=True), U1h @ Bh.T], axis=1) / tau
        pos = np.zeros(N, dtype=int)
    return U1h, n1, U2h, V, logits, pos


def infonce_weights(batch: EmbeddingBatch, tau: float) -> np.ndarray:
    """Softmax weights ``s_v`` over each anchor's candidate set (positive included)."""
    *_, logits, _ = _infonce_parts(batch, tau)
    return softmax(logits, axis=1)


def infonce_loss(batch: EmbeddingBatch, tau: float) -> float:
    """Mean over anchors of ``-log(exp(cos(u1,u2)/tau) / sum_v exp(cos(u1,v)/tau))``.

    Candidates ``v`` are the positive plus the bank when one is given, else all
    rows of the second view.
    """
    *_, logits, pos = _infonce_parts(batch, tau)
    N = logits.shape[0]
    return float(np.mean(logsumexp(logits, axis=1) - logits[np.arange(N), pos]))


def infonce_grad(batch: EmbeddingBatch, tau: float) -> np.ndarray:
    """Gradient w.r.t. ``U1`` (second view and bank held fixed).

    On normalised anchors it is ``(1 / (tau N)) (-u2_hat + sum_v s_v v_hat)``.
    """
    U1h, n1, U2h, V, logits, pos = _infonce_parts(batch, tau)
    N = U1h.shape[0]
    s = softmax(logits, axis=1)
    if V is not None:
        weighted = s @ V
    else:
        Bh, _ = _normalize(batch.bank, "bank")
        weighted = s[:, :1] * U2h + s[:, 1:] @ Bh
    G = (weighted - U2h) / (tau * N)
    return _through_normalization(U1h, n1, G)


# --- BYOL ------------------------------------------------------------------------


@dataclass
class AffinePredictor:
    W: np.ndarray
    b: np.ndarray

    @classmethod
    def identity(cls, dim: int) -> "AffinePredictor":
        return cls(np.eye(dim), np.zeros(dim))

    def __call__(self, U: np.ndarray) -> np.ndarray:
        return U @ self.W.T + self.b


def byol_loss(online, target, predictor: AffinePredictor | None = None) -> float:
    """Mean of ``-cos(h(online), target)``; the target is a constant."""
    online = np.atleast_2d(np.asarray(online, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if online.shape[0] != target.shape[0]:
        raise ValueError("online and target batches differ in size")
    h = online if predictor is None else predictor(online)
    if h.shape != target.shape:
        raise ValueError(f"prediction shape {h.shape} does not match target {target.shape}")
    return float(-np.mean(cosine(h, target)))


@dataclass
class ByolGrads:
    online: np.ndarray
    W: np.ndarray | None
    b: np.ndarray | None
    target: np.ndarray  # identically zero under stop-gradient


def byol_grad(online, target, predictor: AffinePredictor | None = None) -> ByolGrads:
    online = np.atleast_2d(np.asarray(online, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    N = online.shape[0]
    h = online if predictor is None else predictor(online)
    hh, hn = _normalize(h)
    th, _ = _normalize(target, "target")
    dh = _through_normalization(hh, hn, -th / N)
    if predictor is None:
        return ByolGrads(dh, None, None, np.zeros_like(target))
    return ByolGrads(dh @ predictor.W, dh.T @ online, dh.sum(axis=0), np.zeros_like(target))


# --- Barlow Twins ----------------------------------------------------------------


def _batch_norm(Z: np.ndarray):
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[0] < 2:
        raise ValueError("batch norm needs at least two rows")
    std = Z.std(axis=0)
    if np.any(std == 0):
        raise ValueError("zero-variance column")
    return (Z - Z.mean(axis=0)) / std, std


def _batch_norm_backward(Zh: np.ndarray, std: np.ndarray, G: np.ndarray) -> np.ndarray:
    return (G - G.mean(axis=0) - Zh * np.mean(G * Zh, axis=0)) / std


def cross_correlation(Z1, Z2) -> np.ndarray:
    Z1h, _ = _batch_norm(Z1)
    Z2h, _ = _batch_norm(Z2)
    return Z1h.T @ Z2h / Z1h.shape[0]


def barlow_loss(Z1, Z2, lambda_bt: float) -> float:
    """``sum_i (W_ii - 1)^2 + lambda_bt sum_{i != j} W_ij^2`` on batch-normalised columns."""
    W = cross_correlation(Z1, Z2)
    d = np.diag(W)
    off = np.sum(W * W) - np.sum(d * d)
    return float(np.sum((d - 1.0) ** 2) + lambda_bt * off)


def barlow_grad(Z1, Z2, lambda_bt: float):
    """Gradients ``(dL/dZ1, dL/dZ2)``.

    With ``G = dL/dW = 2 (lambda W - A)``, ``A = I - (1 - lambda) diag(W)``, the
    normalised-space gradients are ``Z2_hat G^T / N`` and ``Z1_hat G / N``.
    """
    Z1h, s1 = _batch_norm(Z1)
    Z2h, s2 = _batch_norm(Z2)
    N = Z1h.shape[0]
    W = Z1h.T @ Z2h / N
    A = np.eye(W.shape[0]) - (1.0 - lambda_bt) * np.diag(np.diag(W))
    G = 2.0 * (lambda_bt * W - A)
    g1 = _batch_norm_backward(Z1h, s1, Z2h @ G.T / N)
    g2 = _batch_norm_backward(Z2h, s2, Z1h @ G / N)
    return g1, g2


# --- EMA -------------------------------------------------------------------------


def ema_update(target_params, online_params, m: float):
    """In-place ``t <- m t + (1 - m) o`` for each array pair; returns the target list."""
    if not 0.0 <= m < 1.0:
        raise ValueError("EMA momentum must lie in [0, 1)")
    for t, o in zip(target_params, online_params):
        if t.shape != o.shape:
            raise ValueError("parameter shapes differ")
        t *= m
        t += (1.0 - m) * o
    return target_params
