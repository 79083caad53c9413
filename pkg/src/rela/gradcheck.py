"""Central finite-difference checks of the analytic SSL gradients."""

from __future__ import annotations

import numpy as np

from .core_math import RngStream
from .ssl_zoo import (
    AffinePredictor,
    EmbeddingBatch,
    barlow_grad,
    barlow_loss,
    byol_grad,
    byol_loss,
    infonce_grad,
    infonce_loss,
)


def numeric_grad(f, X: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    g = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        old = X[idx]
        X[idx] = old + eps
        fp = f(X)
        X[idx] = old - eps
        fm = f(X)
        X[idx] = old
        g[idx] = (fp - fm) / (2.0 * eps)
    return g


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(num / den)


def gradient_errors(n_batches: int = 20, rows: int = 8, cols: int = 16, bank: int = 0, tau: float = 0.5,
                    lambda_bt: float = 0.005, eps: float = 1e-6, rng: RngStream | None = None) -> dict:
    """Relative error of each analytic gradient against central differences, per batch.

    BYOL is checked w.r.t. the online embeddings and both predictor blocks
    (the worst of the three is reported); Barlow w.r.t. both views.
    """
    rng = rng or RngStream(0)
    out = {"infonce": [], "byol": [], "barlow": []}
    for _ in range(n_batches):
        U1 = rng.normal(0.0, 1.0, (rows, cols))
        U2 = rng.normal(0.0, 1.0, (rows, cols))
        B = rng.normal(0.0, 1.0, (bank, cols)) if bank else None

        g = infonce_grad(EmbeddingBatch(U1, U2, B), tau)
        n = numeric_grad(lambda X: infonce_loss(EmbeddingBatch(X, U2, B), tau), U1.copy(), eps)
        out["infonce"].append(rel_error(g, n))

        P = AffinePredictor(np.eye(cols) + 0.3 * rng.normal(0.0, 1.0, (cols, cols)), 0.1 * rng.normal(0.0, 1.0, cols))
        g = byol_grad(U1, U2, P)
        errs = [
            rel_error(g.online, numeric_grad(lambda X: byol_loss(X, U2, P), U1.copy(), eps)),
            rel_error(g.W, numeric_grad(lambda W: byol_loss(U1, U2, AffinePredictor(W, P.b)), P.W.copy(), eps)),
            rel_error(g.b, numeric_grad(lambda b: byol_loss(U1, U2, AffinePredictor(P.W, b)), P.b.copy(), eps)),
        ]
        out["byol"].append(max(errs))

        g1, g2 = barlow_grad(U1, U2, lambda_bt)
        n1 = numeric_grad(lambda X: barlow_loss(X, U2, lambda_bt), U1.copy(), eps)
        n2 = numeric_grad(lambda X: barlow_loss(U1, X, lambda_bt), U2.copy(), eps)
        out["barlow"].append(max(rel_error(g1, n1), rel_error(g2, n2)))
    return out
