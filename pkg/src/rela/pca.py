"""Principal component analysis: single-pass, batch-accumulated, and target reduction."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core_math import eig_symmetric


@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (d, k), column-orthonormal
    eigenvalues: np.ndarray  # (k,), descending
    col_std: np.ndarray | None = None
    columns: np.ndarray | None = None  # kept input columns when some were dropped

    @property
    def n_components(self) -> int:
        return self.components.shape[1]

    def _prepare(self, Y: np.ndarray) -> np.ndarray:
        Y = np.asarray(Y, dtype=np.float64)
        if self.columns is not None:
            Y = Y[:, self.columns]
        Yc = Y - self.mean
        if self.col_std is not None:
            Yc = Yc / self.col_std
        return Yc

    def transform(self, Y: np.ndarray) -> np.ndarray:
        return self._prepare(Y) @ self.components

    def inverse_transform(self, Z: np.ndarray) -> np.ndarray:
        Y = np.asarray(Z) @ self.components.T
        if self.col_std is not None:
            Y = Y * self.col_std
        return Y + self.mean

    def to_dict(self) -> dict:
        out = {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
        }
        if self.col_std is not None:
            out["col_std"] = self.col_std.tolist()
        if self.columns is not None:
            out["columns"] = [int(c) for c in self.columns]
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "PcaModel":
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float64),
            components=np.asarray(d["components"], dtype=np.float64).reshape(len(d["mean"]), -1),
            eigenvalues=np.asarray(d["eigenvalues"], dtype=np.float64),
            col_std=None if d.get("col_std") is None else np.asarray(d["col_std"], dtype=np.float64),
            columns=None if d.get("columns") is None else np.asarray(d["columns"], dtype=np.int64),
        )


def _check(Y, k):
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.size == 0:
        raise ValueError("expected a non-empty 2-D matrix")
    n, d = Y.shape
    if n < 2:
        raise ValueError("need at least two rows")
    if not 1 <= k <= d:
        raise ValueError(f"k must lie in [1, {d}], got {k}")
    return Y


def covariance(Yc: np.ndarray) -> np.ndarray:
    return Yc.T @ Yc / (Yc.shape[0] - 1)


def batch_covariance(Yc: np.ndarray, batch_size: int) -> np.ndarray:
    """Sum of ``B^T B`` over row blocks in index order, divided by ``n - 1``."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n, d = Yc.shape
    acc = np.zeros((d, d))
    for i in range(0, n, batch_size):
        b = Yc[i : i + batch_size]
        acc += b.T @ b
    return acc / (n - 1)


def _top_k(cov: np.ndarray, k: int):
    # symmetrise: floating summation can leave the accumulated matrix a few ulps off
    w, v = eig_symmetric(0.5 * (cov + cov.T))
    return w[:k], v[:, :k]


def full_pca(Y, k: int):
    """Centre, form the ``n - 1`` covariance, keep the top ``k`` eigenvectors, project."""
    Y = _check(Y, k)
    mean = Y.mean(axis=0)
    Yc = Y - mean
    w, v = _top_k(covariance(Yc), k)
    return PcaModel(mean, v, w), Yc @ v


def batch_pca(Y, k: int, batch_size: int):
    """Batch-accumulated PCA: covariance and projection are both computed block by block."""
    Y = _check(Y, k)
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    n = Y.shape[0]
    if batch_size >= n:
        return full_pca(Y, k)
    mean = Y.mean(axis=0)
    Yc = Y - mean
    w, v = _top_k(batch_covariance(Yc, batch_size), k)
    reduced = np.zeros((n, k))
    for i in range(0, n, batch_size):
        reduced[i : i + batch_size] = Yc[i : i + batch_size] @ v
    return PcaModel(mean, v, w), reduced


def reduce_targets(R_Y, n_components: int, standardize: bool = False, batch_size: int | None = None):
    """Reduce a target matrix to ``n_components`` principal coordinates.

    Without ``standardize`` this is plain centred PCA.  With it, columns are
    scaled to unit standard deviation (``ddof=1``) and the covariance of the
    standardised matrix is decomposed; zero-variance columns are dropped with
    a warning.
    """
    R = np.asarray(R_Y, dtype=np.float64)
    if R.ndim != 2 or R.size == 0:
        raise ValueError("target matrix must be non-empty and 2-D")
    columns = None
    col_std = None
    if standardize:
        std = R.std(axis=0, ddof=1)
        keep = std > 0
        if not np.all(keep):
            dropped = np.nonzero(~keep)[0].tolist()
            warnings.warn(f"dropping zero-variance target columns {dropped}", RuntimeWarning, stacklevel=2)
            columns = np.nonzero(keep)[0]
            R = R[:, columns]
            std = std[keep]
        col_std = std
        n_components = min(n_components, R.shape[1])
        mean = R.mean(axis=0)
        Z = (R - mean) / std
        bs = batch_size or Z.shape[0]
        model, reduced = batch_pca(Z, n_components, bs)
        model = PcaModel(mean, model.components, model.eigenvalues, col_std, columns)
        return model, reduced
    bs = batch_size or R.shape[0]
    return batch_pca(R, n_components, bs)


def align_signs(reference: np.ndarray, other: np.ndarray) -> np.ndarray:
    """Flip columns of ``other`` to best agree with ``reference``."""
    s = np.sign(np.sum(reference * other, axis=0))
    s[s == 0] = 1.0
    return other * s
