"""Efficient-data synthesis: prior-model targets, weak augmentation, target stores, overlap."""

from __future__ import annotations

import json
import math
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np

from .core_math import RngStream, std_normal_cdf
from .pca import PcaModel

STORE_MAGIC = b"RELA"
STORE_VERSION = 1


# --- prior models ---------------------------------------------------------------


@dataclass
class PriorModel:
    """A labeler mapping sample rows to representation rows.

    ``forward`` must be pure.  ``samples_seen`` counts rows passed through
    ``__call__`` so single-pass generation can be checked.
    """

    id: str
    output_dim: int
    forward: Callable[[np.ndarray], np.ndarray]
    input_dim: int | None = None
    samples_seen: int = field(default=0, compare=False)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.input_dim is not None and X.shape[1] != self.input_dim:
            raise ValueError(f"prior {self.id!r} expects {self.input_dim} input features, got {X.shape[1]}")
        out = np.asarray(self.forward(X), dtype=np.float64)
        if out.shape != (X.shape[0], self.output_dim):
            raise ValueError(f"prior {self.id!r} returned shape {out.shape}")
        self.samples_seen += X.shape[0]
        return out


def identity_prior(dim: int) -> PriorModel:
    return PriorModel("identity", dim, lambda X: X.copy(), dim)


def constant_prior(dim_in: int, value) -> PriorModel:
    value = np.atleast_1d(np.asarray(value, dtype=np.float64))
    return PriorModel("constant", value.size, lambda X: np.tile(value, (X.shape[0], 1)), dim_in)


def tinynet_prior(net, id: str = "tinynet", layer: str = "hidden") -> PriorModel:
    """Hidden ReLU features (``layer="hidden"``) or the scalar output of a ``TinyNet``."""
    if layer == "hidden":
        return PriorModel(id, net.hidden, net.hidden_features, net.dim)
    if layer == "output":
        return PriorModel(id, 1, lambda X: net(X)[:, None], net.dim)
    raise ValueError(f"unknown layer {layer!r}")


def mlp_prior(mlp, id: str = "mlp", layer: str = "output") -> PriorModel:
    """Output or last-hidden-layer features of an ``MLP``."""
    sizes = mlp.sizes
    if layer == "output":
        return PriorModel(id, sizes[-1], lambda X: mlp.forward(X), sizes[0])
    if layer == "hidden":
        if len(sizes) < 3:
            raise ValueError("network has no hidden layer")
        return PriorModel(id, sizes[-2], mlp.hidden, sizes[0])
    raise ValueError(f"unknown layer {layer!r}")


def table_prior(X: np.ndarray, targets: np.ndarray, id: str = "table") -> PriorModel:
    """Looks targets up by exact sample row; unknown rows raise ``KeyError``."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    lut = {row.tobytes(): i for i, row in enumerate(X)}

    def forward(Q):
        Q = np.ascontiguousarray(Q, dtype=np.float64)
        return targets[[lut[row.tobytes()] for row in Q]]

    return PriorModel(id, targets.shape[1], forward, X.shape[1])


def generate_targets(prior: PriorModel, X, chunk_size: int = 4096, workers: int = 1) -> np.ndarray:
    """One forward pass per sample; row order follows ``X`` regardless of ``workers``.

    Image batches ``(n, C, H, W)`` are flattened to rows first.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim > 2:
        X = X.reshape(X.shape[0], -1)
    if X.ndim != 2:
        raise ValueError("samples must be a matrix or an image batch")
    if prior.input_dim is not None and X.shape[1] != prior.input_dim:
        raise ValueError(f"dimension mismatch: prior expects {prior.input_dim}, samples have {X.shape[1]}")
    n = X.shape[0]
    out = np.empty((n, prior.output_dim))
    starts = list(range(0, n, chunk_size))

    def run(i):
        out[i : i + chunk_size] = prior(X[i : i + chunk_size])

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            list(pool.map(run, starts))
    else:
        for i in starts:
            run(i)
    return out


# --- weak augmentation ----------------------------------------------------------


@lru_cache(maxsize=4096)
def _resize_matrix(out_size: int, start: int, length: int, in_size: int) -> np.ndarray:
    """Corner-aligned bilinear weights mapping ``length`` source pixels to ``out_size``."""
    m = np.zeros((out_size, in_size))
    if out_size == 1 or length == 1:
        pos = np.full(out_size, start + (length - 1) / 2.0)
    else:
        pos = start + np.arange(out_size) * ((length - 1) / (out_size - 1))
    lo = np.minimum(np.floor(pos).astype(int), in_size - 1)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = pos - lo
    rows = np.arange(out_size)
    m[rows, lo] += 1.0 - frac
    m[rows, hi] += frac
    m.flags.writeable = False
    return m


def crop_params(height: int, width: int, rng: RngStream, min_scale: float = 0.5,
                ratio=(3.0 / 4.0, 4.0 / 3.0), attempts: int = 10):
    """Random-resized-crop box ``(top, left, h, w)``; centre crop if every attempt is degenerate."""
    area = height * width
    log_r = (math.log(ratio[0]), math.log(ratio[1]))
    for _ in range(attempts):
        target = area * rng.uniform(min_scale, 1.0)
        aspect = math.exp(rng.uniform(*log_r)) if log_r[0] != log_r[1] else math.exp(log_r[0])
        w = int(round(math.sqrt(target * aspect)))
        h = int(round(math.sqrt(target / aspect)))
        if 0 < w <= width and 0 < h <= height:
            top = int(rng.integers(0, height - h + 1))
            left = int(rng.integers(0, width - w + 1))
            return top, left, h, w
    in_ratio = width / height
    if in_ratio < ratio[0]:
        w, h = width, int(round(width / ratio[0]))
    elif in_ratio > ratio[1]:
        h, w = height, int(round(height * ratio[1]))
    else:
        h, w = height, width
    return (height - h) // 2, (width - w) // 2, h, w


def weak_augment(img: np.ndarray, rng: RngStream, min_scale: float = 0.5, flip_p: float = 0.5,
                 ratio=(3.0 / 4.0, 4.0 / 3.0)) -> np.ndarray:
    """Random resized crop (area in ``[min_scale, 1]``) resized back bilinearly, then a random flip.

    ``img`` is ``(C, H, W)`` with pixels in ``[0, 1]``.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or min(img.shape) < 1:
        raise ValueError(f"expected a (C, H, W) image, got shape {img.shape}")
    if not 0.0 < min_scale <= 1.0:
        raise ValueError("min_scale must lie in (0, 1]")
    _, H, W = img.shape
    top, left, h, w = crop_params(H, W, rng, min_scale, ratio)
    ry = _resize_matrix(H, top, h, H)
    rx = _resize_matrix(W, left, w, W)
    out = ry @ img @ rx.T
    if rng.random() < flip_p:
        out = out[:, :, ::-1]
    return np.clip(out, 0.0, 1.0)


def augment_batch(images: np.ndarray, rng: RngStream, min_scale: float = 0.5, flip_p: float = 0.5,
                  ratio=(3.0 / 4.0, 4.0 / 3.0)) -> np.ndarray:
    """``weak_augment`` over an ``(n, C, H, W)`` batch; same draws, one batched contraction."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4:
        raise ValueError("expected an (n, C, H, W) batch")
    if not 0.0 < min_scale <= 1.0:
        raise ValueError("min_scale must lie in (0, 1]")
    n, _, H, W = images.shape
    ry = np.empty((n, H, H))
    rx = np.empty((n, W, W))
    flip = np.zeros(n, dtype=bool)
    for i in range(n):
        top, left, h, w = crop_params(H, W, rng, min_scale, ratio)
        ry[i] = _resize_matrix(H, top, h, H)
        rx[i] = _resize_matrix(W, left, w, W)
        flip[i] = rng.random() < flip_p
    out = ry[:, None] @ images @ np.swapaxes(rx, 1, 2)[:, None]
    out[flip] = out[flip][..., ::-1]
    return np.clip(out, 0.0, 1.0)


# --- synthetic image task -----------------------------------------------------------


@dataclass
class ImageSet:
    images: np.ndarray  # (n, 1, H, W) in [0, 1]
    labels: np.ndarray  # (n,) class ids

    @property
    def flat(self) -> np.ndarray:
        return self.images.reshape(self.images.shape[0], -1)


def _class_templates(size: int) -> np.ndarray:
    """Horizontal versus vertical stripe patterns, zero mean, unit max."""
    t = np.cos(np.pi * np.arange(size) / 2.0)
    horiz = np.tile(t[:, None], (1, size))
    return np.stack([horiz, horiz.T])


def make_image_mixture(n: int, rng: RngStream, size: int = 8, signal: float = 0.12,
                       nuisance: float = 0.25, noise: float = 0.05) -> ImageSet:
    """Two-class ``1 x size x size`` images: a faint class stripe pattern under a strong blob.

    Each image is ``0.5 + signal * template[c] + nuisance * blob + noise``
    clipped to ``[0, 1]``, where ``blob`` is a Gaussian bump of random
    position, width and sign.  Stripes survive crop and flip; the blob does not.
    """
    labels = rng.integers(0, 2, n)
    temps = _class_templates(size)
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy = rng.uniform(0, size - 1, n)[:, None, None]
    cx = rng.uniform(0, size - 1, n)[:, None, None]
    width = rng.uniform(1.0, 3.0, n)[:, None, None]
    sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)[:, None, None]
    blob = sign * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width**2))
    img = 0.5 + signal * temps[labels] + nuisance * blob + noise * rng.normal(0.0, 1.0, (n, size, size))
    return ImageSet(np.clip(img, 0.0, 1.0)[:, None], labels)


# --- target stores --------------------------------------------------------------


class TargetStoreError(Exception):
    pass


class StoreCorruptError(TargetStoreError):
    """Bad magic bytes or an unreadable header."""


class StoreVersionError(TargetStoreError):
    pass


class StoreTruncatedError(TargetStoreError):
    pass


class StoreIntegrityError(TargetStoreError):
    """Header and payload disagree (size or checksum)."""


@dataclass
class TargetStore:
    data: np.ndarray  # float32 rows
    prior_id: str = "unknown"
    seed: int = 0
    params: dict = field(default_factory=dict)
    pca: PcaModel | None = None
    version: int = STORE_VERSION

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError("store payload must be 2-D")

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def cols(self) -> int:
        return self.data.shape[1]

    def header(self) -> dict:
        payload = self.data.astype("<f4").tobytes()
        return {
            "cols": self.cols,
            "crc32": zlib.crc32(payload),
            "dtype": "f32",
            "params": self.params,
            "pca": None if self.pca is None else self.pca.to_dict(),
            "prior_id": self.prior_id,
            "rows": self.rows,
            "seed": self.seed,
        }


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def store_bytes(store: TargetStore) -> bytes:
    header = _canonical_json(store.header())
    payload = store.data.astype("<f4").tobytes()
    return STORE_MAGIC + bytes([store.version]) + struct.pack("<I", len(header)) + header + payload


def save_target_store(store: TargetStore, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(store_bytes(store))
    tmp.replace(path)


def parse_target_store(raw: bytes) -> TargetStore:
    if len(raw) < 9:
        raise StoreTruncatedError("file shorter than the fixed preamble")
    if raw[:4] != STORE_MAGIC:
        raise StoreCorruptError("bad magic bytes")
    version = raw[4]
    if version != STORE_VERSION:
        raise StoreVersionError(f"unsupported store version {version}")
    (hlen,) = struct.unpack("<I", raw[5:9])
    if len(raw) < 9 + hlen:
        raise StoreTruncatedError("file ends inside the header")
    try:
        header = json.loads(raw[9 : 9 + hlen].decode("utf-8"))
        rows, cols = int(header["rows"]), int(header["cols"])
        dtype = header["dtype"]
    except (ValueError, KeyError, TypeError) as exc:
        raise StoreCorruptError(f"unreadable header: {exc}") from exc
    if dtype != "f32":
        raise StoreCorruptError(f"unsupported dtype {dtype!r}")
    payload = raw[9 + hlen :]
    expected = rows * cols * 4
    if len(payload) < expected:
        raise StoreTruncatedError(f"payload has {len(payload)} bytes, header declares {expected}")
    if len(payload) != expected:
        raise StoreIntegrityError(f"payload has {len(payload)} bytes, header declares {expected}")
    if "crc32" in header and zlib.crc32(payload) != header["crc32"]:
        raise StoreIntegrityError("payload checksum mismatch")
    data = np.frombuffer(payload, dtype="<f4").reshape(rows, cols).astype(np.float32)
    pca = None if header.get("pca") is None else PcaModel.from_dict(header["pca"])
    return TargetStore(data, header.get("prior_id", "unknown"), int(header.get("seed", 0)),
                       header.get("params", {}), pca, version)


def load_target_store(path) -> TargetStore:
    return parse_target_store(Path(path).read_bytes())


# --- overlap analysis -------------------------------------------------------------


def overlap_paper(delta_mu: float, sigma2: float, k: float, alpha: float) -> float:
    """``2 Phi(delta_mu / sqrt(2 (sigma2 + k alpha))) - 1``, evaluated as written.

    Note this expression decreases as ``alpha`` grows.
    """
    if delta_mu < 0 or sigma2 <= 0 or k < 0 or alpha < 0:
        raise ValueError("invalid overlap arguments")
    return 2.0 * std_normal_cdf(delta_mu / math.sqrt(2.0 * (sigma2 + k * alpha))) - 1.0


def overlap_mc(mu1: float, mu2: float, sigma_aug: float, n: int, rng: RngStream,
               return_stderr: bool = False):
    """Monte-Carlo estimate of ``integral min(p1, p2)`` for ``N(mu1, s^2)`` and ``N(mu2, s^2)``.

    Uses ``E_{x ~ p1}[min(1, p2(x) / p1(x))]`` with half the draws from each
    component (the estimand is symmetric).
    """
    if n < 10_000:
        raise ValueError("use at least 10^4 draws")
    if sigma_aug <= 0:
        raise ValueError("sigma_aug must be positive")
    half = n // 2
    x1 = rng.normal(mu1, sigma_aug, half)
    x2 = rng.normal(mu2, sigma_aug, n - half)

    def log_ratio(x, a, b):
        return ((x - a) ** 2 - (x - b) ** 2) / (2.0 * sigma_aug**2)

    w = np.concatenate([
        np.minimum(1.0, np.exp(log_ratio(x1, mu1, mu2))),
        np.minimum(1.0, np.exp(log_ratio(x2, mu2, mu1))),
    ])
    est = float(w.mean())
    if return_stderr:
        return est, float(w.std(ddof=1) / math.sqrt(n))
    return est


def overlap_exact(delta_mu: float, sigma: float) -> float:
    """Closed form of the equal-variance overlap, ``2 Phi(-delta_mu / (2 sigma))``."""
    return 2.0 * std_normal_cdf(-abs(delta_mu) / (2.0 * sigma))
