"""Two-phase training: cosine transport to stored targets, then a host SSL loss.

A one-way scheduler switches from the transport loss (lambda = 1) to the SSL
loss (lambda = 0) once a slow and a fast moving average of the transport loss
agree.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import softmax

from .core_math import RngStream
from .data_factory import (
    PriorModel,
    TargetStore,
    augment_batch,
    generate_targets,
    make_image_mixture,
    mlp_prior,
)
from .evaluation import ProbeConfig, linear_probe
from .mlp import MLP, make_optimizer
from .pca import reduce_targets
from .ssl_zoo import (
    AffinePredictor,
    EmbeddingBatch,
    SslConfig,
    _normalize,
    _through_normalization,
    barlow_grad,
    barlow_loss,
    byol_grad,
    byol_loss,
    ema_update,
    infonce_grad,
    infonce_loss,
)

ELL_S0 = 2.0
ELL_F0 = 1.0
FLIP_THRESHOLD = 0.995

Encoder = MLP


class NonFiniteLossError(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value


def make_encoder(in_dim: int, out_dim: int, rng: RngStream, hidden=(64, 64)) -> MLP:
    return MLP.init([in_dim, *hidden, out_dim], rng)


# --- scheduler --------------------------------------------------------------------


@dataclass(frozen=True)
class RelaState:
    lam: int = 1
    ell_s: float = ELL_S0
    ell_f: float = ELL_F0
    step: int = 0
    W: np.ndarray | None = field(default=None, compare=False)
    b: np.ndarray | None = field(default=None, compare=False)


def scheduler_step(state: RelaState, ell_c: float | None) -> RelaState:
    """One update of the adaptive weighting rule.

    While ``lam == 1`` the fast average tracks ``ell_c`` and the slow average
    tracks the fast one; ``lam`` drops to 0 for good once
    ``exp(-max(ell_s - ell_f, 0)) >= 0.995``.  The trigger is checked every
    call; after the flip only ``step`` advances.
    """
    ell_s, ell_f, lam = state.ell_s, state.ell_f, state.lam
    if lam == 1:
        if ell_c is None or not math.isfinite(ell_c):
            raise ValueError(f"current loss must be finite, got {ell_c!r}")
        ell_f = 0.999 * ell_f + 0.001 * ell_c
        ell_s = 0.99 * ell_s + 0.01 * ell_f
    if math.exp(-max(ell_s - ell_f, 0.0)) >= FLIP_THRESHOLD:
        lam = 0
    return replace(state, lam=lam, ell_s=ell_s, ell_f=ell_f, step=state.step + 1)


def replay_flip_step(stream, state: RelaState | None = None) -> int | None:
    """Number of scheduler updates after which ``lam`` first reads 0, or None."""
    state = state or RelaState()
    for i, ell_c in enumerate(stream, start=1):
        state = scheduler_step(state, ell_c)
        if state.lam == 0:
            return i
    return None


def combined_loss(state: RelaState, rela_term: Callable, ssl_term: Callable):
    """``lam * rela + (1 - lam) * ssl`` with only the active term evaluated."""
    if state.lam not in (0, 1):
        raise ValueError("lambda must be 0 or 1")
    return rela_term() if state.lam == 1 else ssl_term()


# --- transport loss ---------------------------------------------------------------


def rela_loss(z, W, b, y) -> float:
    """Mean over rows of ``1 - cos(W z + b, y)``."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    p = z @ np.asarray(W).T + b
    ph, _ = _normalize(p, "transported")
    yh, _ = _normalize(y, "target")
    return float(np.mean(1.0 - np.sum(ph * yh, axis=1)))


def rela_grad(z, W, b, y):
    """Gradients of ``rela_loss`` w.r.t. ``(z, W, b)``."""
    z = np.atleast_2d(z)
    y = np.atleast_2d(y)
    p = z @ W.T + b
    ph, pn = _normalize(p, "transported")
    yh, _ = _normalize(y, "target")
    dp = _through_normalization(ph, pn, -yh / z.shape[0])
    return dp @ W, dp.T @ z, dp.sum(axis=0)


def init_transport(m: int, n: int, rng: RngStream):
    """Identity when square, else a random matrix with orthonormal columns (or rows)."""
    if m == n:
        return np.eye(n), np.zeros(m)
    q, r = np.linalg.qr(rng.normal(0.0, 1.0, (max(m, n), min(m, n))))
    q = q * np.sign(np.diag(r))
    return (q if m > n else q.T), np.zeros(m)


# --- training driver ----------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    momentum: float = 0.9
    weight_decay: float = 0.0
    ssl: SslConfig = field(default_factory=SslConfig)
    use_rela: bool = True
    target_refresh_k: int | None = None
    seed: int = 0
    max_steps: int | None = None
    augment: bool = True
    min_scale: float = 0.5
    flip_p: float = 0.5
    probe_every: int | None = None
    probe: ProbeConfig = field(default_factory=ProbeConfig)

    def __post_init__(self):
        if isinstance(self.ssl, dict):
            self.ssl = SslConfig(**self.ssl)
        if isinstance(self.probe, dict):
            self.probe = ProbeConfig(**self.probe)
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("invalid training configuration")
        if self.target_refresh_k is not None and self.target_refresh_k < 1:
            raise ValueError("target_refresh_k must be positive or None")


@dataclass
class LogRecord:
    step: int
    epoch: int
    phase: str
    loss: float
    lam: int
    ell_s: float
    ell_f: float


@dataclass
class RunResult:
    encoder: MLP
    log: list[LogRecord]
    state: RelaState
    flip_step: int | None
    probes: list[tuple[int, float]]
    seed: int

    def steps_to_accuracy(self, threshold: float) -> float:
        for step, acc in self.probes:
            if acc >= threshold:
                return float(step)
        return math.inf

    def summary(self) -> dict:
        last = {}
        for rec in self.log:
            last[rec.phase] = rec.loss
        return {
            "seed": self.seed,
            "flip_step": self.flip_step,
            "steps": self.log[-1].step,
            "final_losses": last,
            "probe_accuracy": self.probes[-1][1] if self.probes else None,
            "probes": [[s, a] for s, a in self.probes],
        }


def write_run_log(path, log: list[LogRecord]) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "epoch", "phase", "loss", "lambda", "ell_s", "ell_f"])
        for r in log:
            w.writerow([r.step, r.epoch, r.phase, repr(r.loss), r.lam, repr(r.ell_s), repr(r.ell_f)])
    tmp.replace(path)


def write_summary(path, summary: dict) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    tmp.replace(path)


def _store_targets(store: TargetStore) -> np.ndarray:
    # the stored rows are already PCA-reduced when the store carries a model
    return store.data.astype(np.float64)


def _ssl_step(cfg: SslConfig, online: MLP, target: MLP, pred: AffinePredictor, v1, v2):
    """Symmetric SSL loss on two views; returns ``(loss, encoder grads, predictor grads)``."""
    v1 = v1.reshape(len(v1), -1)
    v2 = v2.reshape(len(v2), -1)
    z1, c1 = online.forward(v1, return_cache=True)
    z2, c2 = online.forward(v2, return_cache=True)
    if cfg.method in ("byol", "simsiam"):
        t1 = target(v1) if cfg.method == "byol" else z1.copy()
        t2 = target(v2) if cfg.method == "byol" else z2.copy()
        loss = byol_loss(z1, t2, pred) + byol_loss(z2, t1, pred)
        ga, gb = byol_grad(z1, t2, pred), byol_grad(z2, t1, pred)
        d1, d2 = ga.online, gb.online
        pgrads = [ga.W + gb.W, ga.b + gb.b]
    elif cfg.method == "infonce":
        loss = infonce_loss(EmbeddingBatch(z1, z2), cfg.temperature) + infonce_loss(EmbeddingBatch(z2, z1), cfg.temperature)
        d1 = infonce_grad(EmbeddingBatch(z1, z2), cfg.temperature)
        d2 = infonce_grad(EmbeddingBatch(z2, z1), cfg.temperature)
        pgrads = None
    else:
        loss = barlow_loss(z1, z2, cfg.lambda_bt)
        d1, d2 = barlow_grad(z1, z2, cfg.lambda_bt)
        pgrads = None
    g1, _ = online.backward(c1, d1)
    g2, _ = online.backward(c2, d2)
    return loss, [a + b for a, b in zip(g1, g2)], pgrads


def train_rela(encoder: MLP, samples: np.ndarray, store: TargetStore | None, cfg: TrainConfig,
               rng: RngStream, probe_set: tuple[np.ndarray, np.ndarray] | None = None,
               prior: PriorModel | None = None) -> RunResult:
    """Train ``encoder`` on image ``samples`` ``(n, C, H, W)``.

    Phase 1 minimises the transport loss to the stored targets, jointly with
    ``(W, b)``; after the scheduler flips, the configured SSL loss takes over
    (BYOL-style with an EMA target by default).  Only the active loss is
    computed each step.  ``probe_set = (images, labels)`` enables linear-probe
    checkpoints every ``cfg.probe_every`` steps.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 4:
        raise ValueError("samples must be an (n, C, H, W) image batch")
    n = samples.shape[0]
    flat = samples.reshape(n, -1)
    if cfg.use_rela:
        if store is None:
            raise ValueError("the transport phase needs a target store")
        if store.rows != n:
            raise ValueError(f"store has {store.rows} rows for {n} samples")
        Y = _store_targets(store)
    online = encoder.copy()
    out_dim = online.sizes[-1]
    W, b = init_transport(Y.shape[1], out_dim, rng.spawn(11)) if cfg.use_rela else (None, None)
    state = RelaState(lam=1 if cfg.use_rela else 0, W=W, b=b)
    target = online.copy()
    pred = AffinePredictor.identity(out_dim)
    # one optimizer per phase: the SSL phase starts from fresh moment estimates
    rela_opt, ssl_opt, pred_opt = (
        make_optimizer(cfg.optimizer, cfg.learning_rate, cfg.momentum, cfg.weight_decay) for _ in range(3)
    )
    batch_rng = rng.spawn(12)
    aug_rng = rng.spawn(13)
    probe_rng_seed = rng.seed

    steps_per_epoch = max(n // cfg.batch_size, 1)
    total = cfg.epochs * steps_per_epoch
    if cfg.max_steps is not None:
        total = min(total, cfg.max_steps)

    def probe(step):
        if probe_set is None or not cfg.probe_every:
            return
        feats = online(probe_set[0].reshape(len(probe_set[0]), -1))
        probes.append((step, linear_probe(feats, probe_set[1], cfg.probe, RngStream(probe_rng_seed, 21))))

    probes: list[tuple[int, float]] = []
    log: list[LogRecord] = []
    first = np.arange(min(cfg.batch_size, n))
    if state.lam == 1:
        loss0 = rela_loss(online(flat[first]), W, b, Y[first])
        phase0 = "rela"
    else:
        v = samples[first]
        loss0 = _ssl_step(cfg.ssl, online, target, pred, v, v)[0]
        phase0 = "ssl"
    if not math.isfinite(loss0):
        raise NonFiniteLossError(0, loss0)
    log.append(LogRecord(0, 0, phase0, loss0, state.lam, state.ell_s, state.ell_f))
    probe(0)
    flip_step = None

    step = 0
    order = batch_rng.permutation(n)
    for step in range(1, total + 1):
        epoch, pos = divmod(step - 1, steps_per_epoch)
        if pos == 0 and step > 1:
            order = batch_rng.permutation(n)
            if cfg.use_rela and cfg.target_refresh_k and prior is not None and epoch % cfg.target_refresh_k == 0:
                Y = generate_targets(prior, flat)
                if store.pca is not None:
                    Y = store.pca.transform(Y)
        idx = order[pos * cfg.batch_size : (pos + 1) * cfg.batch_size]
        if cfg.augment:
            v1 = augment_batch(samples[idx], aug_rng, cfg.min_scale, cfg.flip_p)
        else:
            v1 = samples[idx]

        def rela_term():
            z, cache = online.forward(v1.reshape(len(idx), -1), return_cache=True)
            loss = rela_loss(z, state.W, state.b, Y[idx])
            dz, dW, db = rela_grad(z, state.W, state.b, Y[idx])
            grads, _ = online.backward(cache, dz)
            return "rela", loss, lambda: rela_opt.step(online.params + [state.W, state.b], grads + [dW, db])

        def ssl_term():
            v2 = augment_batch(samples[idx], aug_rng, cfg.min_scale, cfg.flip_p) if cfg.augment else v1
            loss, grads, pgrads = _ssl_step(cfg.ssl, online, target, pred, v1, v2)

            def apply():
                ssl_opt.step(online.params, grads)
                if pgrads is not None:
                    pred_opt.step([pred.W, pred.b], pgrads)
                if cfg.ssl.method == "byol":
                    ema_update(target.params, online.params, cfg.ssl.ema_momentum)
            return "ssl", loss, apply

        lam_used = state.lam
        phase, loss, apply = combined_loss(state, rela_term, ssl_term)
        if not math.isfinite(loss):
            raise NonFiniteLossError(step, loss)
        apply()
        state = scheduler_step(state, loss if lam_used == 1 else None)
        if lam_used == 1 and state.lam == 0:
            flip_step = step
        log.append(LogRecord(step, epoch, phase, loss, lam_used, state.ell_s, state.ell_f))
        if cfg.probe_every and step % cfg.probe_every == 0:
            probe(step)

    if probe_set is not None and cfg.probe_every and (not probes or probes[-1][0] != step):
        probe(step)
    return RunResult(online, log, state, flip_step, probes, cfg.seed)


# --- desk-scale acceleration pipeline -----------------------------------------------


def train_classifier(net: MLP, X: np.ndarray, y: np.ndarray, epochs: int, lr: float, batch_size: int,
                     rng: RngStream) -> MLP:
    """Supervised softmax cross-entropy training of ``net`` in place."""
    opt = make_optimizer("adam", lr)
    n = X.shape[0]
    rows = np.arange(batch_size)
    for _ in range(epochs):
        order = rng.permutation(n)
        for i in range(0, n, batch_size):
            idx = order[i : i + batch_size]
            out, acts = net.forward(X[idx], return_cache=True)
            P = softmax(out, axis=1)
            P[rows[: len(idx)], y[idx]] -= 1.0
            grads, _ = net.backward(acts, P / len(idx))
            opt.step(net.params, grads)
    return net


@dataclass
class AccelConfig:
    n_train: int = 2000
    n_probe: int = 1000
    signal: float = 0.03
    data_seed: int = 100
    target_dim: int = 16
    encoder_hidden: tuple = (64, 64)
    prior_hidden: tuple = (64, 32)
    prior_epochs: int = 30
    prior_lr: float = 1e-3
    accuracy: float = 0.9
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=100, max_steps=1000, probe_every=50))

    def __post_init__(self):
        if isinstance(self.train, dict):
            self.train = TrainConfig(**self.train)
        self.encoder_hidden = tuple(self.encoder_hidden)
        self.prior_hidden = tuple(self.prior_hidden)


def build_task(cfg: AccelConfig):
    """Training images, probe images and the PCA-reduced oracle target store."""
    data = make_image_mixture(cfg.n_train, RngStream(cfg.data_seed, 1), signal=cfg.signal)
    probe = make_image_mixture(cfg.n_probe, RngStream(cfg.data_seed, 2), signal=cfg.signal)
    sizes = [data.flat.shape[1], *cfg.prior_hidden, 2]
    net = MLP.init(sizes, RngStream(cfg.data_seed, 3))
    train_classifier(net, data.flat, data.labels, cfg.prior_epochs, cfg.prior_lr, 64, RngStream(cfg.data_seed, 4))
    prior = mlp_prior(net, "oracle-mlp", layer="hidden")
    R = generate_targets(prior, data.images)
    pca, reduced = reduce_targets(R, min(cfg.target_dim, R.shape[1]))
    params = {"n_train": cfg.n_train, "signal": cfg.signal, "prior_hidden": list(cfg.prior_hidden)}
    store = TargetStore(reduced, prior.id, cfg.data_seed, params, pca)
    return data, probe, store, prior


def run_pair(cfg: AccelConfig, seed: int, data, probe, store):
    """Same encoder init trained with and without the transport phase."""
    results = {}
    for use in (True, False):
        enc = make_encoder(data.flat.shape[1], store.cols, RngStream(seed, 5), cfg.encoder_hidden)
        tcfg = replace(cfg.train, use_rela=use, seed=seed)
        results["rela" if use else "ssl"] = train_rela(
            enc, data.images, store, tcfg, RngStream(seed, 6), (probe.images, probe.labels)
        )
    return results
