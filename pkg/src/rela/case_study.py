"""Bimodal Gaussian mixture case study.

Two settings live here and keep their own label conventions:

* the tiny sigmoid network trained with momentum SGD on MSE, labels in {0, 1};
* the one-parameter linear classifier trained by online SGD, labels in {-1, +1},
  whose expected squared error has a closed form.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core_math import (
    RngStream,
    generalized_gaussian_variance,
    sample_generalized_gaussian,
    sigmoid,
)


_TINY = np.nextafter(0.0, 1.0)
_ONE_MINUS = np.nextafter(1.0, 0.0)


class DivergenceError(RuntimeError):
    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value} at step {step}")
        self.step = step
        self.value = value


@dataclass(frozen=True)
class MixtureSpec:
    mu1: float = 1.0
    mu2: float = 2.0
    sigma: float = 0.5
    dim: int = 2
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if not self.mu1 < self.mu2:
            raise ValueError(f"need mu1 < mu2, got {self.mu1}, {self.mu2}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.beta is not None and self.beta <= 0:
            raise ValueError("beta must be positive")


@dataclass
class LabeledSet:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.float64)
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"shape mismatch: X {self.X.shape}, y {self.y.shape}")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("labels must be finite")

    def __len__(self):
        return self.X.shape[0]


@dataclass
class TinyNet:
    """``sigmoid(theta1 . relu(theta2 x + theta3) + theta4)``."""

    theta2: np.ndarray  # (hidden, dim)
    theta3: np.ndarray  # (hidden,)
    theta1: np.ndarray  # (hidden,)
    theta4: float

    @classmethod
    def init(cls, dim: int, rng: RngStream, hidden: int = 50) -> "TinyNet":
        b_in = 1.0 / math.sqrt(dim)
        b_out = 1.0 / math.sqrt(hidden)
        return cls(
            theta2=rng.uniform(-b_in, b_in, (hidden, dim)),
            theta3=rng.uniform(-b_in, b_in, hidden),
            theta1=rng.uniform(-b_out, b_out, hidden),
            theta4=float(rng.uniform(-b_out, b_out)),
        )

    @classmethod
    def zeros(cls, dim: int, hidden: int = 50) -> "TinyNet":
        return cls(np.zeros((hidden, dim)), np.zeros(hidden), np.zeros(hidden), 0.0)

    @property
    def dim(self) -> int:
        return self.theta2.shape[1]

    @property
    def hidden(self) -> int:
        return self.theta2.shape[0]

    def flat(self) -> np.ndarray:
        return np.concatenate(
            [self.theta2.ravel(), self.theta3, self.theta1, [self.theta4]]
        )

    @classmethod
    def from_flat(cls, v: np.ndarray, dim: int, hidden: int) -> "TinyNet":
        v = np.asarray(v, dtype=np.float64)
        k = hidden * dim
        return cls(
            v[:k].reshape(hidden, dim).copy(),
            v[k : k + hidden].copy(),
            v[k + hidden : k + 2 * hidden].copy(),
            float(v[k + 2 * hidden]),
        )

    def blocks(self) -> list[slice]:
        k = self.hidden * self.dim
        h = self.hidden
        return [slice(0, k), slice(k, k + h), slice(k + h, k + 2 * h), slice(k + 2 * h, k + 2 * h + 1)]

    def copy(self) -> "TinyNet":
        return TinyNet.from_flat(self.flat(), self.dim, self.hidden)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        # float64 sigmoid rounds to exactly 0 or 1 for |z| > ~37; keep the open interval
        out = sigmoid(self.hidden_features(X) @ self.theta1 + self.theta4)
        return np.clip(out, _TINY, _ONE_MINUS)

    def hidden_features(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        # in-place ops: allocation dominates at these sizes
        h = X @ self.theta2.T
        h += self.theta3
        return np.maximum(h, 0.0, out=h)


def tiny_forward(net: TinyNet, x) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.dim,):
        raise ValueError(f"expected input of shape ({net.dim},), got {x.shape}")
    return float(net(x[None, :])[0])


def mse_loss_and_grad(net: TinyNet, X: np.ndarray, y: np.ndarray):
    """Mean squared error over a batch and its gradient as a flat vector."""
    pre = X @ net.theta2.T + net.theta3
    h = np.maximum(pre, 0.0)
    p = sigmoid(h @ net.theta1 + net.theta4)
    r = p - y
    loss = float(np.mean(r * r))
    dz = (2.0 / len(y)) * r * p * (1.0 - p)
    g1 = h.T @ dz
    g4 = dz.sum()
    dpre = np.outer(dz, net.theta1) * (pre > 0)
    g2 = dpre.T @ X
    g3 = dpre.sum(axis=0)
    return loss, np.concatenate([g2.ravel(), g3, g1, [g4]])


def mse(net: TinyNet, data: LabeledSet) -> float:
    r = net(data.X) - data.y
    return float(np.mean(r * r))


def make_mixture(spec: MixtureSpec, n: int, rng: RngStream) -> LabeledSet:
    """``y ~ Bernoulli(1/2)``; ``x = (1 - y) x0 + y x1`` with isotropic Gaussian components."""
    if n < 1:
        raise ValueError("n must be >= 1")
    y = (rng.random(n) < 0.5).astype(np.float64)
    noise = rng.normal(0.0, 1.0, (n, spec.dim))
    centers = np.where(y[:, None] > 0.5, spec.mu2, spec.mu1)
    return LabeledSet(centers + spec.sigma * noise, y)


def relabel(data: LabeledSet, rho: float, prior: TinyNet) -> LabeledSet:
    """Soft labels ``rho * prior(x) + (1 - rho) * y``."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must lie in [0, 1], got {rho}")
    if prior.dim != data.X.shape[1]:
        raise ValueError("prior input dimension does not match the data")
    return LabeledSet(data.X, rho * prior(data.X) + (1.0 - rho) * data.y)


@dataclass(frozen=True)
class SgdConfig:
    steps: int = 1000
    batch_size: int = 1
    learning_rate: float = 0.002
    momentum: float = 0.98

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ValueError("steps and batch_size must be >= 1")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


@dataclass
class Trajectory:
    steps: np.ndarray
    params: np.ndarray  # (steps + 1, n_params)
    train_mse: np.ndarray
    val_mse: np.ndarray
    dim: int = 0
    hidden: int = 0

    def __len__(self):
        return len(self.steps)

    def net_at(self, k: int) -> TinyNet:
        return TinyNet.from_flat(self.params[k], self.dim, self.hidden)

    def to_csv(self, path) -> None:
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["step", "train_mse", "val_mse"])
            for s, a, b in zip(self.steps, self.train_mse, self.val_mse):
                w.writerow([int(s), repr(float(a)), repr(float(b))])
        tmp.replace(path)


def train_tiny(
    data: LabeledSet,
    val: LabeledSet,
    cfg: SgdConfig,
    rng: RngStream,
    net: TinyNet | None = None,
    hidden: int = 50,
    train_eval_rows: int = 1000,
) -> tuple[TinyNet, Trajectory]:
    """Momentum SGD on MSE, recording train and validation MSE after every update.

    Mini-batches are drawn from per-epoch shuffles of ``data``.  Record ``k``
    holds the parameters after ``k`` updates (record 0 is the initialisation).
    Training MSE is measured on the first ``train_eval_rows`` training rows.
    """
    if len(data) == 0 or len(val) == 0:
        raise ValueError("training and validation sets must be non-empty")
    if net is None:
        net = TinyNet.init(data.X.shape[1], rng, hidden)
    dim, hid = net.dim, net.hidden
    theta = net.flat()
    buf = np.zeros_like(theta)
    n = len(data)
    train_probe = LabeledSet(data.X[:train_eval_rows], data.y[:train_eval_rows])

    params = np.empty((cfg.steps + 1, theta.size))
    train_hist = np.empty(cfg.steps + 1)
    val_hist = np.empty(cfg.steps + 1)

    def record(k, cur):
        params[k] = theta
        train_hist[k] = mse(cur, train_probe)
        val_hist[k] = mse(cur, val)

    record(0, net)
    order = rng.permutation(n)
    pos = 0
    for step in range(1, cfg.steps + 1):
        if pos + cfg.batch_size > n:
            order = rng.permutation(n)
            pos = 0
        idx = order[pos : pos + cfg.batch_size]
        pos += cfg.batch_size
        cur = TinyNet.from_flat(theta, dim, hid)
        loss, grad = mse_loss_and_grad(cur, data.X[idx], data.y[idx])
        if not math.isfinite(loss) or not np.all(np.isfinite(grad)):
            raise DivergenceError(step, loss)
        buf = cfg.momentum * buf + grad
        theta = theta - cfg.learning_rate * buf
        cur = TinyNet.from_flat(theta, dim, hid)
        record(step, cur)
        if not math.isfinite(val_hist[step]):
            raise DivergenceError(step, val_hist[step])

    traj = Trajectory(np.arange(cfg.steps + 1), params, train_hist, val_hist, dim, hid)
    return TinyNet.from_flat(theta, dim, hid), traj


def steps_to_threshold(values, threshold: float) -> float:
    """First step at which ``values`` falls to ``threshold``, linearly interpolated.

    Returns ``inf`` when the threshold is never reached.
    """
    v = np.asarray(values, dtype=np.float64)
    hit = np.nonzero(v <= threshold)[0]
    if hit.size == 0:
        return math.inf
    k = int(hit[0])
    if k == 0:
        return 0.0
    a, b = v[k - 1], v[k]
    return (k - 1) + (a - threshold) / (a - b)


# --- one-parameter linear setting -------------------------------------------------


def optimal_theta(mu1: float, mu2: float) -> float:
    return -(mu1 + mu2) / 2.0


def _linear_samples(rng, mu1, mu2, alpha, beta, rho, size):
    y = np.where(rng.random(size) < 0.5, -1.0, 1.0)
    centers = np.where(y > 0, mu2, mu1)
    if alpha == 0:
        x = centers.astype(np.float64)
    else:
        x = centers + sample_generalized_gaussian(rng, 0.0, alpha, beta, size)
    if rho:
        prior = np.where(x + optimal_theta(mu1, mu2) >= 0, 1.0, -1.0)
        y = rho * prior + (1.0 - rho) * y
    return x, y


def linear_1d_sgd(
    mu1: float,
    mu2: float,
    alpha: float,
    beta: float,
    eta: float,
    steps: int,
    theta0: float,
    rho: float,
    rng: RngStream,
) -> np.ndarray:
    """Online SGD ``theta <- theta - eta * (theta + x - y')`` with one fresh sample per step.

    ``alpha = 0`` gives noiseless samples at the class means.  With ``rho > 0``
    labels are mixed with the Bayes classifier ``sign(x + theta*)``.
    Returns ``theta_0 .. theta_steps``.
    """
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    x, y = _linear_samples(rng, mu1, mu2, alpha, beta, rho, steps)
    out = np.empty(steps + 1)
    out[0] = theta = theta0
    for t in range(steps):
        theta = theta - eta * (theta + (x[t] - y[t]))
        out[t + 1] = theta
    return out


def linear_1d_sgd_runs(
    mu1, mu2, alpha, beta, eta, steps, theta0, rho, rng: RngStream, n_runs: int
) -> np.ndarray:
    """Many independent runs advanced in lockstep; returns ``(steps + 1, n_runs)``."""
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    theta = np.full(n_runs, float(theta0))
    out = np.empty((steps + 1, n_runs))
    out[0] = theta
    for t in range(steps):
        x, y = _linear_samples(rng, mu1, mu2, alpha, beta, rho, n_runs)
        theta = theta - eta * (theta + (x - y))
        out[t + 1] = theta
    return out


def closed_form_gap(mu1, mu2, alpha, beta, eta, t, theta0) -> float:
    """Exact ``E[(theta_t - theta*)^2]`` for online SGD on i.i.d. samples."""
    if not 0.0 < eta < 1.0:
        raise ValueError("eta must lie in (0, 1)")
    decay = (1.0 - eta) ** (2 * t)
    var = generalized_gaussian_variance(alpha, beta) if alpha > 0 else 0.0
    noise = var + (1.0 - (mu2 - mu1) / 2.0) ** 2
    return decay * (theta0 - optimal_theta(mu1, mu2)) ** 2 + eta / (2.0 - eta) * (1.0 - decay) * noise


def bayes_boundary(spec: MixtureSpec) -> float:
    """Equal-variance, equal-prior decision boundary (per coordinate)."""
    return (spec.mu1 + spec.mu2) / 2.0


def decision_crossings(net: TinyNet, lo: float, hi: float, n_grid: int = 2001) -> list[float]:
    """Points in ``[lo, hi]`` where a 1-D network's output crosses 0.5, refined by bisection."""
    if net.dim != 1:
        raise ValueError("decision crossings are defined for 1-D networks")
    xs = np.linspace(lo, hi, n_grid)
    below = net(xs[:, None]) < 0.5
    out = []
    for i in np.nonzero(below[:-1] != below[1:])[0]:
        a, b = xs[i], xs[i + 1]
        fa = below[i]
        for _ in range(60):
            m = 0.5 * (a + b)
            fm = net(np.array([[m]]))[0] < 0.5
            if fm == fa:
                a, fa = m, fm
            else:
                b = m
        out.append(0.5 * (a + b))
    return out


# --- loss landscape ---------------------------------------------------------------


def filter_normalized_direction(center: TinyNet, rng: RngStream) -> np.ndarray:
    """Random Gaussian direction rescaled block-wise to the norm of each parameter block."""
    theta = center.flat()
    d = rng.normal(0.0, 1.0, theta.size)
    for blk in center.blocks():
        nd = np.linalg.norm(d[blk])
        nt = np.linalg.norm(theta[blk])
        d[blk] *= nt / nd if nd > 0 else 0.0
    return d


def loss_landscape(
    center: TinyNet,
    dir1: np.ndarray,
    dir2: np.ndarray,
    half_width: float,
    grid: int,
    val: LabeledSet,
) -> np.ndarray:
    """Validation MSE on ``center + a dir1 + b dir2``; rows index ``a``, columns ``b``."""
    dir1 = np.asarray(dir1, dtype=np.float64)
    dir2 = np.asarray(dir2, dtype=np.float64)
    if not np.any(dir1) or not np.any(dir2):
        raise ValueError("directions must be nonzero")
    theta = center.flat()
    coords = np.linspace(-half_width, half_width, grid) if grid > 1 else np.zeros(1)
    out = np.empty((grid, grid))
    for i, a in enumerate(coords):
        for j, b in enumerate(coords):
            net = TinyNet.from_flat(theta + a * dir1 + b * dir2, center.dim, center.hidden)
            out[i, j] = mse(net, val)
    return out


def write_landscape_csv(path, grid_values: np.ndarray, half_width: float) -> None:
    g = grid_values.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["a_min", "a_max", "b_min", "b_max", "grid"])
        w.writerow([repr(-float(half_width)), repr(float(half_width)),
                    repr(-float(half_width)), repr(float(half_width)), g])
        for row in grid_values:
            w.writerow([repr(float(v)) for v in row])


def read_landscape_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    header = dict(zip(rows[0], rows[1]))
    values = np.array([[float(v) for v in r] for r in rows[2:]])
    return {k: float(v) for k, v in header.items()}, values


def write_landscape_csv_atomic(path, grid_values: np.ndarray, half_width: float) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    write_landscape_csv(tmp, grid_values, half_width)
    tmp.replace(path)


# --- sweeps ------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepConfig:
    """Settings shared by the Sigma and rho sweeps.

    Run ``i`` uses ``RngStream(base_seed + i)``: child stream 1 draws its
    training set and child stream 2 its initialisation and batch order.  The
    validation set is one draw from the default (Sigma = 0.5) mixture.
    """

    grid: tuple = (0.1, 0.3, 0.5, 0.8, 1.0)
    n_seeds: int = 20
    base_seed: int = 0
    n_train: int = 1000
    n_val: int = 2000
    val_seed: int = 999
    dim: int = 2
    threshold: float = 0.1
    sgd: SgdConfig = SgdConfig()
    # rho sweep only
    data_sigma: float = 1.0
    prior_sigma: float = 0.1
    prior_seed: int = 12345


@dataclass
class SweepResult:
    grid: tuple
    seeds: list[int]
    trajectories: dict  # (grid value, seed) -> Trajectory
    steps: np.ndarray  # (len(grid), n_seeds) steps to threshold
    final: np.ndarray  # (len(grid), n_seeds) validation MSE at the last step

    def medians(self):
        return np.median(self.steps, axis=1), np.median(self.final, axis=1)


def _nondecreasing(v) -> bool:
    v = np.asarray(v, dtype=np.float64)
    return bool(np.all(v[1:] >= v[:-1]))


def _run_grid(tasks, workers: int):
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda t: t(), tasks))
    return [t() for t in tasks]


def _collect(cfg: SweepConfig, grid, seeds, outs) -> SweepResult:
    trajs = {}
    steps = np.empty((len(grid), len(seeds)))
    final = np.empty((len(grid), len(seeds)))
    k = 0
    for i, g in enumerate(grid):
        for j, s in enumerate(seeds):
            tr = outs[k]
            k += 1
            trajs[(g, s)] = tr
            steps[i, j] = steps_to_threshold(tr.val_mse, cfg.threshold)
            final[i, j] = tr.val_mse[-1]
    return SweepResult(tuple(grid), seeds, trajs, steps, final)


def validation_set(cfg: SweepConfig) -> LabeledSet:
    return make_mixture(MixtureSpec(dim=cfg.dim), cfg.n_val, RngStream(cfg.val_seed, 1))


def sigma_sweep(cfg: SweepConfig, workers: int = 1) -> SweepResult:
    val = validation_set(cfg)
    seeds = [cfg.base_seed + i for i in range(cfg.n_seeds)]

    def task(sigma, seed):
        def run():
            r = RngStream(seed)
            data = make_mixture(MixtureSpec(sigma=sigma, dim=cfg.dim), cfg.n_train, r.spawn(1))
            return train_tiny(data, val, cfg.sgd, r.spawn(2))[1]
        return run

    outs = _run_grid([task(g, s) for g in cfg.grid for s in seeds], workers)
    return _collect(cfg, cfg.grid, seeds, outs)


def train_prior(cfg: SweepConfig) -> TinyNet:
    """The relabelling prior: a tiny network trained on a low-variance mixture."""
    data = make_mixture(MixtureSpec(sigma=cfg.prior_sigma, dim=cfg.dim), cfg.n_train, RngStream(cfg.prior_seed, 1))
    net, _ = train_tiny(data, validation_set(cfg), cfg.sgd, RngStream(cfg.prior_seed, 2))
    return net


def rho_sweep(cfg: SweepConfig, workers: int = 1, prior: TinyNet | None = None) -> SweepResult:
    val = validation_set(cfg)
    prior = prior or train_prior(cfg)
    seeds = [cfg.base_seed + i for i in range(cfg.n_seeds)]

    def task(rho, seed):
        def run():
            r = RngStream(seed)
            data = make_mixture(MixtureSpec(sigma=cfg.data_sigma, dim=cfg.dim), cfg.n_train, r.spawn(1))
            return train_tiny(relabel(data, rho, prior), val, cfg.sgd, r.spawn(2))[1]
        return run

    outs = _run_grid([task(g, s) for g in cfg.grid for s in seeds], workers)
    return _collect(cfg, cfg.grid, seeds, outs)


def sweep_summary(result: SweepResult, increasing: bool) -> dict:
    """Medians per grid value plus the monotonicity flags the theory predicts."""
    med_steps, med_final = result.medians()
    sign = 1.0 if increasing else -1.0
    return {
        "grid": list(result.grid),
        "seeds": result.seeds,
        "median_steps_to_threshold": [float(v) for v in med_steps],
        "median_final_val_mse": [float(v) for v in med_final],
        "steps_monotone": _nondecreasing(sign * med_steps),
        "final_mse_monotone": _nondecreasing(sign * med_final),
    }


# --- boundary experiment -------------------------------------------------------------


def boundary_crossings(sigmas=(0.1, 0.5, 1.0), n_seeds: int = 10, n_train: int = 40000,
                       cfg: SgdConfig = SgdConfig(steps=3000, batch_size=256), base_seed: int = 0,
                       val_seed: int = 999, lo: float = 0.0, hi: float = 3.0) -> dict:
    """0.5-level crossings of 1-D tiny networks trained to convergence at each Sigma.

    Large batches over a large training set approximate the population optimum,
    which is what the boundary statement is about.
    """
    val = make_mixture(MixtureSpec(dim=1), 200, RngStream(val_seed, 1))
    out = {}
    for sigma in sigmas:
        rows = []
        for i in range(n_seeds):
            r = RngStream(base_seed + i)
            data = make_mixture(MixtureSpec(sigma=sigma, dim=1), n_train, r.spawn(1))
            net, _ = train_tiny(data, val, cfg, r.spawn(2))
            rows.append(decision_crossings(net, lo, hi))
        out[sigma] = rows
    return out
