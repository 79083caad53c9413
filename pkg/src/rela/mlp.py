"""Small fully-connected ReLU networks with hand-written backprop, plus optimizers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_math import RngStream


@dataclass
class MLP:
    """Affine layers with ReLU between them and a linear output layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, sizes, rng: RngStream) -> "MLP":
        """Uniform init on +-1/sqrt(fan_in) for every weight and bias."""
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, (fan_out, fan_in)))
            biases.append(rng.uniform(-bound, bound, fan_out))
        return cls(weights, biases)

    @classmethod
    def identity(cls, dim: int) -> "MLP":
        return cls([np.eye(dim)], [np.zeros(dim)])

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "MLP":
        return MLP([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward(self, x: np.ndarray, return_cache: bool = False):
        x = np.asarray(x, dtype=np.float64)
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w.T + b
            if i < last:
                h = np.maximum(h, 0.0)
            acts.append(h)
        return (h, acts) if return_cache else h

    __call__ = forward

    def hidden(self, x: np.ndarray) -> np.ndarray:
        """Activations of the last hidden layer."""
        _, acts = self.forward(x, return_cache=True)
        return acts[-2]

    def backward(self, acts: list[np.ndarray], dout: np.ndarray):
        """Gradients (matching ``params`` order) and the input gradient."""
        n_layers = len(self.weights)
        gw: list = [None] * n_layers
        gb: list = [None] * n_layers
        g = dout
        for i in range(n_layers - 1, -1, -1):
            gw[i] = g.T @ acts[i]
            gb[i] = g.sum(axis=0)
            g = g @ self.weights[i]
            if i > 0:
                g = g * (acts[i] > 0)
        return [p for pair in zip(gw, gb) for p in pair], g


@dataclass
class Adam:
    """Adam with optional decoupled weight decay (AdamW when ``weight_decay > 0``)."""

    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.0
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            if self.weight_decay:
                p *= 1.0 - self.lr * self.weight_decay
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class SGDMomentum:
    """Heavy-ball SGD: ``buf = momentum * buf + grad; p -= lr * buf``."""

    lr: float = 0.01
    momentum: float = 0.9
    bufs: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.bufs:
            self.bufs = [np.zeros_like(p) for p in params]
        for p, g, buf in zip(params, grads, self.bufs):
            buf *= self.momentum
            buf += g
            p -= self.lr * buf


def make_optimizer(name: str, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
    if name in ("adam", "adamw"):
        return Adam(lr=lr, weight_decay=weight_decay if name == "adamw" else 0.0)
    if name == "sgd":
        return SGDMomentum(lr=lr, momentum=momentum)
    raise ValueError(f"unknown optimizer {name!r}")
