"""Dense numerical kernels: MLPs with manual backprop, Adam, masked softmax.

Everything runs in float64 numpy. Row vectors are samples, so a linear layer
computes ``x @ W + b`` with ``W`` of shape ``(fan_in, fan_out)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericalError, ShapeError

RELU = "relu"
IDENTITY = "identity"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class Mlp:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]
    dropouts: list[float]
    # bumped on every in-place parameter update so stale caches can be detected
    version: int = 0

    def __post_init__(self):
        n = len(self.weights)
        if not (len(self.biases) == len(self.activations) == len(self.dropouts) == n):
            raise ShapeError("per-layer lists must have equal length")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeError(f"layer {i}: weight {w.shape} / bias {b.shape} mismatch")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layer {i} input {w.shape[0]} != previous output "
                                 f"{self.weights[i - 1].shape[1]}")
        for act in self.activations:
            if act not in (RELU, IDENTITY):
                raise ValueError(f"unknown activation {act!r}")
        for rate in self.dropouts:
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"dropout rate {rate} outside [0, 1)")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    def parameters(self) -> list[np.ndarray]:
        params = []
        for w, b in zip(self.weights, self.biases):
            params.extend((w, b))
        return params

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                   list(self.activations), list(self.dropouts))


def init_mlp(sizes, rng: np.random.Generator, dropout: float = 0.0,
             hidden_activation: str = RELU) -> Mlp:
    """Glorot-uniform MLP; every layer but the last gets the hidden activation
    and dropout, the last is linear."""
    sizes = list(sizes)
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    weights, biases, acts, drops = [], [], [], []
    n_layers = len(sizes) - 1
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
        last = i == n_layers - 1
        acts.append(IDENTITY if last else hidden_activation)
        drops.append(0.0 if last else dropout)
    return Mlp(weights, biases, acts, drops)


@dataclass
class MlpCache:
    net_id: int
    version: int
    inputs: list[np.ndarray] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    masks: list[np.ndarray | None] = field(default_factory=list)


def mlp_forward(net: Mlp, x: np.ndarray, train_mode: bool = False,
                rng: np.random.Generator | None = None):
    """Returns ``(output, cache)``. Dropout (inverted scaling) only in train mode."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != net.in_dim:
        raise ShapeError(f"input shape {x.shape} does not match net input dim {net.in_dim}")
    cache = MlpCache(id(net), net.version)
    h = x
    for w, b, act, rate in zip(net.weights, net.biases, net.activations, net.dropouts):
        cache.inputs.append(h)
        z = h @ w + b
        cache.pre.append(z)
        h = np.maximum(z, 0.0) if act == RELU else z
        mask = None
        if train_mode and rate > 0.0:
            if rng is None:
                raise ContractError("train-mode dropout needs an rng")
            mask = (rng.random(h.shape) >= rate) / (1.0 - rate)
            h = h * mask
        cache.masks.append(mask)
    return h, cache


def mlp_backward(net: Mlp, cache: MlpCache, output_grad: np.ndarray):
    """Returns ``(param_grads, input_grad)``; param_grads follow ``net.parameters()``."""
    if cache.net_id != id(net) or cache.version != net.version:
        raise ContractError("cache does not belong to this network state")
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != cache.pre[-1].shape:
        raise ShapeError(f"output grad {g.shape} vs output {cache.pre[-1].shape}")
    grads = []
    for i in reversed(range(len(net.weights))):
        if cache.masks[i] is not None:
            g = g * cache.masks[i]
        if net.activations[i] == RELU:
            g = g * (cache.pre[i] > 0.0)
        grads.append(g.sum(axis=0))
        grads.append(cache.inputs[i].T @ g)
        g = g @ net.weights[i].T
    grads.reverse()
    return grads, g


class Adam:
    """Adam with bias correction, updating the given arrays in place."""

    def __init__(self, params, lr=5e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise ValueError("learning rate must be positive")
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads):
        if len(grads) != len(self.params):
            raise ShapeError("gradient list does not match parameter list")
        for p, g in zip(self.params, grads):
            if g.shape != p.shape:
                raise ShapeError(f"gradient {g.shape} vs parameter {p.shape}")
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient at optimizer step {self.t + 1}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> dict:
        return {"t": self.t, "m": [m.copy() for m in self.m], "v": [v.copy() for v in self.v]}


def log_softmax(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Log-softmax along the last axis; masked-out entries get ``-inf`` and are
    left out of the partition sum."""
    z = np.asarray(logits, dtype=np.float64)
    if mask is None:
        mask = np.ones(z.shape[-1], dtype=bool)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
    if not np.all(mask.any(axis=-1)):
        raise ContractError("log_softmax over an all-masked row")
    zm = np.where(mask, z, -np.inf)
    top = zm.max(axis=-1, keepdims=True)
    shifted = zm - top
    lse = np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))
    return shifted - lse


def softmax(logits: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    return np.exp(log_softmax(logits, mask))
