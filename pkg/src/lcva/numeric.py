"""Dense numeric kernels: small MLPs with hand-written backprop, Adam, and
log-density helpers.

Everything is float64. Matrices are plain numpy arrays; weight matrices are
stored ``(out, in)`` so a layer computes ``x @ W.T + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, NumericError, ShapeError

PROB_CLAMP = 1e-7
SIGMA_FLOOR = 1e-4
LOG_2PI = float(np.log(2.0 * np.pi))


class SeededRng:
    """Counter-based (Philox) random stream.

    Child streams from :meth:`derive` depend only on the root seed and the
    key path, so drawing from one child never perturbs another.
    """

    def __init__(self, seed: int, key: Sequence[int] = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def derive(self, *key: int) -> "SeededRng":
        return SeededRng(self.seed, self.key + tuple(key))

    def normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, low=0.0, high=1.0, size=None) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None) -> np.ndarray:
        return self._gen.integers(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def bernoulli(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        return (self._gen.uniform(size=p.shape) < p).astype(np.float64)


def relu(x):
    return np.maximum(x, 0.0)


def softplus(x):
    return np.logaddexp(0.0, x)


def logistic(x):
    # Numerically stable on both tails.
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def inverse_softplus(y: float) -> float:
    return float(y + np.log(-np.expm1(-y)))


@dataclass
class MlpGrads:
    weights: list
    biases: list
    input: np.ndarray

    def parameters(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


@dataclass
class MlpNet:
    """Fully connected net: ReLU on hidden layers, identity on the output."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeError("need one bias per weight matrix and at least one layer")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ShapeError(f"layer {i}: weight {w.shape} does not match bias {b.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise ShapeError(f"layer {i}: input dim {w.shape[1]} does not chain "
                                 f"with previous output {self.weights[i - 1].shape[0]}")

    @classmethod
    def create(cls, layer_dims: Sequence[int], rng: SeededRng) -> "MlpNet":
        if len(layer_dims) < 2:
            raise ShapeError("layer_dims needs an input and an output size")
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases)

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def parameters(self) -> list:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "MlpNet":
        return MlpNet([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def forward(self, x: np.ndarray):
        """Return ``(output, cache)``; ``x`` is ``(in,)`` or ``(batch, in)``."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise ShapeError(f"expected input dim {self.input_dim}, got {x.shape[-1]}")
        acts = [x]
        pre = []
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ w.T + b
            pre.append(a)
            h = a if i == last else relu(a)
            acts.append(h)
        return h, (acts, pre)

    def backward(self, cache, upstream: np.ndarray) -> MlpGrads:
        acts, pre = cache
        g = np.asarray(upstream, dtype=np.float64)
        if g.shape != acts[-1].shape:
            raise ShapeError(f"upstream grad shape {g.shape} != output shape {acts[-1].shape}")
        n_layers = len(self.weights)
        gw = [None] * n_layers
        gb = [None] * n_layers
        for i in range(n_layers - 1, -1, -1):
            if i != n_layers - 1:
                g = g * (pre[i] > 0)
            h_in = acts[i]
            if g.ndim == 1:
                gw[i] = np.outer(g, h_in)
                gb[i] = g.copy()
            else:
                gw[i] = g.T @ h_in
                gb[i] = g.sum(axis=0)
            g = g @ self.weights[i]
        return MlpGrads(gw, gb, g)


def mlp_forward(net: MlpNet, x) -> np.ndarray:
    return net.forward(x)[0]


def mlp_backward(net: MlpNet, x, upstream_grad) -> MlpGrads:
    """Gradients of ``upstream_grad . net(x)`` w.r.t. every parameter and ``x``.

    Batched inputs have their parameter gradients summed over rows.
    """
    _, cache = net.forward(x)
    return net.backward(cache, upstream_grad)


@dataclass
class AdamState:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **kw) -> "AdamState":
        return cls(first_moment=[np.zeros_like(p) for p in params],
                   second_moment=[np.zeros_like(p) for p in params], **kw)


def adam_step(state: AdamState, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
    """One bias-corrected Adam descent step, applied to ``params`` in place."""
    if not state.first_moment:
        state.first_moment = [np.zeros_like(p) for p in params]
        state.second_moment = [np.zeros_like(p) for p in params]
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise ShapeError("params, grads and optimizer state differ in length")
    for i, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape or p.shape != state.first_moment[i].shape:
            raise ShapeError(f"parameter {i}: shape {p.shape} vs grad {np.shape(g)}")
        bad = ~np.isfinite(g)
        if bad.any():
            flat = int(np.flatnonzero(bad.ravel())[0])
            raise NumericError(f"non-finite gradient in parameter {i} at flat index {flat}")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / corr1) / (np.sqrt(v / corr2) + state.epsilon)


def gaussian_log_prob(x, mu, sigma):
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(~(sigma > 0)):
        raise DomainError("gaussian_log_prob requires sigma > 0")
    z = (np.asarray(x, dtype=np.float64) - mu) / sigma
    out = -0.5 * LOG_2PI - np.log(sigma) - 0.5 * z * z
    return float(out) if np.ndim(out) == 0 else out


def clamp_prob(p):
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def bernoulli_log_prob(t, p):
    p = np.asarray(p, dtype=np.float64)
    if np.any(~((p > 0) & (p < 1))):
        raise DomainError("bernoulli_log_prob requires 0 < p < 1; clamp first")
    t = np.asarray(t, dtype=np.float64)
    out = t * np.log(p) + (1.0 - t) * np.log1p(-p)
    return float(out) if np.ndim(out) == 0 else out


def gaussian_kl_to_standard(mu, sigma) -> float:
    """KL(N(mu, diag sigma^2) || N(0, I)), summed over the last axis."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.shape != sigma.shape:
        raise ShapeError(f"mu {mu.shape} and sigma {sigma.shape} differ")
    if np.any(~(sigma > 0)):
        raise DomainError("gaussian_kl_to_standard requires sigma > 0")
    s2 = sigma * sigma
    out = 0.5 * np.sum(mu * mu + s2 - np.log(s2) - 1.0, axis=-1)
    # Rounding can push an exact zero slightly negative.
    out = np.maximum(out, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def reparameterize(mu, sigma, rng: SeededRng | None = None, eps=None) -> np.ndarray:
    """``mu + sigma * eps`` with ``eps ~ N(0, I)`` from ``rng`` unless injected."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if mu.shape != sigma.shape:
        raise ShapeError(f"mu {mu.shape} and sigma {sigma.shape} differ")
    if np.any(sigma < 0):
        raise DomainError("reparameterize requires sigma >= 0")
    if eps is None:
        if rng is None:
            raise ValueError("need rng or eps")
        eps = rng.normal(mu.shape)
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != mu.shape:
        raise ShapeError(f"eps {eps.shape} does not match mu {mu.shape}")
    return mu + sigma * eps
