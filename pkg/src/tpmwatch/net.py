"""Shared-trunk MLP with one sigmoid output per task, written directly in numpy.

Every model in the package (TPM, the deconfounded variant and the three
baselines) uses this network; only the number of heads and the loss
attached to the head outputs change.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

__all__ = [
    "EPS",
    "DivergenceError",
    "NetConfig",
    "OptimizerConfig",
    "MultiHeadNet",
    "forward",
    "backward",
    "sgd_step",
    "init_optimizer",
    "run_minibatches",
]

EPS = 1e-7


class DivergenceError(RuntimeError):
    """Raised when gradients or losses stop being finite."""


@dataclass
class NetConfig:
    input_dim: int
    hidden_dims: tuple[int, ...] = (64, 32)
    num_heads: int = 1
    seed: int = 0
    activation: str = "relu"

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        problems = []
        if self.input_dim < 1:
            problems.append("input_dim must be >= 1")
        if self.num_heads < 1:
            problems.append("num_heads must be >= 1")
        if not self.hidden_dims or min(self.hidden_dims) < 1:
            problems.append("hidden_dims must be a non-empty list of positive sizes")
        if self.activation not in _ACTIVATIONS:
            problems.append(f"activation must be one of {sorted(_ACTIVATIONS)}")
        if problems:
            raise ValueError("; ".join(problems))

    def to_dict(self):
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


@dataclass
class OptimizerConfig:
    name: str = "adam"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.name not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.name!r}")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z, a):
    return (z > 0).astype(z.dtype)


def _tanh_grad(z, a):
    return 1.0 - a * a


_ACTIVATIONS = {"relu": (_relu, _relu_grad), "tanh": (np.tanh, _tanh_grad)}


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass(eq=False)
class MultiHeadNet:
    """Parameters of the trunk and heads.

    ``params`` holds ``[W_1, b_1, ..., W_L, b_L, W_head, b_head]`` where
    ``W_i`` has shape ``(fan_in, fan_out)``; the last pair maps the final
    hidden layer to ``num_heads`` logits.
    """

    config: NetConfig
    params: list[np.ndarray] = field(default=None)

    def __post_init__(self):
        if self.params is None:
            self.params = _init_params(self.config)
        expected = self.shapes()
        got = [p.shape for p in self.params]
        if got != expected:
            raise ValueError(f"parameter shapes {got} do not match config {expected}")

    def shapes(self) -> list[tuple[int, ...]]:
        dims = [self.config.input_dim, *self.config.hidden_dims, self.config.num_heads]
        out = []
        for a, b in zip(dims[:-1], dims[1:]):
            out += [(a, b), (b,)]
        return out

    @property
    def num_heads(self) -> int:
        return self.config.num_heads

    def copy(self) -> MultiHeadNet:
        return MultiHeadNet(self.config, [p.copy() for p in self.params])

    def zero_grads(self) -> list[np.ndarray]:
        return [np.zeros_like(p) for p in self.params]

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, vec) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        i = 0
        for p in self.params:
            p[...] = vec[i:i + p.size].reshape(p.shape)
            i += p.size

    def __call__(self, x):
        return forward(self, x)


def _init_params(cfg: NetConfig) -> list[np.ndarray]:
    rng = np.random.default_rng(cfg.seed)
    dims = [cfg.input_dim, *cfg.hidden_dims, cfg.num_heads]
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        params.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
        params.append(np.zeros(fan_out))
    return params


def forward(net: MultiHeadNet, x, return_cache: bool = False):
    """Head probabilities for one feature vector or a batch of rows.

    Outputs are clipped to ``[EPS, 1 - EPS]``.  With ``return_cache`` the
    intermediate activations needed by :func:`backward` are returned too.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != net.config.input_dim:
        raise ValueError(f"expected {net.config.input_dim} features, got shape {x.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite input features")

    act, _ = _ACTIVATIONS[net.config.activation]
    zs, acts = [], [X]
    a = X
    p = net.params
    for i in range(0, len(p) - 2, 2):
        z = a @ p[i] + p[i + 1]
        a = act(z)
        zs.append(z)
        acts.append(a)
    logits = a @ p[-2] + p[-1]
    raw = _sigmoid(logits)
    probs = np.clip(raw, EPS, 1.0 - EPS)
    out = probs[0] if single else probs
    if return_cache:
        return out, (zs, acts, raw, single)
    return out


def backward(net: MultiHeadNet, cache, upstream) -> list[np.ndarray]:
    """Gradients of ``sum(upstream * head_outputs)`` with respect to every parameter.

    ``upstream`` has the same shape as the forward output.  Heads sitting on
    the clip limits pass no gradient.
    """
    zs, acts, raw, single = cache
    g = np.asarray(upstream, dtype=np.float64)
    g = g[None, :] if single else g
    inside = (raw > EPS) & (raw < 1.0 - EPS)
    delta = g * raw * (1.0 - raw) * inside

    _, dact = _ACTIVATIONS[net.config.activation]
    p = net.params
    grads = [None] * len(p)
    grads[-2] = acts[-1].T @ delta
    grads[-1] = delta.sum(axis=0)
    back = delta @ p[-2].T
    for layer in range(len(zs) - 1, -1, -1):
        dz = back * dact(zs[layer], acts[layer + 1])
        grads[2 * layer] = acts[layer].T @ dz
        grads[2 * layer + 1] = dz.sum(axis=0)
        if layer:
            back = dz @ p[2 * layer].T
    return grads


def init_optimizer(net: MultiHeadNet, opt: OptimizerConfig | None = None) -> dict:
    opt = opt or OptimizerConfig()
    state = {"step": 0}
    if opt.name == "adam":
        state["m"] = net.zero_grads()
        state["v"] = net.zero_grads()
    return state


def sgd_step(net: MultiHeadNet, grads, state: dict, opt: OptimizerConfig | None = None):
    """Apply one in-place optimizer update; returns ``(net, state)``.

    Adam by default (bias-corrected moments); ``opt.name == "sgd"`` gives a
    plain gradient step.
    """
    opt = opt or OptimizerConfig()
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise DivergenceError("diverged: non-finite gradient")
    state["step"] += 1
    if opt.name == "sgd":
        for p, g in zip(net.params, grads):
            p -= opt.lr * g
        return net, state

    t = state["step"]
    c1 = 1.0 - opt.beta1 ** t
    c2 = 1.0 - opt.beta2 ** t
    for p, g, m, v in zip(net.params, grads, state["m"], state["v"]):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * g * g
        p -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return net, state


def run_minibatches(net: MultiHeadNet, X, n_epochs: int, batch_size: int, seed: int,
                    step, opt: OptimizerConfig | None = None, on_epoch=None):
    """Shuffle-and-step loop used by every trainer in the package.

    ``step(outputs, idx)`` receives the head outputs for the rows ``idx`` and
    returns ``(parts, grad)``: a dict of per-sample loss arrays (key
    ``"total"`` is required) and d(mean loss)/d(outputs).  Epoch means of
    every part are passed to ``on_epoch(epoch, means)``.
    """
    rng = np.random.default_rng(seed)
    state = init_optimizer(net, opt)
    n = X.shape[0]
    for epoch in range(n_epochs):
        order = rng.permutation(n)
        sums = {}
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            out, cache = forward(net, X[idx], return_cache=True)
            parts, grad = step(out, idx)
            if not np.all(np.isfinite(parts["total"])):
                raise DivergenceError(f"diverged: non-finite loss in epoch {epoch}")
            sgd_step(net, backward(net, cache, grad), state, opt)
            for key, v in parts.items():
                sums[key] = sums.get(key, 0.0) + float(np.sum(v))
        if on_epoch is not None:
            on_epoch(epoch, {key: v / n for key, v in sums.items()})
    return net
