"""Tree-based progressive regression: leaf distribution, objective and training.

The head outputs of a :class:`~tpmwatch.net.MultiHeadNet` are read as
conditional probabilities of taking the right branch at each internal node.
Multiplying them along a root-to-leaf path gives a multinomial over the
leaves; its mean over leaf midpoints is the watch-time prediction and its
standard deviation is the uncertainty that the objective penalises.

The objective maximised per sample is::

    a1 * log p(leaf of T) - a2 * std(T_hat) - a3 * (E[T_hat] - T)^2

and everything here minimises its negation, averaged over the batch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, asdict

import numpy as np

from .net import MultiHeadNet, OptimizerConfig, forward, run_minibatches
from .ranks import DecompositionTree, leaf_of

__all__ = [
    "LeafDistribution",
    "LossWeights",
    "TrainConfig",
    "TrainLog",
    "leaf_distribution",
    "log_likelihood",
    "loss",
    "train",
    "predict",
    "ensemble_predict",
    "leaf_means",
    "TpmModel",
]

log = logging.getLogger(__name__)

STD_SMOOTHING = 1e-12


@dataclass
class LeafDistribution:
    probs: np.ndarray
    expectation: np.ndarray | float
    variance: np.ndarray | float

    @property
    def std(self):
        return np.sqrt(self.variance)

    def argmax_leaf(self):
        return np.argmax(self.probs, axis=-1)


@dataclass
class LossWeights:
    alpha1: float = 1.0
    alpha2: float = 1.0
    alpha3: float = 1.0

    def __post_init__(self):
        w = (self.alpha1, self.alpha2, self.alpha3)
        if min(w) < 0:
            raise ValueError("loss weights must be non-negative")
        if max(w) == 0:
            raise ValueError("at least one loss weight must be positive")


@dataclass
class TrainConfig:
    weights: LossWeights = field(default_factory=LossWeights)
    batch_size: int = 256
    epochs: int = 10
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.optimizer, dict):
            self.optimizer = OptimizerConfig(**self.optimizer)
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def to_dict(self):
        return asdict(self)


@dataclass
class TrainLog:
    """Per-epoch means of the loss components, one record per epoch."""

    records: list[dict] = field(default_factory=list)

    def append(self, **rec):
        self.records.append(rec)

    def column(self, key):
        return np.array([r[key] for r in self.records])

    def __len__(self):
        return len(self.records)

    def __eq__(self, other):
        return isinstance(other, TrainLog) and self.records == other.records


def _as_2d(head_probs):
    o = np.asarray(head_probs, dtype=np.float64)
    return (o[None, :], True) if o.ndim == 1 else (o, False)


def _log_leaf_probs(tree: DecompositionTree, o: np.ndarray) -> np.ndarray:
    if o.shape[-1] != tree.num_heads:
        raise ValueError(f"expected {tree.num_heads} head outputs, got {o.shape[-1]}")
    return np.log(o) @ tree.right.T + np.log1p(-o) @ tree.left.T


def _moments(probs, mids):
    # elementwise products + row sums so that 1-D and per-row midpoints
    # give bit-identical results
    e = (probs * mids).sum(axis=-1)
    dev = mids - e[..., None]
    var = (probs * dev * dev).sum(axis=-1)
    return e, np.maximum(var, 0.0), dev


def leaf_distribution(tree: DecompositionTree, head_probs, midpoints=None) -> LeafDistribution:
    """Multinomial over leaves from head outputs (one row per sample, or a single vector).

    ``midpoints`` overrides the tree's leaf midpoints; it may be per-row.
    """
    o, single = _as_2d(head_probs)
    mids = tree.midpoints if midpoints is None else np.asarray(midpoints, dtype=np.float64)
    probs = np.exp(_log_leaf_probs(tree, o))
    e, var, _ = _moments(probs, mids)
    if single:
        return LeafDistribution(probs[0], float(e[0]), float(var[0]))
    return LeafDistribution(probs, e, var)


def log_likelihood(tree: DecompositionTree, head_probs, target_leaf):
    """Sum of log branch probabilities along the path to ``target_leaf``."""
    o, single = _as_2d(head_probs)
    k = np.atleast_1d(np.asarray(target_leaf))
    if np.any((k < 0) | (k >= tree.leaf_count)):
        raise IndexError("target leaf out of range")
    ll = (np.log(o) * tree.right[k]).sum(axis=1) + (np.log1p(-o) * tree.left[k]).sum(axis=1)
    return float(ll[0]) if single else ll


def _loss_terms(tree, o, target, leaves, mids, weights: LossWeights):
    """Per-sample loss components and d(mean loss)/d(head output)."""
    n = o.shape[0]
    R, L = tree.right, tree.left
    log_p = _log_leaf_probs(tree, o)
    probs = np.exp(log_p)
    e, var, dev = _moments(probs, mids)
    std = np.sqrt(var + STD_SMOOTHING)
    resid = e - target

    nll = -(log_p[np.arange(n), leaves])
    total = weights.alpha1 * nll + weights.alpha2 * std + weights.alpha3 * resid * resid

    inv_o, inv_q = 1.0 / o, 1.0 / (1.0 - o)

    def dsum(w):
        # d/d o_h of sum_k w_k p_k, using dp_k/do_h = p_k (R_kh / o_h - L_kh / (1 - o_h))
        pw = probs * w
        return (pw @ R) * inv_o - (pw @ L) * inv_q

    d_nll = -(R[leaves] * inv_o - L[leaves] * inv_q)
    d_e = dsum(mids)
    d_var = dsum(dev * dev)
    grad = (weights.alpha1 * d_nll
            + weights.alpha2 * d_var / (2.0 * std[:, None])
            + weights.alpha3 * 2.0 * resid[:, None] * d_e)
    parts = {"nll": nll, "std": std, "sq_err": resid * resid, "total": total}
    return parts, grad / n


def loss(tree: DecompositionTree, head_probs, target, weights: LossWeights | None = None):
    """Negated objective and its gradient with respect to the head outputs.

    Works on a single sample (vector of head outputs, scalar target) or a
    batch, where the loss is the batch mean.
    """
    weights = weights or LossWeights()
    o, single = _as_2d(head_probs)
    t = np.atleast_1d(np.asarray(target, dtype=np.float64))
    if not np.all(np.isfinite(t)):
        raise ValueError("non-finite target")
    leaves = np.atleast_1d(leaf_of(tree.scale, tree, t))
    parts, grad = _loss_terms(tree, o, t, leaves, tree.midpoints, weights)
    value = float(parts["total"].mean())
    return value, (grad[0] if single else grad)


def batch_loss(tree, head_probs, target, leaves, mids, weights):
    """Like :func:`loss` with leaves and midpoints supplied per row."""
    o, _ = _as_2d(head_probs)
    parts, grad = _loss_terms(tree, o, np.asarray(target, float), np.asarray(leaves), mids, weights)
    return parts, grad


def _check_xy(X, T):
    X = np.asarray(X, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != T.size:
        raise ValueError(f"feature matrix {X.shape} does not match {T.size} labels")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(T)):
        raise ValueError("features and watch times must be finite")
    return X, T


def fit(net, X, T, tree, config: TrainConfig, leaves=None, mids=None):
    """Minibatch loop shared by :func:`train` and the grouped trainer.

    ``leaves`` and ``mids`` may be given per row (shape ``(N,)`` and
    ``(N, m)``); by default they come from ``tree``.
    """
    X, T = _check_xy(X, T)
    if leaves is None:
        leaves = leaf_of(tree.scale, tree, T)
    per_row = mids is not None and np.ndim(mids) == 2
    if mids is None:
        mids = tree.midpoints

    def step(o, idx):
        return batch_loss(tree, o, T[idx], leaves[idx], mids[idx] if per_row else mids, config.weights)

    history = TrainLog()

    def on_epoch(epoch, means):
        history.append(epoch=epoch, nll=means["nll"], std_term=means["std"],
                       mse_term=means["sq_err"], total=means["total"])
        log.debug("epoch %d: %s", epoch, history.records[-1])

    run_minibatches(net, X, config.epochs, config.batch_size, config.seed, step,
                    config.optimizer, on_epoch)
    return net, history


def leaf_means(tree: DecompositionTree, T) -> np.ndarray:
    """Mean watch time of the samples in each leaf; empty leaves keep their midpoint."""
    T = np.asarray(T, dtype=np.float64).ravel()
    leaves = leaf_of(tree.scale, tree, T)
    counts = np.bincount(leaves, minlength=tree.leaf_count)
    sums = np.bincount(leaves, weights=T, minlength=tree.leaf_count)
    return np.where(counts > 0, sums / np.maximum(counts, 1), tree.midpoints)


def train(X, T, tree: DecompositionTree, net: MultiHeadNet, config: TrainConfig | None = None,
          leaf_values=None):
    """Fit ``net`` in place on ``(X, T)``; returns ``(net, TrainLog)``.

    ``leaf_values`` replaces the interval midpoints as the per-leaf watch
    time in the objective (for example :func:`leaf_means`).
    """
    config = config or TrainConfig()
    if net.num_heads != tree.num_heads:
        raise ValueError(f"net has {net.num_heads} heads, tree needs {tree.num_heads}")
    if leaf_values is not None:
        leaf_values = _check_leaf_values(tree, leaf_values)
    return fit(net, X, T, tree, config, mids=leaf_values)


def _check_leaf_values(tree, values):
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (tree.leaf_count,) or not np.all(np.isfinite(values)):
        raise ValueError(f"leaf values must be {tree.leaf_count} finite numbers")
    return values


def predict(tree: DecompositionTree, net: MultiHeadNet, x, midpoints=None) -> LeafDistribution:
    return leaf_distribution(tree, forward(net, x), midpoints)


@dataclass(eq=False)
class TpmModel:
    """A trained tree/net pair.

    ``leaf_values`` (default: the interval midpoints) is the watch time each
    leaf stands for when moments are taken.
    """

    tree: DecompositionTree
    net: MultiHeadNet
    leaf_values: np.ndarray | None = None

    def __post_init__(self):
        if self.leaf_values is not None:
            self.leaf_values = _check_leaf_values(self.tree, self.leaf_values)

    def predict(self, X) -> LeafDistribution:
        return predict(self.tree, self.net, X, self.leaf_values)


def ensemble_predict(models, prior, x):
    """Prior-weighted mean of the expectations of several ``(tree, net)`` pairs."""
    prior = np.asarray(prior, dtype=np.float64)
    if len(models) != prior.size:
        raise ValueError(f"{len(models)} models but {prior.size} prior weights")
    if np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-9:
        raise ValueError("prior must be a probability vector")
    if len(models) == 1:
        tree, net = models[0]
        return predict(tree, net, x).expectation
    out = 0.0
    for w, (tree, net) in zip(prior, models):
        out = out + w * predict(tree, net, x).expectation
    return out
