"""Comparison methods built on the same trunk as TPM.

* WLR: weighted logistic regression, prediction = odds of the positive class.
* D2Q: per-duration-group quantile regression mapped back through each
  group's empirical quantile function.
* OR: ordinal regression with independent "T > g_k" heads.

Only the output layer and loss differ from TPM; the trunk comes from the
same :class:`~tpmwatch.net.NetConfig`.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import rankdata

from .deconfound import ConfounderPartition, build_partition, group_features
from .net import MultiHeadNet, NetConfig, forward, run_minibatches
from .ranks import OrdinalScale
from .tpm import TrainConfig, TrainLog

__all__ = [
    "WlrModel",
    "D2qModel",
    "OrModel",
    "wlr_train",
    "wlr_predict",
    "wlr_odds",
    "d2q_train",
    "d2q_predict",
    "quantile_labels",
    "quantile_to_time",
    "or_train",
    "or_predict",
    "or_expectation",
]


def _logger(history):
    def on_epoch(epoch, means):
        history.append(epoch=epoch, **means)
    return on_epoch


def _bce(o, y, w):
    """Weighted binary cross-entropy per element and its derivative wrt ``o``."""
    loss = -w * (y * np.log(o) + (1.0 - y) * np.log1p(-o))
    grad = -w * (y / o - (1.0 - y) / (1.0 - o))
    return loss, grad


# ---------------------------------------------------------------- WLR

@dataclass(eq=False)
class WlrModel:
    net: MultiHeadNet
    threshold: float

    def predict(self, X):
        return wlr_predict(self, X)


def wlr_odds(p):
    p = np.asarray(p, dtype=np.float64)
    return p / (1.0 - p)


def wlr_train(X, T, net_config: NetConfig, config: TrainConfig | None = None,
              threshold: float | None = None, threshold_quantile: float = 0.25):
    """Fit the weighted logistic baseline.

    Samples with ``T <= threshold`` are short plays (negatives, weight 1);
    the rest are positives weighted by their watch time.  The threshold
    defaults to the ``threshold_quantile`` quantile of ``T``.
    """
    config = config or TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64).ravel()
    if np.any(T < 0):
        raise ValueError("watch times must be non-negative")
    if threshold is None:
        threshold = float(np.quantile(T, threshold_quantile))
    y = (T > threshold).astype(np.float64)
    if y.min() == y.max():
        raise ValueError(f"threshold {threshold:g} leaves a single class")
    w = np.where(y > 0, T, 1.0)

    net = MultiHeadNet(replace(net_config, input_dim=X.shape[1], num_heads=1))

    def step(o, idx):
        loss, grad = _bce(o[:, 0], y[idx], w[idx])
        return {"total": loss}, grad[:, None] / idx.size

    history = TrainLog()
    run_minibatches(net, X, config.epochs, config.batch_size, config.seed, step,
                    config.optimizer, _logger(history))
    return WlrModel(net, threshold), history


def wlr_predict(model: WlrModel, X):
    p = forward(model.net, X)
    return wlr_odds(p[..., 0])


# ---------------------------------------------------------------- D2Q

@dataclass(eq=False)
class D2qModel:
    """``sorted_times[d]`` is the ascending training watch time of group ``d``."""

    partition: ConfounderPartition
    net: MultiHeadNet
    sorted_times: list[np.ndarray]

    def predict(self, X, duration):
        return d2q_predict(self, X, duration)


def quantile_labels(t):
    """Within-group quantile of each value: ``(average rank - 1) / (n - 1)``."""
    t = np.asarray(t, dtype=np.float64)
    if t.size == 1:
        return np.array([0.5])
    return (rankdata(t) - 1.0) / (t.size - 1.0)


def quantile_to_time(sorted_times, q):
    """Inverse of :func:`quantile_labels` by linear interpolation of order statistics."""
    s = np.asarray(sorted_times, dtype=np.float64)
    q = np.clip(np.asarray(q, dtype=np.float64), 0.0, 1.0)
    if s.size == 1:
        return np.full_like(q, s[0]) if q.ndim else float(s[0])
    return np.interp(q, np.linspace(0.0, 1.0, s.size), s)


def d2q_train(X, T, duration, net_config: NetConfig, config: TrainConfig | None = None,
              num_groups: int = 32, partition: ConfounderPartition | None = None):
    """Quantile regression per duration group with one head per group."""
    config = config or TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64).ravel()
    dur = np.asarray(duration, dtype=np.float64).ravel()
    if dur.size != T.size or not np.all(np.isfinite(dur)):
        raise ValueError("need one finite duration per sample")
    partition = partition or build_partition(dur, num_groups)
    G = partition.num_groups
    groups = partition.group_of(dur)
    labels = np.empty(T.size)
    sorted_times = []
    for g in range(G):
        sel = groups == g
        if not sel.any():
            raise ValueError(f"group {g} is empty after partitioning")
        labels[sel] = quantile_labels(T[sel])
        sorted_times.append(np.sort(T[sel]))

    net = MultiHeadNet(replace(net_config, input_dim=X.shape[1], num_heads=G))

    def step(o, idx):
        rows = np.arange(idx.size)
        g = groups[idx]
        resid = o[rows, g] - labels[idx]
        grad = np.zeros_like(o)
        grad[rows, g] = 2.0 * resid / idx.size
        return {"total": resid * resid}, grad

    history = TrainLog()
    run_minibatches(net, X, config.epochs, config.batch_size, config.seed, step,
                    config.optimizer, _logger(history))
    return D2qModel(partition, net, sorted_times), history


def d2q_predict(model: D2qModel, X, duration=None, groups=None):
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X2 = X[None, :] if single else X
    if groups is None:
        if duration is None:
            raise ValueError("D2Q prediction needs the video duration")
        groups = model.partition.group_of(duration)
    g = np.broadcast_to(np.asarray(groups), (X2.shape[0],))
    if np.any((g < 0) | (g >= model.partition.num_groups)):
        raise ValueError("unknown duration group")
    q = forward(model.net, X2)[np.arange(X2.shape[0]), g]
    out = np.empty(X2.shape[0])
    for d in np.unique(g):
        sel = g == d
        out[sel] = quantile_to_time(model.sorted_times[d], q[sel])
    return float(out[0]) if single else out


# ---------------------------------------------------------------- OR

@dataclass(eq=False)
class OrModel:
    """Head ``k`` estimates ``P(T > g_k)`` for ``k = 0 .. m-1``.

    With a ``partition`` the net also receives the one-hot duration group.
    """

    scale: OrdinalScale
    net: MultiHeadNet
    partition: ConfounderPartition | None = None

    def predict(self, X, duration=None):
        return or_predict(self, X, duration)


def or_expectation(scale: OrdinalScale, head_probs):
    """Survival-sum decoding: ``g_0 + sum_k P(T > g_k) * (g_{k+1} - g_k)``."""
    o = np.asarray(head_probs, dtype=np.float64)
    return scale.boundaries[0] + o @ scale.widths


def or_train(X, T, scale: OrdinalScale, net_config: NetConfig, config: TrainConfig | None = None,
             duration=None, num_groups: int | None = None):
    """Fit independent ``T > g_k`` classifiers; pass ``duration`` and ``num_groups`` to condition on groups."""
    config = config or TrainConfig()
    X = np.asarray(X, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64).ravel()
    Y = (T[:, None] > scale.boundaries[None, :-1]).astype(np.float64)
    partition = None
    if num_groups is not None:
        if duration is None:
            raise ValueError("grouped OR needs durations")
        partition = build_partition(duration, num_groups)
        X = group_features(X, partition.group_of(duration), partition.num_groups)

    net = MultiHeadNet(replace(net_config, input_dim=X.shape[1], num_heads=scale.num_leaves))

    def step(o, idx):
        loss, grad = _bce(o, Y[idx], 1.0)
        return {"total": loss.sum(axis=1)}, grad / idx.size

    history = TrainLog()
    run_minibatches(net, X, config.epochs, config.batch_size, config.seed, step,
                    config.optimizer, _logger(history))
    return OrModel(scale, net, partition), history


def or_predict(model: OrModel, X, duration=None):
    X = np.asarray(X, dtype=np.float64)
    if model.partition is not None:
        if duration is None:
            raise ValueError("this OR model was trained with duration groups; pass duration")
        X = group_features(X, model.partition.group_of(duration), model.partition.num_groups)
    return or_expectation(model.scale, forward(model.net, X))
