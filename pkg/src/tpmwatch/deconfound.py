"""Backdoor adjustment over a grouped confounder (video duration by default).

The confounder is cut into equal-frequency groups with an empirical prior
``P(D = d)``.  Training conditions every sample on its own group; at
inference the deconfounded estimate is

    E[T | do(X)] = sum_d P(D = d) * E[T | X, D = d]

while the "conditional" mode scores each sample under its own group only.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .net import MultiHeadNet, NetConfig, forward
from .ranks import DecompositionTree, build_scale, leaf_of
from .tpm import LeafDistribution, TrainConfig, TrainLog, fit, leaf_distribution

__all__ = [
    "ConfounderPartition",
    "DeconfoundedModel",
    "build_partition",
    "group_features",
    "train_deconfounded",
    "predict_deconfounded",
    "conditional_distribution",
]


@dataclass(frozen=True, eq=False)
class ConfounderPartition:
    """Equal-frequency grouping of a scalar confounder.

    ``cuts`` are the ``num_groups - 1`` interior edges; a value ``v`` falls in
    group ``searchsorted(cuts, v, side="right")``, so values beyond the
    training range land in the first or last group.
    """

    cuts: np.ndarray
    prior: np.ndarray

    def __post_init__(self):
        cuts = np.asarray(self.cuts, dtype=np.float64).ravel()
        prior = np.asarray(self.prior, dtype=np.float64).ravel()
        if prior.size != cuts.size + 1:
            raise ValueError("prior must have one entry per group")
        if np.any(np.diff(cuts) <= 0):
            raise ValueError("group boundaries must be strictly increasing")
        if np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-9:
            raise ValueError("group prior must sum to 1")
        object.__setattr__(self, "cuts", cuts)
        object.__setattr__(self, "prior", prior)

    @property
    def num_groups(self) -> int:
        return self.prior.size

    def group_of(self, values):
        v = np.asarray(values, dtype=np.float64)
        if np.any(~np.isfinite(v)):
            raise ValueError("confounder values must be finite")
        g = np.searchsorted(self.cuts, v, side="right")
        return int(g) if g.ndim == 0 else g


def build_partition(values, num_groups: int) -> ConfounderPartition:
    """Split ``values`` into ``num_groups`` groups of (nearly) equal size.

    Cuts are placed halfway between adjacent distinct values, at the
    position whose cumulative count is closest to ``j * N / num_groups``;
    ties therefore never straddle a cut and no group comes out empty.
    """
    if num_groups < 1:
        raise ValueError("num_groups must be >= 1")
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0 or not np.all(np.isfinite(v)):
        raise ValueError("confounder values must be non-empty and finite")
    uniq, counts = np.unique(v, return_counts=True)
    if uniq.size < num_groups:
        raise ValueError(f"only {uniq.size} distinct confounder values for {num_groups} groups")
    cum = np.cumsum(counts)  # cum[i] = samples <= uniq[i]
    cuts = []
    last = -1
    for j in range(1, num_groups):
        lo = last + 1
        hi = uniq.size - 1 - (num_groups - j)
        target = j * v.size / num_groups
        i = lo + int(np.argmin(np.abs(cum[lo:hi + 1] - target)))
        cuts.append((uniq[i] + uniq[i + 1]) / 2.0)
        last = i
    cuts = np.array(cuts)
    groups = np.searchsorted(cuts, v, side="right")
    prior = np.bincount(groups, minlength=num_groups) / v.size
    return ConfounderPartition(cuts, prior)


def group_features(X, groups, num_groups: int):
    """Append a one-hot group indicator to ``X`` (no-op for a single group)."""
    X = np.asarray(X, dtype=np.float64)
    if num_groups == 1:
        return X
    g = np.asarray(groups)
    single = X.ndim == 1
    X2 = X[None, :] if single else X
    onehot = np.zeros((X2.shape[0], num_groups))
    onehot[np.arange(X2.shape[0]), np.broadcast_to(g, (X2.shape[0],))] = 1.0
    out = np.hstack([X2, onehot])
    return out[0] if single else out


@dataclass(eq=False)
class DeconfoundedModel:
    """TPM conditioned on a confounder group.

    ``trees[d]`` is the decomposition tree for group ``d`` (same shape for
    all groups; boundaries differ when scales are built per group).  With
    ``conditioning == "shared"`` there is one net whose input carries the
    one-hot group id; with ``"independent"`` there is one net per group.
    """

    partition: ConfounderPartition
    trees: list[DecompositionTree]
    nets: list[MultiHeadNet]
    conditioning: str = "shared"
    scale_mode: str = "per_group"

    def __post_init__(self):
        g = self.partition.num_groups
        if len(self.trees) != g:
            raise ValueError(f"{len(self.trees)} trees for {g} groups")
        want = 1 if self.conditioning == "shared" else g
        if len(self.nets) != want:
            raise ValueError(f"{self.conditioning} conditioning needs {want} nets, got {len(self.nets)}")

    @property
    def num_groups(self) -> int:
        return self.partition.num_groups

    @property
    def tree(self) -> DecompositionTree:
        return self.trees[0]

    def _check_group(self, g):
        if not 0 <= g < self.num_groups:
            raise ValueError(f"unknown group {g}; model has {self.num_groups} groups")

    def group_distribution(self, X, g: int) -> LeafDistribution:
        """Leaf distribution of every row of ``X`` under group ``g``."""
        self._check_group(g)
        if self.conditioning == "shared":
            out = forward(self.nets[0], group_features(X, g, self.num_groups))
        else:
            out = forward(self.nets[g], X)
        return leaf_distribution(self.trees[g], out)


def train_deconfounded(X, T, confounder, tree: DecompositionTree, net_config: NetConfig,
                       config: TrainConfig | None = None, num_groups: int = 32,
                       conditioning: str = "shared", scale_mode: str = "per_group",
                       partition: ConfounderPartition | None = None):
    """Train TPM with every sample conditioned on its confounder group.

    ``tree`` fixes the tree shape and, for ``scale_mode="global"`` (or a
    single group), the boundaries.  ``net_config.input_dim`` is the raw
    feature count; the one-hot group columns are added here.
    Returns ``(model, TrainLog)``.
    """
    config = config or TrainConfig()
    if conditioning not in ("shared", "independent"):
        raise ValueError(f"unknown conditioning {conditioning!r}")
    if scale_mode not in ("per_group", "global"):
        raise ValueError(f"unknown scale mode {scale_mode!r}")
    X = np.asarray(X, dtype=np.float64)
    T = np.asarray(T, dtype=np.float64).ravel()
    D = np.asarray(confounder, dtype=np.float64).ravel()
    if D.size != T.size:
        raise ValueError(f"{D.size} confounder values for {T.size} samples")
    if not np.all(np.isfinite(D)):
        raise ValueError("every sample needs a finite confounder value")

    partition = partition or build_partition(D, num_groups)
    G = partition.num_groups
    groups = partition.group_of(D)
    counts = np.bincount(groups, minlength=G)
    if np.any(counts == 0):
        raise ValueError(f"group {int(np.argmin(counts))} is empty after partitioning")

    if G == 1 or scale_mode == "global":
        trees = [tree] * G
    else:
        trees = []
        for g in range(G):
            try:
                trees.append(tree.with_scale(build_scale(T[groups == g], tree.leaf_count)))
            except ValueError as err:
                raise ValueError(f"group {g}: {err}") from None

    base_cfg = replace(net_config, num_heads=tree.num_heads)
    history = TrainLog()
    if conditioning == "shared":
        net = MultiHeadNet(replace(base_cfg, input_dim=X.shape[1] + (G if G > 1 else 0)))
        if G == 1:
            _, history = fit(net, X, T, tree, config)
        else:
            leaves = np.empty(T.size, dtype=int)
            mids = np.empty((T.size, tree.leaf_count))
            for g in range(G):
                sel = groups == g
                leaves[sel] = leaf_of(trees[g].scale, trees[g], T[sel])
                mids[sel] = trees[g].midpoints
            _, history = fit(net, group_features(X, groups, G), T, tree, config, leaves, mids)
        nets = [net]
    else:
        nets = []
        for g in range(G):
            sel = groups == g
            net = MultiHeadNet(replace(base_cfg, seed=base_cfg.seed + g))
            _, h = fit(net, X[sel], T[sel], trees[g], config)
            nets.append(net)
            for rec in h.records:
                history.append(**({"group": g, **rec} if G > 1 else rec))
    return DeconfoundedModel(partition, trees, nets, conditioning, scale_mode), history


def _resolve_groups(model, n, confounder, groups):
    if groups is None:
        if confounder is None:
            raise ValueError("conditional mode needs a confounder value or group id")
        groups = model.partition.group_of(confounder)
    g = np.broadcast_to(np.asarray(groups), (n,))
    if np.any((g < 0) | (g >= model.num_groups)):
        bad = g[(g < 0) | (g >= model.num_groups)][0]
        raise ValueError(f"unknown group {int(bad)}; model has {model.num_groups} groups")
    return g


def conditional_distribution(model: DeconfoundedModel, X, confounder=None, groups=None):
    """Expectation and variance of every row under its own group."""
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 1
    X2 = X[None, :] if single else X
    g = _resolve_groups(model, X2.shape[0], confounder, groups)
    e = np.empty(X2.shape[0])
    var = np.empty(X2.shape[0])
    for d in np.unique(g):
        sel = g == d
        dist = model.group_distribution(X2[sel], int(d))
        e[sel], var[sel] = dist.expectation, dist.variance
    if single:
        return float(e[0]), float(var[0])
    return e, var


def predict_deconfounded(model: DeconfoundedModel, X, mode: str = "do", confounder=None, groups=None):
    """Watch-time expectation under backdoor adjustment (``"do"``) or one group (``"conditional"``).

    ``"do"`` averages the group-conditional expectations with the training
    prior and never looks at the sample's own confounder.
    """
    if mode == "conditional":
        return conditional_distribution(model, X, confounder, groups)[0]
    if mode != "do":
        raise ValueError(f"unknown mode {mode!r}")
    X = np.asarray(X, dtype=np.float64)
    out = 0.0
    for d, w in enumerate(model.partition.prior):
        out = out + w * model.group_distribution(X, d).expectation
    return out
