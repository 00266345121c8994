"""Ordinal scales over watch time and the binary trees that decompose them.

A scale is a sorted vector of boundaries ``g_0 < g_1 < ... < g_m``; leaf ``k``
covers ``[g_k, g_{k+1})`` (the last leaf is also closed at ``g_m``).  A tree
groups contiguous runs of leaves; every internal node owns one binary
classifier ("head") that decides between its left and right child.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "OrdinalScale",
    "TreeNode",
    "DecompositionTree",
    "build_scale",
    "build_balanced_tree",
    "build_linear_tree",
    "build_tree",
    "build_tree_from_splits",
    "leaf_of",
    "path_and_labels",
]


@dataclass(frozen=True, eq=False)
class OrdinalScale:
    boundaries: np.ndarray

    def __post_init__(self):
        b = np.array(self.boundaries, dtype=np.float64)
        if b.ndim != 1 or b.size < 3:
            raise ValueError("an ordinal scale needs at least 3 boundaries (2 intervals)")
        if not np.all(np.isfinite(b)):
            raise ValueError("scale boundaries must be finite")
        if np.any(np.diff(b) <= 0):
            raise ValueError("scale boundaries must be strictly increasing")
        b.setflags(write=False)
        object.__setattr__(self, "boundaries", b)

    @property
    def num_leaves(self) -> int:
        return self.boundaries.size - 1

    @property
    def midpoints(self) -> np.ndarray:
        b = self.boundaries
        return (b[:-1] + b[1:]) / 2.0

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.boundaries)

    def __eq__(self, other):
        if not isinstance(other, OrdinalScale):
            return NotImplemented
        return np.array_equal(self.boundaries, other.boundaries)

    def __repr__(self):
        return f"OrdinalScale({self.boundaries.tolist()})"


@dataclass(frozen=True)
class TreeNode:
    leaf_span: tuple[int, int]
    children: tuple[int, int] | None = None
    head: int | None = None
    leaf_midpoint: float | None = None

    @property
    def is_leaf(self) -> bool:
        return self.children is None


@dataclass(frozen=True, eq=False)
class DecompositionTree:
    """Binary tree over the leaves of an ordinal scale.

    ``nodes`` is stored in breadth-first order with the root at index 0, so
    head ``h`` belongs to the ``h``-th internal node met in that order.

    Two dense matrices of shape ``(num_leaves, num_heads)`` summarise every
    root-to-leaf path: ``right[k, h]`` is 1 when the path to leaf ``k`` takes
    the right branch at head ``h`` and ``left[k, h]`` when it takes the left
    one.  Everything in :mod:`tpmwatch.tpm` is written against these.
    """

    scale: OrdinalScale
    nodes: tuple[TreeNode, ...]
    kind: str = "balanced"
    root: int = 0
    right: np.ndarray = field(init=False, repr=False)
    left: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        m = self.scale.num_leaves
        heads = [n.head for n in self.nodes if not n.is_leaf]
        if sorted(heads) != list(range(m - 1)):
            raise ValueError("internal nodes must carry heads 0..leaf_count-2")
        right = np.zeros((m, m - 1))
        left = np.zeros((m, m - 1))
        for k in range(m):
            for h, lab in path_and_labels(self, k):
                (right if lab else left)[k, h] = 1.0
        right.setflags(write=False)
        left.setflags(write=False)
        object.__setattr__(self, "right", right)
        object.__setattr__(self, "left", left)

    @property
    def leaf_count(self) -> int:
        return self.scale.num_leaves

    @property
    def num_heads(self) -> int:
        return self.scale.num_leaves - 1

    @property
    def midpoints(self) -> np.ndarray:
        return self.scale.midpoints

    def depths(self) -> np.ndarray:
        """Depth of every leaf (number of heads on its path)."""
        return (self.right + self.left).sum(axis=1).astype(int)

    def with_scale(self, scale: OrdinalScale) -> DecompositionTree:
        """Same shape, different boundaries (used for per-group scales)."""
        if scale.num_leaves != self.leaf_count:
            raise ValueError("replacement scale must have the same number of leaves")
        table = self.splits()
        return _assemble(scale, lambda s, e: table[(s, e)], self.kind)

    def splits(self) -> dict[tuple[int, int], int]:
        """``{(start, end): first leaf of the right child}`` for every internal node."""
        return {n.leaf_span: self.nodes[n.children[1]].leaf_span[0] for n in self.nodes if not n.is_leaf}

    def __eq__(self, other):
        if not isinstance(other, DecompositionTree):
            return NotImplemented
        return self.kind == other.kind and self.scale == other.scale and self.nodes == other.nodes


def build_scale(watch_times, num_leaves: int) -> OrdinalScale:
    """Quantile boundaries splitting ``watch_times`` into ``num_leaves`` ranks.

    Boundaries sit at the empirical quantiles ``0, 1/m, ..., 1`` with linear
    interpolation.  Tied quantiles (heavy ties in the labels) are pushed up by
    a few ulps so every interval keeps a positive width.
    """
    if num_leaves < 2:
        raise ValueError("num_leaves must be at least 2")
    t = np.asarray(watch_times, dtype=np.float64).ravel()
    if t.size == 0:
        raise ValueError("watch_times is empty")
    if not np.all(np.isfinite(t)) or np.any(t < 0):
        raise ValueError("watch_times must be finite and non-negative")
    if np.unique(t).size < num_leaves:
        raise ValueError("insufficient label diversity")

    b = np.quantile(t, np.linspace(0.0, 1.0, num_leaves + 1))
    b[0], b[-1] = t.min(), t.max()
    for i in range(1, b.size):
        if b[i] <= b[i - 1]:
            # 4 ulps keep the midpoint strictly inside the nudged interval
            b[i] = b[i - 1] + 4 * np.spacing(b[i - 1])
    return OrdinalScale(b)


def _assemble(scale: OrdinalScale, split, kind: str) -> DecompositionTree:
    """Grow a tree top-down with ``split(start, end) -> mid`` and number it BFS."""
    m = scale.num_leaves
    mids = scale.midpoints
    spans = [(0, m)]
    kids: list[tuple[int, int] | None] = []
    queue = deque([0])
    order = []
    while queue:
        i = queue.popleft()
        order.append(i)
        s, e = spans[i]
        if e - s == 1:
            kids.append(None)
            continue
        mid = split(s, e)
        if not s < mid < e:
            raise ValueError(f"split of leaves [{s}, {e}) at {mid} leaves an empty child")
        spans.append((s, mid))
        spans.append((mid, e))
        kids.append((len(spans) - 2, len(spans) - 1))
        queue.extend(kids[-1])
    # ``spans`` was appended in BFS order already, so node ids are BFS ids
    nodes = []
    head = 0
    for i in order:
        s, e = spans[i]
        if kids[i] is None:
            nodes.append(TreeNode((s, e), leaf_midpoint=float(mids[s])))
        else:
            nodes.append(TreeNode((s, e), children=kids[i], head=head))
            head += 1
    return DecompositionTree(scale, tuple(nodes), kind=kind)


def build_balanced_tree(scale: OrdinalScale) -> DecompositionTree:
    """Binary-search tree: each node hands ``ceil(span / 2)`` leaves to its left child."""
    return _assemble(scale, lambda s, e: s + (e - s + 1) // 2, "balanced")


def build_linear_tree(scale: OrdinalScale) -> DecompositionTree:
    """Linear-search spine: node ``[k, m)`` splits into ``[k, k+1)`` and ``[k+1, m)``."""
    return _assemble(scale, lambda s, e: s + 1, "linear")


def build_tree_from_splits(scale: OrdinalScale, splits) -> DecompositionTree:
    """Arbitrary shape: ``splits[(start, end)]`` is the first leaf of the right child."""
    def split(s, e):
        try:
            return splits[(s, e)]
        except KeyError:
            raise ValueError(f"no split given for leaves [{s}, {e})") from None
    return _assemble(scale, split, "custom")


_SHAPES = {"balanced": build_balanced_tree, "linear": build_linear_tree}


def build_tree(scale: OrdinalScale, kind: str = "balanced") -> DecompositionTree:
    try:
        return _SHAPES[kind](scale)
    except KeyError:
        raise ValueError(f"unknown tree kind {kind!r}; expected one of {sorted(_SHAPES)}") from None


def leaf_of(scale: OrdinalScale, tree: DecompositionTree | None, t):
    """Leaf index of watch time(s) ``t``; values outside the scale clamp to the end leaves.

    ``tree`` is accepted for symmetry with the other tree operations; the leaf
    order is fixed by the scale alone.
    """
    arr = np.asarray(t, dtype=np.float64)
    if np.any(np.isnan(arr)):
        raise ValueError("watch time is NaN")
    k = np.searchsorted(scale.boundaries, arr, side="right") - 1
    k = np.clip(k, 0, scale.num_leaves - 1)
    return int(k) if k.ndim == 0 else k


def path_and_labels(tree: DecompositionTree, leaf: int) -> list[tuple[int, int]]:
    """``(head, label)`` pairs from the root down to ``leaf``; label 1 means "went right"."""
    if not 0 <= leaf < tree.leaf_count:
        raise IndexError(f"leaf {leaf} out of range for {tree.leaf_count} leaves")
    out = []
    node = tree.nodes[tree.root]
    while not node.is_leaf:
        li, ri = node.children
        go_right = leaf >= tree.nodes[ri].leaf_span[0]
        out.append((node.head, int(go_right)))
        node = tree.nodes[ri if go_right else li]
    return out
