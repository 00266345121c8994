"""Ordinal scale, decomposition trees and the leaf distribution, step by step."""

import numpy as np

from tpmwatch.cli import format_tree
from tpmwatch.ranks import build_balanced_tree, build_linear_tree, build_scale, leaf_of, path_and_labels
from tpmwatch.tpm import leaf_distribution

rng = np.random.default_rng(0)
watch = rng.exponential(30.0, size=5000)

# quantile boundaries: each of the 8 intervals holds about 1/8 of the data
scale = build_scale(watch, 8)
print("boundaries:", np.round(scale.boundaries, 2))
print("share per leaf:", np.bincount(leaf_of(scale, None, watch), minlength=8) / watch.size)

# a balanced tree needs log2(8) = 3 decisions per sample, a linear spine up to 7
balanced = build_balanced_tree(scale)
linear = build_linear_tree(scale)
print(f"\nbalanced: {balanced.num_heads} heads, depth {balanced.depths().max()}")
print(f"linear:   {linear.num_heads} heads, depth {linear.depths().max()}")
print(format_tree(balanced))

# the binary decisions that route one watch time to its leaf
t = float(watch[0])
leaf = int(leaf_of(scale, None, t))
print(f"\nT = {t:.2f} -> leaf {leaf}, (head, label) path {path_and_labels(balanced, leaf)}")

# head outputs turn into a full distribution over leaves by the chain rule
o = rng.uniform(0.2, 0.8, size=balanced.num_heads)
dist = leaf_distribution(balanced, o)
print("\nleaf probabilities:", np.round(dist.probs, 3), "sum", dist.probs.sum())
print(f"expected watch time {dist.expectation:.2f} s, std {dist.std:.2f} s")
