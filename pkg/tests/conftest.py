"""Shared helpers for the test suite."""

import numpy as np
import pytest

from tpmwatch.ranks import OrdinalScale, build_tree


def random_scale(rng, m):
    """Strictly increasing boundaries with random positive widths."""
    return OrdinalScale(np.concatenate([[0.0], np.cumsum(rng.uniform(0.1, 5.0, m))]))


def random_tree(rng, m, kind=None):
    kind = kind or ("balanced" if rng.random() < 0.5 else "linear")
    return build_tree(random_scale(rng, m), kind)


def brute_leaf_probs(tree, o):
    """Chain rule walked node by node, one leaf at a time (no matrices)."""
    o = np.asarray(o, dtype=np.float64)
    probs = np.empty(tree.leaf_count)
    for k in range(tree.leaf_count):
        p = 1.0
        node = tree.nodes[tree.root]
        while not node.is_leaf:
            left, right = (tree.nodes[c] for c in node.children)
            if right.leaf_span[0] <= k:
                p *= o[node.head]
                node = right
            else:
                p *= 1.0 - o[node.head]
                node = left
        probs[k] = p
    return probs


def heads_for_leaf_probs(tree, target):
    """Head outputs whose chain-rule product reproduces ``target`` exactly.

    Each head gets P(right subtree) / P(node), computed bottom-up from the
    target leaf vector.
    """
    o = np.empty(tree.num_heads)
    for node in tree.nodes:
        if node.is_leaf:
            continue
        s, e = node.leaf_span
        r0 = tree.nodes[node.children[1]].leaf_span[0]
        o[node.head] = np.sum(target[r0:e]) / np.sum(target[s:e])
    return o


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# one line per acceptance criterion, collected by tests/test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
