"""Offline metrics: mean absolute error and XAUC (pairwise ordering accuracy)."""

from __future__ import annotations

import numpy as np

__all__ = ["mae", "xauc", "EXHAUSTIVE_LIMIT", "SAMPLED_PAIRS"]

EXHAUSTIVE_LIMIT = 10_000
SAMPLED_PAIRS = 1_000_000


def _pair(predictions, truths):
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(truths, dtype=np.float64).ravel()
    if p.size != t.size:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} truths")
    return p, t


def mae(predictions, truths) -> float:
    p, t = _pair(predictions, truths)
    if p.size == 0:
        raise ValueError("empty input")
    return float(np.mean(np.abs(p - t)))


def _score(dp, dt):
    # concordant -> 1, prediction tie -> 0.5, discordant -> 0
    return np.where(dp == 0, 0.5, (np.sign(dp) == np.sign(dt)).astype(np.float64))


def _xauc_exhaustive(p, t, chunk=256):
    hits = 0.0
    pairs = 0
    for start in range(0, p.size, chunk):
        stop = min(start + chunk, p.size)
        # i in the chunk, j > i only
        dp = p[start:stop, None] - p[None, :]
        dt = t[start:stop, None] - t[None, :]
        upper = np.arange(start, stop)[:, None] < np.arange(p.size)[None, :]
        keep = upper & (dt != 0)
        hits += _score(dp[keep], dt[keep]).sum()
        pairs += int(keep.sum())
    return hits, pairs


def _xauc_sampled(p, t, rng, num_pairs):
    i = rng.integers(0, p.size, num_pairs)
    j = rng.integers(0, p.size, num_pairs)
    dt = t[i] - t[j]
    keep = dt != 0
    return _score(p[i][keep] - p[j][keep], dt[keep]).sum(), int(keep.sum())


def xauc(predictions, truths, pairs: str = "auto", rng=None, num_pairs: int = SAMPLED_PAIRS) -> float:
    """Fraction of pairs with distinct true watch time that the predictions order correctly.

    ``pairs`` is ``"exhaustive"``, ``"sampled"`` or ``"auto"`` (exhaustive up
    to :data:`EXHAUSTIVE_LIMIT` samples).  Sampling draws ``num_pairs`` index
    pairs uniformly from ``rng`` (a ``numpy.random.Generator`` or a seed;
    defaults to seed 0).  Tied predictions earn half credit.
    """
    p, t = _pair(predictions, truths)
    if p.size < 2:
        raise ValueError("xauc needs at least two samples")
    if pairs == "auto":
        pairs = "exhaustive" if p.size <= EXHAUSTIVE_LIMIT else "sampled"
    if pairs == "exhaustive":
        hits, count = _xauc_exhaustive(p, t)
    elif pairs == "sampled":
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(0 if rng is None else rng)
        hits, count = _xauc_sampled(p, t, rng, num_pairs)
    else:
        raise ValueError(f"unknown pair policy {pairs!r}")
    if count == 0:
        raise ValueError("no orderable pairs")
    return float(hits / count)
