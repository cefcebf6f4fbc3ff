"""Vectorized numpy versions of the pair/ranking kernels.

Same contracts as the compiled module; used when it is unavailable or when
``PDLOSS_PURE_PYTHON=1``.
"""
import numpy as np


def pair_indices(labels):
    """Flat indices ``i*n + j`` (i < j, lexicographic) split into genuine / impostor."""
    y = np.asarray(labels, dtype=np.int64)
    n = y.size
    i, j = np.triu_indices(n, k=1)
    flat = (i * n + j).astype(np.int64)
    same = y[i] == y[j]
    return flat[same], flat[~same]


def pair_partition(S, labels):
    """Values ``S[i, j]`` for i < j, split into genuine / impostor lists."""
    S = np.ascontiguousarray(S, dtype=np.float64)
    gen, imp = pair_indices(labels)
    flat = S.reshape(-1)
    return flat[gen], flat[imp]


def first_hit_ranks(D, labels):
    """0-based rank of the first same-class neighbour for each query.

    Neighbours of query ``i`` are all ``j != i`` ordered by ``(D[i, j], j)``.
    ``-1`` marks queries whose class has no other member.
    """
    D = np.ascontiguousarray(D, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    n = y.size
    idx = np.arange(n)
    same = (y[:, None] == y[None, :]) & (idx[:, None] != idx[None, :])
    masked = np.where(same, D, np.inf)
    best = np.argmin(masked, axis=1)  # first index among ties
    has = same.any(axis=1)
    dbest = D[idx, best][:, None]
    ahead = (D < dbest) | ((D == dbest) & (idx[None, :] < best[:, None]))
    ahead[idx, idx] = False
    ranks = ahead.sum(axis=1).astype(np.int64)
    return np.where(has, ranks, -1)


def histogram_counts(scores, edges):
    """Counts over half-open bins ``[e_k, e_{k+1})``; last bin closed; out-of-range clamped."""
    x = np.asarray(scores, dtype=np.float64)
    e = np.asarray(edges, dtype=np.float64)
    nb = e.size - 1
    k = np.searchsorted(e, x, side="right") - 1
    k = np.clip(k, 0, nb - 1)
    return np.bincount(k, minlength=nb).astype(np.int64)


def triplet_indices(labels):
    """Flat indices of (anchor, positive) and (anchor, negative) for every valid triplet.

    Ordered lexicographically by (a, p, n).
    """
    y = np.asarray(labels, dtype=np.int64)
    B = y.size
    a, p, n = np.meshgrid(np.arange(B), np.arange(B), np.arange(B), indexing="ij")
    valid = (y[a] == y[p]) & (a != p) & (y[n] != y[a])
    a, p, n = a[valid], p[valid], n[valid]
    return (a * B + p).astype(np.int64), (a * B + n).astype(np.int64)
