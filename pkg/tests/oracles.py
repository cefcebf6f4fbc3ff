"""Brute-force reference implementations, written with plain loops.

These deliberately avoid the package's kernels and vectorised tricks so they
serve as independent checks.
"""
import math

import numpy as np


def unit(Z):
    Z = np.asarray(Z, dtype=np.float64)
    return Z / np.linalg.norm(Z, axis=1, keepdims=True)


def _mean(xs):
    return math.fsum(xs) / len(xs)


def _var(xs):
    m = _mean(xs)
    return math.fsum((x - m) ** 2 for x in xs) / len(xs)


def pair_scores(Z, y, kind="similarity"):
    n = len(y)
    gen, imp = [], []
    for i in range(n):
        for j in range(i + 1, n):
            s = math.fsum(float(a) * float(b) for a, b in zip(Z[i], Z[j]))
            if kind == "distance":
                s = 1.0 - s
            (gen if y[i] == y[j] else imp).append(s)
    return gen, imp


def d_loss(Z, y, eps):
    gen, imp = pair_scores(Z, y)
    return math.sqrt((_var(gen) + _var(imp)) / 2) / (abs(_mean(imp) - _mean(gen)) + eps)


def sq_dist(a, b):
    return math.fsum((float(u) - float(v)) ** 2 for u, v in zip(a, b))


def triplet(Z, y, alpha):
    n = len(y)
    D = [[sq_dist(Z[i], Z[j]) for j in range(n)] for i in range(n)]
    terms = []
    for a in range(n):
        for p in range(n):
            if p == a or y[p] != y[a]:
                continue
            for q in range(n):
                if y[q] != y[a]:
                    terms.append(max(0.0, D[a][p] - D[a][q] + alpha))
    return _mean(terms)


def proxy_nca(Z, y, P):
    P = unit(P)
    total = []
    for z, c in zip(Z, y):
        d = [sq_dist(z, p) for p in P]
        others = [-d[k] for k in range(len(P)) if k != c]
        m = max(others)
        total.append(d[c] + m + math.log(math.fsum(math.exp(o - m) for o in others)))
    return _mean(total)


def pd_loss(Z, y, P, tau, eps1, eps2):
    P = unit(P)
    gen, imp = [], []
    for z, c in zip(Z, y):
        for k, p in enumerate(P):
            s = math.fsum(float(a) * float(b) for a, b in zip(z, p)) / tau
            (gen if k == c else imp).append(s)
    gap = max(_mean(gen) - _mean(imp) + eps1, eps1)
    spread = max(_var(gen) + _var(imp) + eps2, eps2)
    return -math.log(gap) + 0.5 * math.log(spread)


def recall(Z, y, ks):
    """Per-query linear scan with explicit (distance, index) ordering."""
    Z = unit(Z)
    n = len(y)
    hits = {k: 0 for k in ks}
    queries = 0
    for q in range(n):
        if sum(1 for j in range(n) if j != q and y[j] == y[q]) == 0:
            continue
        queries += 1
        order = sorted((j for j in range(n) if j != q), key=lambda j: (1.0 - float(Z[q] @ Z[j]), j))
        for k in ks:
            if any(y[j] == y[q] for j in order[:k]):
                hits[k] += 1
    return {k: hits[k] / queries for k in ks}, queries


def binning(scores, lo, hi, bins):
    counts = [0] * bins
    width = (hi - lo) / bins
    for s in scores:
        b = int((s - lo) // width) if s < hi else bins - 1
        counts[min(max(b, 0), bins - 1)] += 1
    return counts


def gaussian_with_stats(rng, n, mu, sigma):
    """Samples whose population mean and std equal ``mu`` and ``sigma`` exactly (to rounding)."""
    x = rng.standard_normal(n)
    x = (x - x.mean()) / x.std()
    return mu + sigma * x
