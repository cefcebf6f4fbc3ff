"""Separability audits: decidability index, score distributions, Recall@K."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import BatchCompositionError, ContractError, EmptySetError, InsufficientDataError

DEFAULT_K = (1, 2, 4, 8)
DEFAULT_BINS = 50
DEFAULT_DISTANCE_RANGE = (0.0, 2.0)


@dataclass
class ScoreSet:
    genuine: np.ndarray
    impostor: np.ndarray
    kind: str = "similarity"

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=np.float64).reshape(-1)
        self.impostor = np.asarray(self.impostor, dtype=np.float64).reshape(-1)
        if self.kind not in ("similarity", "distance"):
            raise ContractError(f"kind must be 'similarity' or 'distance', got {self.kind!r}")


@dataclass
class RecallReport:
    k_values: list[int]
    recall: dict[int, float]
    num_queries: int
    num_excluded: int = 0

    def to_dict(self) -> dict:
        return {
            "k_values": list(self.k_values),
            "recall": {str(k): v for k, v in self.recall.items()},
            "num_queries": self.num_queries,
            "num_excluded": self.num_excluded,
        }


def decidability_index(s: ScoreSet) -> float:
    """``|mu_i - mu_g| / sqrt((var_g + var_i) / 2)`` with population variances.

    Returns ``inf`` when both variances vanish but the means differ, and 0
    when they vanish and the means agree.
    """
    if s.genuine.size < 2 or s.impostor.size < 2:
        raise InsufficientDataError(
            f"need >= 2 scores per set, got {s.genuine.size} genuine and {s.impostor.size} impostor"
        )
    mu_g, mu_i = s.genuine.mean(), s.impostor.mean()
    pooled = (s.genuine.var() + s.impostor.var()) / 2.0
    gap = abs(mu_i - mu_g)
    if pooled == 0.0:
        return math.inf if gap > 0 else 0.0
    return float(gap / math.sqrt(pooled))


def _unit_rows(Z) -> np.ndarray:
    Z = np.asarray(Z, dtype=np.float64)
    norms = np.linalg.norm(Z, axis=1, keepdims=True)
    return Z / np.maximum(norms, 1e-12)


def cosine_similarity_matrix(Z) -> np.ndarray:
    U = _unit_rows(Z)
    return U @ U.T


def genuine_impostor_scores(Z, labels, kind: str = "distance") -> ScoreSet:
    """Cosine scores of every pair i < j, split by whether labels agree.

    ``kind="distance"`` gives ``1 - cos``; otherwise cosine similarity.
    """
    y = np.asarray(labels, dtype=np.int64)
    if y.size < 2:
        raise InsufficientDataError("need at least 2 samples to form pairs")
    S = cosine_similarity_matrix(Z)
    gen, imp = kernels.pair_partition(S, y)
    if gen.size == 0 or imp.size == 0:
        missing = "genuine" if gen.size == 0 else "impostor"
        raise BatchCompositionError(f"no {missing} pairs among {y.size} samples")
    if kind == "distance":
        gen, imp = 1.0 - gen, 1.0 - imp
    return ScoreSet(gen, imp, kind)


def recall_at_k(Z, labels, k_values=DEFAULT_K) -> RecallReport:
    """Fraction of queries with a same-class sample among their k nearest neighbours.

    Neighbours are ranked by cosine distance, ties broken by lower index; the
    query itself is excluded.  Queries whose class has a single member are
    skipped and counted in ``num_excluded``.
    """
    y = np.asarray(labels, dtype=np.int64)
    n = y.size
    ks = sorted({int(k) for k in k_values})
    if not ks or ks[0] < 1:
        raise ContractError(f"k values must be positive, got {list(k_values)}")
    if ks[-1] >= n:
        raise ContractError(f"max k ({ks[-1]}) must be below the number of samples ({n})")
    D = 1.0 - cosine_similarity_matrix(Z)
    ranks = kernels.first_hit_ranks(D, y)
    valid = ranks >= 0
    q = int(valid.sum())
    if q == 0:
        raise InsufficientDataError("no query has a same-class neighbour")
    r = ranks[valid]
    recall = {k: float(np.count_nonzero(r < k)) / q for k in ks}
    return RecallReport(ks, recall, q, int(n - q))


def histogram(scores, num_bins: int = DEFAULT_BINS, range=DEFAULT_DISTANCE_RANGE):
    """Uniform bins over ``range``; returns ``(edges, counts)``.

    Bins are half-open ``[e_k, e_{k+1})`` except the last, which is closed.
    Values outside the range land in the edge bins.
    """
    x = np.asarray(scores, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise EmptySetError("histogram of an empty score list")
    lo, hi = float(range[0]), float(range[1])
    if num_bins < 1 or not lo < hi:
        raise ContractError(f"need num_bins >= 1 and lo < hi, got {num_bins}, ({lo}, {hi})")
    edges = np.linspace(lo, hi, num_bins + 1)
    return edges, kernels.histogram_counts(x, edges)


def _describe(scores: np.ndarray, num_bins: int, rng) -> dict:
    edges, counts = histogram(scores, num_bins, rng)
    return {
        "mean": float(scores.mean()),
        "std": float(scores.std()),
        "count": int(scores.size),
        "histogram": {"edges": edges.tolist(), "counts": counts.tolist()},
    }


def analyze(Z, labels, num_bins: int = DEFAULT_BINS, range=DEFAULT_DISTANCE_RANGE,
            k_values=DEFAULT_K) -> dict:
    """Cosine-distance separability summary as a JSON-ready dict."""
    s = genuine_impostor_scores(Z, labels, "distance")
    out = {
        "d_prime": decidability_index(s),
        "genuine": _describe(s.genuine, num_bins, range),
        "impostor": _describe(s.impostor, num_bins, range),
        "num_samples": int(np.asarray(labels).size),
    }
    if k_values:
        out["recall"] = recall_at_k(Z, labels, k_values).to_dict()
    return out
