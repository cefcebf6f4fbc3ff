"""PD-Loss and the D-Loss, ProxyNCA and batch-all triplet baselines.

All losses take unit-norm embeddings ``Z`` (the backbone output) and integer
labels, and return a scalar :class:`~pdloss.autodiff.Tensor` wired into the
active computation record.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor
from .errors import BatchCompositionError, ConfigError, DimensionError, EmptySetError, LabelError
from .proxy_bank import ProxyBank, normalized

LOSS_NAMES = ("pd", "dloss", "proxynca", "triplet")


@dataclass(frozen=True)
class LossConfig:
    tau: float = 1.0
    eps1: float = 1e-6
    eps2: float = 1e-6
    alpha: float = 0.2
    d_loss_eps: float = 1e-6

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        for name in ("eps1", "eps2"):
            v = getattr(self, name)
            if not 0 < v <= 1e-2:
                raise ConfigError(f"{name} must lie in (0, 1e-2], got {v}")
        if not self.d_loss_eps > 0:
            raise ConfigError(f"d_loss_eps must be positive, got {self.d_loss_eps}")


@dataclass
class SimilarityPartition:
    s_gen: Tensor
    s_imp: Tensor


@dataclass
class DistributionStats:
    mu_gen: Tensor
    var_gen: Tensor
    mu_imp: Tensor
    var_imp: Tensor

    def values(self) -> tuple[float, float, float, float]:
        return (self.mu_gen.item(), self.var_gen.item(), self.mu_imp.item(), self.var_imp.item())


def _labels(labels, C: int | None = None) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    if C is not None:
        bad = np.flatnonzero((y < 0) | (y >= C))
        if bad.size:
            i = int(bad[0])
            raise LabelError(f"label {int(y[i])} at batch index {i} is outside [0, {C})")
    return y


# ---------------------------------------------------------------- PD-Loss

def scaled_similarities(Z: Tensor, bank: ProxyBank, tau: float) -> Tensor:
    """``S[i, c] = z_i . p_c / tau`` against L2-normalized proxies."""
    if not tau > 0:
        raise ConfigError(f"tau must be positive, got {tau}")
    Z = ad.as_tensor(Z)
    if Z.ndim != 2 or Z.shape[1] != bank.dim:
        raise DimensionError(f"embeddings {Z.shape} vs proxy bank {bank.proxies.shape}")
    P = normalized(bank)
    return ad.matmul(Z, ad.transpose(P)) * (1.0 / tau)


def partition_similarities(S: Tensor, labels) -> SimilarityPartition:
    """Split ``S`` into genuine entries ``S[i, y_i]`` and impostor entries ``S[i, c != y_i]``.

    Impostors are in (i, c) lexicographic order.
    """
    B, C = S.shape
    y = _labels(labels, C)
    if y.size != B:
        raise DimensionError(f"{y.size} labels for {B} similarity rows")
    rows = np.arange(B)
    gen_idx = rows * C + y
    mask = np.ones((B, C), dtype=bool)
    mask[rows, y] = False
    imp_idx = np.flatnonzero(mask)
    return SimilarityPartition(ad.take(S, gen_idx), ad.take(S, imp_idx))


def batch_stats(p: SimilarityPartition) -> DistributionStats:
    if p.s_gen.size == 0 or p.s_imp.size == 0:
        raise EmptySetError("genuine and impostor sets must both be non-empty")
    return DistributionStats(ad.mean(p.s_gen), ad.variance(p.s_gen), ad.mean(p.s_imp), ad.variance(p.s_imp))


def pd_loss(stats: DistributionStats, eps1: float = 1e-6, eps2: float = 1e-6) -> Tensor:
    """``-ln(mu_gen - mu_imp + eps1) + 0.5 ln(var_gen + var_imp + eps2)``.

    Each log is floored at its own epsilon (see ``ln_clamped``).
    """
    gap = stats.mu_gen - stats.mu_imp + eps1
    spread = stats.var_gen + stats.var_imp + eps2
    return -ad.ln_clamped(gap, eps1) + 0.5 * ad.ln_clamped(spread, eps2)


def pd_loss_from_batch(Z: Tensor, labels, bank: ProxyBank, cfg: LossConfig = LossConfig()) -> Tensor:
    S = scaled_similarities(Z, bank, cfg.tau)
    return pd_loss(batch_stats(partition_similarities(S, labels)), cfg.eps1, cfg.eps2)


# ---------------------------------------------------------------- baselines

def d_loss_batch(Z: Tensor, labels, d_loss_eps: float = 1e-6) -> Tensor:
    """Inverse decidability over all within-batch pairs (cosine similarity).

    ``sqrt((var_g + var_i) / 2) / (|mu_i - mu_g| + eps)``
    """
    Z = ad.as_tensor(Z)
    y = _labels(labels)
    if y.size != Z.shape[0]:
        raise DimensionError(f"{y.size} labels for {Z.shape[0]} embeddings")
    gen_idx, imp_idx = kernels.pair_indices(y)
    if gen_idx.size == 0 or imp_idx.size == 0:
        missing = "genuine" if gen_idx.size == 0 else "impostor"
        counts = np.bincount(y).tolist()
        raise BatchCompositionError(
            f"D-Loss batch has no {missing} pairs (batch size {y.size}, per-class counts {counts})"
        )
    S = ad.matmul(Z, ad.transpose(Z))
    g, i = ad.take(S, gen_idx), ad.take(S, imp_idx)
    spread = ad.sqrt((ad.variance(g) + ad.variance(i)) * 0.5)
    return spread / (ad.abs_(ad.mean(i) - ad.mean(g)) + d_loss_eps)


def proxy_nca_loss(Z: Tensor, labels, bank: ProxyBank) -> Tensor:
    """Batch mean of ``d(z, p_y) + log sum_{k != y} exp(-d(z, p_k))``.

    ``d`` is squared Euclidean distance to the normalized proxy.  The
    denominator excludes the genuine proxy.
    """
    Z = ad.as_tensor(Z)
    B, C = Z.shape[0], bank.num_classes
    if C < 2:
        raise ConfigError("ProxyNCA needs at least 2 classes")
    y = _labels(labels, C)
    if Z.shape[1] != bank.dim:
        raise DimensionError(f"embeddings {Z.shape} vs proxy bank {bank.proxies.shape}")
    D = ad.sq_dist_matrix(Z, normalized(bank))
    part = partition_similarities(D, y)
    d_neg = ad.reshape(part.s_imp, (B, C - 1))
    per_sample = part.s_gen + ad.logsumexp_rows(-d_neg)
    return ad.mean(per_sample)


def triplet_loss_batch_all(Z: Tensor, labels, alpha: float = 0.2) -> Tensor:
    """Mean hinge ``max(0, d(a,p)^2 - d(a,n)^2 + alpha)`` over every valid triplet."""
    Z = ad.as_tensor(Z)
    y = _labels(labels)
    if y.size != Z.shape[0]:
        raise DimensionError(f"{y.size} labels for {Z.shape[0]} embeddings")
    ap, an = kernels.triplet_indices(y)
    if ap.size == 0:
        raise BatchCompositionError(
            f"no valid triplets in batch (per-class counts {np.bincount(y).tolist()})"
        )
    D = ad.sq_dist_matrix(Z, Z)
    return ad.mean(ad.relu(ad.take(D, ap) - ad.take(D, an) + alpha))


def compute_loss(name: str, Z: Tensor, labels, bank: ProxyBank | None, cfg: LossConfig) -> Tensor:
    """Dispatch by loss name: ``pd``, ``dloss``, ``proxynca`` or ``triplet``."""
    if name == "pd":
        return pd_loss_from_batch(Z, labels, bank, cfg)
    if name == "dloss":
        return d_loss_batch(Z, labels, cfg.d_loss_eps)
    if name == "proxynca":
        return proxy_nca_loss(Z, labels, bank)
    if name == "triplet":
        return triplet_loss_batch_all(Z, labels, cfg.alpha)
    raise ConfigError(f"unknown loss {name!r}; expected one of {LOSS_NAMES}")


def uses_proxies(name: str) -> bool:
    return name in ("pd", "proxynca")
