"""Learnable class proxies."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .backbone import MlpParams, embed_array, kaiming_uniform
from .errors import ConfigError, MissingClassError

log = logging.getLogger(__name__)


@dataclass
class ProxyBank:
    proxies: Tensor
    init_kind: str = "random"

    @property
    def num_classes(self) -> int:
        return self.proxies.shape[0]

    @property
    def dim(self) -> int:
        return self.proxies.shape[1]

    def with_values(self, values: np.ndarray) -> "ProxyBank":
        return ProxyBank(Tensor(values, requires_grad=True), self.init_kind)


def init_random(C: int, D: int, seed: int) -> ProxyBank:
    """Kaiming-uniform proxies, fan_in = D."""
    if C < 2:
        raise ConfigError(f"need at least 2 classes for a non-empty impostor set, got C={C}")
    if D < 2:
        raise ConfigError(f"proxy dimension must be >= 2, got D={D}")
    rng = np.random.default_rng(seed)
    return ProxyBank(Tensor(kaiming_uniform(rng, D, (C, D)), requires_grad=True), "random")


def init_precomputed(params: MlpParams, dataset) -> ProxyBank:
    """Per-class mean of the current embeddings over the whole training set.

    The mean is stored as-is (not re-normalized); similarity computation
    normalizes proxies on every use.
    """
    C = dataset.class_count
    if C < 2:
        raise ConfigError(f"need at least 2 classes, got C={C}")
    Z = embed_array(params, dataset.features)
    labels = np.asarray(dataset.labels)
    means = np.zeros((C, Z.shape[1]))
    for c in range(C):
        members = Z[labels == c]
        if len(members) == 0:
            raise MissingClassError(f"class {c} has no samples; cannot precompute its proxy")
        means[c] = members.mean(axis=0)
    return ProxyBank(Tensor(means, requires_grad=True), "precomputed")


def normalized(bank: ProxyBank, eps: float = 1e-12) -> Tensor:
    """Unit-norm view of the proxies, differentiable back into the bank."""
    norms = np.linalg.norm(bank.proxies.data, axis=1)
    if np.any(norms < eps):
        log.warning("proxy rows %s have norm below %g; left near zero", np.flatnonzero(norms < eps).tolist(), eps)
    return ad.l2_normalize_rows(bank.proxies, eps)
