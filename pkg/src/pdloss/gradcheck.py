"""Finite-difference checks over every differentiable op and loss pipeline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, finite_diff_check
from .backbone import MlpConfig, MlpParams, embed, init_params
from .losses import LossConfig, d_loss_batch, pd_loss_from_batch, proxy_nca_loss, triplet_loss_batch_all
from .proxy_bank import ProxyBank

H = 1e-5


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    seeds: int

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def _away_from_zero(rng, shape, margin=0.1):
    return rng.uniform(margin, 1.0, size=shape) * rng.choice([-1.0, 1.0], size=shape)


def _op_checks(rng: np.random.Generator) -> dict[str, float]:
    r = {}
    A, B = rng.standard_normal((3, 2)), rng.standard_normal((2, 4))
    w = rng.standard_normal((3, 4))
    r["matmul/A"] = finite_diff_check(lambda a: ad.sum_(ad.matmul(a, Tensor(B)) * Tensor(w)), A, H)
    r["matmul/B"] = finite_diff_check(lambda b: ad.sum_(ad.matmul(Tensor(A), b) * Tensor(w)), B, H)

    X, W, b = rng.standard_normal((5, 3)), rng.standard_normal((3, 4)), rng.standard_normal(4)
    wa = rng.standard_normal((5, 4))
    r["affine/X"] = finite_diff_check(lambda x: ad.sum_(ad.affine(x, Tensor(W), Tensor(b)) * Tensor(wa)), X, H)
    r["affine/W"] = finite_diff_check(lambda m: ad.sum_(ad.affine(Tensor(X), m, Tensor(b)) * Tensor(wa)), W, H)
    r["affine/b"] = finite_diff_check(lambda v: ad.sum_(ad.affine(Tensor(X), Tensor(W), v) * Tensor(wa)), b, H)

    R = _away_from_zero(rng, (4, 5))
    wr = rng.standard_normal((4, 5))
    r["relu"] = finite_diff_check(lambda x: ad.sum_(ad.relu(x) * Tensor(wr)), R, H)

    N = rng.standard_normal((4, 8))
    wn = rng.standard_normal((4, 8))
    r["l2_normalize_rows"] = finite_diff_check(lambda x: ad.sum_(ad.l2_normalize_rows(x) * Tensor(wn)), N, H)

    v = rng.standard_normal(16)
    r["mean"] = finite_diff_check(ad.mean, v, H)
    r["variance"] = finite_diff_check(ad.variance, v, H)
    r["ln_clamped"] = finite_diff_check(lambda x: ad.ln_clamped(ad.mean(x), 1e-6), rng.uniform(0.5, 2.0, 4), H)

    pos = rng.uniform(0.2, 2.0, 6)
    wp = rng.standard_normal(6)
    r["sqrt"] = finite_diff_check(lambda x: ad.sum_(ad.sqrt(x) * Tensor(wp)), pos, H)
    r["abs"] = finite_diff_check(lambda x: ad.sum_(ad.abs_(x) * Tensor(wp)), _away_from_zero(rng, 6), H)
    r["exp"] = finite_diff_check(lambda x: ad.sum_(ad.exp(x) * Tensor(wp)), rng.standard_normal(6), H)
    r["div"] = finite_diff_check(lambda x: ad.sum_(ad.div(Tensor(wp), x)), pos, H)

    L = rng.standard_normal((3, 5))
    wl = rng.standard_normal(3)
    r["logsumexp_rows"] = finite_diff_check(lambda x: ad.sum_(ad.logsumexp_rows(x) * Tensor(wl)), L, H)
    idx = rng.integers(0, 15, size=10)
    wt = rng.standard_normal(10)
    r["take"] = finite_diff_check(lambda x: ad.sum_(ad.take(x, idx) * Tensor(wt)), L, H)

    P, Q = rng.standard_normal((4, 3)), rng.standard_normal((5, 3))
    wd = rng.standard_normal((4, 5))
    r["sq_dist_matrix/A"] = finite_diff_check(lambda a: ad.sum_(ad.sq_dist_matrix(a, Tensor(Q)) * Tensor(wd)), P, H)
    r["sq_dist_matrix/B"] = finite_diff_check(lambda q: ad.sum_(ad.sq_dist_matrix(Tensor(P), q) * Tensor(wd)), Q, H)
    return r


def _embed_checks(rng: np.random.Generator, seed: int) -> dict[str, float]:
    cfg = MlpConfig(input_dim=6, hidden_dims=(8,), embedding_dim=4, seed=seed)
    base = init_params(cfg).arrays()
    X = rng.standard_normal((5, 6))
    w = Tensor(rng.standard_normal((5, 4)))
    r = {}
    for name in base:
        def f(t, name=name):
            arrays = {k: (t if k == name else Tensor(v)) for k, v in base.items()}
            n = len(arrays) // 2
            p = MlpParams([arrays[f"layer{i}.weight"] for i in range(n)], [arrays[f"layer{i}.bias"] for i in range(n)])
            return ad.sum_(embed(p, Tensor(X)) * w)
        r[f"embed/{name}"] = finite_diff_check(f, base[name], H)
    return r


def pd_instance(rng: np.random.Generator, B: int = 8, D: int = 16, C: int = 3):
    """Raw batch near its own proxies, so the mean gap stays unclamped."""
    labels = np.concatenate([np.arange(C), rng.integers(0, C, size=B - C)])
    proxies = rng.standard_normal((C, D))
    X = 2.0 * proxies[labels] / np.linalg.norm(proxies[labels], axis=1, keepdims=True)
    X = X + 0.5 * rng.standard_normal((B, D))
    return X, labels, proxies


def _loss_checks(rng: np.random.Generator) -> dict[str, float]:
    r = {}
    cfg = LossConfig()

    X, y, P = pd_instance(rng)
    r["pd_loss/Z"] = finite_diff_check(
        lambda x: pd_loss_from_batch(ad.l2_normalize_rows(x), y, ProxyBank(Tensor(P)), cfg), X, H)
    r["pd_loss/proxies"] = finite_diff_check(
        lambda p: pd_loss_from_batch(ad.l2_normalize_rows(Tensor(X)), y, ProxyBank(p), cfg), P, H)

    r["proxynca/Z"] = finite_diff_check(
        lambda x: proxy_nca_loss(ad.l2_normalize_rows(x), y, ProxyBank(Tensor(P))), X, H)
    r["proxynca/proxies"] = finite_diff_check(
        lambda p: proxy_nca_loss(ad.l2_normalize_rows(Tensor(X)), y, ProxyBank(p)), P, H)

    yd = np.repeat(np.arange(3), 4)
    Xd = rng.standard_normal((12, 8))
    r["dloss/Z"] = finite_diff_check(lambda x: d_loss_batch(ad.l2_normalize_rows(x), yd, cfg.d_loss_eps), Xd, H)

    Xt = rng.standard_normal((9, 6))
    yt = np.repeat(np.arange(3), 3)
    r["triplet/Z"] = finite_diff_check(
        lambda x: triplet_loss_batch_all(ad.l2_normalize_rows(x), yt, alpha=1.0), Xt, H)
    return r


def run_gradchecks(seed: int = 0, num_seeds: int = 5) -> list[CheckResult]:
    """Worst relative error per check over ``num_seeds`` random instances."""
    worst: dict[str, float] = {}
    for s in range(seed, seed + num_seeds):
        rng = np.random.default_rng(s)
        batch = {**_op_checks(rng), **_embed_checks(rng, s), **_loss_checks(rng)}
        for name, err in batch.items():
            worst[name] = max(worst.get(name, 0.0), err)
    return [CheckResult(name, err, num_seeds) for name, err in worst.items()]


