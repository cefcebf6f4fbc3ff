"""Joint optimization of the embedding network and the class proxies."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import proxy_bank as pb
from .autodiff import Tensor
from .backbone import MlpConfig, MlpParams, embed, embed_array, init_params
from .checkpoint import save_checkpoint
from .dataio import LabeledDataset
from .errors import BatchCompositionError, ConfigError, ContractError, SamplerError
from .losses import LOSS_NAMES, LossConfig, compute_loss, uses_proxies
from .stats_eval import DEFAULT_K, decidability_index, genuine_impostor_scores, recall_at_k

log = logging.getLogger(__name__)

PROXY_KEY = "proxies"


@dataclass
class TrainConfig:
    loss: str = "pd"
    epochs: int = 100
    batch_size: int = 32
    base_lr: float = 1e-3
    weight_decay: float = 1e-4
    proxy_lr_multiplier: float = 1.0
    clip_max_norm: float = 1.0
    tau: float = 1.0
    eps1: float = 1e-6
    eps2: float = 1e-6
    alpha: float = 0.2
    d_loss_eps: float = 1e-6
    proxy_init: str = "random"
    sampler: str = "uniform"
    classes_per_batch: int | None = None
    samples_per_class: int | None = None
    seed: int = 0
    eval_every: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.loss not in LOSS_NAMES:
            raise ConfigError(f"unknown loss {self.loss!r}; expected one of {LOSS_NAMES}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.base_lr >= 0:
            raise ConfigError(f"base_lr must be non-negative, got {self.base_lr}")
        if self.proxy_lr_multiplier < 1:
            raise ConfigError(f"proxy_lr_multiplier must be >= 1, got {self.proxy_lr_multiplier}")
        if not self.clip_max_norm > 0:
            raise ConfigError(f"clip_max_norm must be positive, got {self.clip_max_norm}")
        if self.proxy_init not in ("random", "precomputed"):
            raise ConfigError(f"proxy_init must be 'random' or 'precomputed', got {self.proxy_init!r}")
        if self.sampler == "class_balanced":
            P, K = self.classes_per_batch, self.samples_per_class
            if P is None or K is None or P * K != self.batch_size:
                raise ConfigError(
                    f"class_balanced sampler needs classes_per_batch * samples_per_class == batch_size "
                    f"(got {P} x {K} vs {self.batch_size})"
                )
        elif self.sampler != "uniform":
            raise ConfigError(f"sampler must be 'uniform' or 'class_balanced', got {self.sampler!r}")
        if self.eval_every < 1:
            raise ConfigError("eval_every must be >= 1")
        self.loss_config()  # validates tau / eps ranges

    @classmethod
    def reference_protocol(cls, **overrides) -> "TrainConfig":
        """ResNet-scale settings: 500 epochs at lr 1e-5."""
        base = dict(epochs=500, base_lr=1e-5, weight_decay=1e-4, clip_max_norm=1.0, batch_size=32, tau=1.0)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown training keys: {unknown}")
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def loss_config(self) -> LossConfig:
        return LossConfig(tau=self.tau, eps1=self.eps1, eps2=self.eps2, alpha=self.alpha, d_loss_eps=self.d_loss_eps)


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8


@dataclass
class EpochLog:
    epoch: int
    mean_loss: float
    lr: float
    min_clip_scale: float = 1.0
    validation: dict | None = None

    def to_dict(self) -> dict:
        d = {"stage": "epoch", "epoch": self.epoch, "mean_loss": self.mean_loss, "lr": self.lr,
             "min_clip_scale": self.min_clip_scale}
        if self.validation is not None:
            d["validation"] = self.validation
        return d


@dataclass
class FitResult:
    params: MlpParams
    bank: pb.ProxyBank | None
    logs: list[EpochLog]
    initial_validation: dict | None


# ---------------------------------------------------------------- schedule / optimizer

def cosine_anneal_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    if not 0 <= epoch < total_epochs:
        raise ContractError(f"epoch {epoch} outside [0, {total_epochs})")
    return max(0.0, base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs)))


def global_grad_norm(grads: Mapping[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_grad_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """Rescale all gradients jointly so their global L2 norm is at most ``max_norm``."""
    if not max_norm > 0:
        raise ContractError(f"max_norm must be positive, got {max_norm}")
    norm = global_grad_norm(grads)
    if norm <= max_norm:
        return dict(grads), 1.0
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, scale


def adamw_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: OptimizerState,
               lr, weight_decay: float) -> dict[str, np.ndarray]:
    """One AdamW update with decoupled weight decay.

    ``lr`` is either a float or a per-parameter mapping.  Returns new arrays;
    ``state`` is updated in place.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros_like(p) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ContractError(f"gradient for {name} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        step_lr = lr[name] if isinstance(lr, Mapping) else lr
        new = p * (1.0 - step_lr * weight_decay)
        denom = np.sqrt(v) / math.sqrt(bc2) + state.adam_eps
        out[name] = new - (step_lr / bc1) * m / denom
    return out


# ---------------------------------------------------------------- batching

def sample_batches(labels, batch_size: int, sampler: str = "uniform", seed: int = 0, epoch: int = 0,
                   classes_per_batch: int | None = None, samples_per_class: int | None = None) -> list[np.ndarray]:
    """Index batches for one epoch; deterministic in ``(seed, epoch)``.

    ``uniform`` shuffles and drops the remainder.  ``class_balanced`` draws
    P distinct classes and K samples of each per batch (with replacement
    only when a class has fewer than K members); it yields the same number
    of batches as ``uniform``.
    """
    y = np.asarray(labels, dtype=np.int64)
    n = y.size
    if batch_size > n:
        raise SamplerError(f"batch_size {batch_size} exceeds dataset size {n}")
    rng = np.random.default_rng([seed, epoch])
    nb = n // batch_size
    if sampler == "uniform":
        order = rng.permutation(n)
        return [order[i * batch_size:(i + 1) * batch_size] for i in range(nb)]
    if sampler != "class_balanced":
        raise SamplerError(f"unknown sampler {sampler!r}")
    P, K = classes_per_batch, samples_per_class
    if P is None or K is None or P * K != batch_size:
        raise SamplerError(f"class_balanced needs P * K == batch_size, got {P} x {K} vs {batch_size}")
    classes = np.unique(y)
    if classes.size < P:
        raise SamplerError(f"class_balanced needs {P} classes per batch but only {classes.size} are present")
    members = {int(c): np.flatnonzero(y == c) for c in classes}
    batches = []
    for _ in range(nb):
        chosen = rng.choice(classes, size=P, replace=False)
        parts = []
        for c in chosen:
            pool = members[int(c)]
            parts.append(rng.choice(pool, size=K, replace=pool.size < K))
        batches.append(np.concatenate(parts))
    return batches


# ---------------------------------------------------------------- training

def validate(params: MlpParams, ds: LabeledDataset, k_values=DEFAULT_K) -> dict:
    Z = embed_array(params, ds.features)
    ks = [k for k in k_values if k < len(ds)]
    try:
        scores = genuine_impostor_scores(Z, ds.labels, "distance")
    except BatchCompositionError as exc:
        raise BatchCompositionError(f"validation set '{ds.name}': {exc}") from exc
    return {
        "d_prime": decidability_index(scores),
        "recall": {str(k): v for k, v in recall_at_k(Z, ds.labels, ks).recall.items()},
    }


def _loss_and_grads(cfg: TrainConfig, loss_cfg: LossConfig, arrays: dict[str, np.ndarray],
                    X: np.ndarray, y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
    params = MlpParams.from_arrays({k: v for k, v in arrays.items() if k != PROXY_KEY})
    bank = pb.ProxyBank(Tensor(arrays[PROXY_KEY], requires_grad=True)) if PROXY_KEY in arrays else None
    ad.active_record().reset()
    Z = embed(params, X)
    loss = compute_loss(cfg.loss, Z, y, bank, loss_cfg)
    grads = ad.backward(loss)
    out = {k: grads.of(t) for k, t in params.named().items()}
    if bank is not None:
        out[PROXY_KEY] = grads.of(bank.proxies)
    return loss.item(), out


def _header(cfg: TrainConfig, mlp_cfg: MlpConfig, epoch: int, opt: OptimizerState) -> dict:
    return {
        "kind": "trainer",
        "train_config": cfg.to_dict(),
        "model_config": mlp_cfg.to_dict(),
        "epoch": epoch,
        "rng_state": {"seed": cfg.seed, "next_epoch": epoch},
        "optimizer_step": opt.step,
    }


def fit(cfg: TrainConfig, mlp_cfg: MlpConfig, dataset: LabeledDataset, val_dataset: LabeledDataset | None = None,
        out_dir=None, k_values=DEFAULT_K) -> FitResult:
    """Train backbone and proxies jointly.

    With ``out_dir`` set, writes ``metrics.jsonl`` (one JSON object per
    line: an ``initial`` record, then one per epoch), ``initial.ckpt``,
    ``final.ckpt`` and, if ``checkpoint_every > 0``, periodic
    ``epoch_XXXX.ckpt`` files.
    """
    if dataset.dim != mlp_cfg.input_dim:
        raise ConfigError(f"dataset has {dataset.dim} features, model expects {mlp_cfg.input_dim}")
    loss_cfg = cfg.loss_config()
    params = init_params(mlp_cfg)
    arrays = params.arrays()
    bank = None
    if uses_proxies(cfg.loss):
        if cfg.proxy_init == "precomputed":
            bank = pb.init_precomputed(params, dataset)
        else:
            bank = pb.init_random(dataset.class_count, mlp_cfg.embedding_dim, cfg.seed)
        arrays[PROXY_KEY] = bank.proxies.numpy()
    opt = OptimizerState()
    out = Path(out_dir) if out_dir is not None else None
    metrics = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "initial.ckpt", _header(cfg, mlp_cfg, 0, opt), arrays)
        metrics = open(out / "metrics.jsonl", "w")

    def emit(record: dict) -> None:
        if metrics is not None:
            metrics.write(json.dumps(record, sort_keys=True) + "\n")
            metrics.flush()

    try:
        initial = validate(params, val_dataset, k_values) if val_dataset is not None else None
        emit({"stage": "initial", "validation": initial})
        logs: list[EpochLog] = []
        for epoch in range(cfg.epochs):
            lr = cosine_anneal_lr(cfg.base_lr, epoch, cfg.epochs)
            lrs = {k: (lr * cfg.proxy_lr_multiplier if k == PROXY_KEY else lr) for k in arrays}
            batches = sample_batches(dataset.labels, cfg.batch_size, cfg.sampler, cfg.seed, epoch,
                                     cfg.classes_per_batch, cfg.samples_per_class)
            losses, min_scale = [], 1.0
            for b, idx in enumerate(batches):
                y = dataset.labels[idx]
                try:
                    value, grads = _loss_and_grads(cfg, loss_cfg, arrays, dataset.features[idx], y)
                except BatchCompositionError as exc:
                    raise BatchCompositionError(f"epoch {epoch}, batch {b}: {exc}") from exc
                grads, scale = clip_grad_norm(grads, cfg.clip_max_norm)
                min_scale = min(min_scale, scale)
                arrays = adamw_step(arrays, grads, opt, lrs, cfg.weight_decay)
                losses.append(value)
            entry = EpochLog(epoch, float(np.mean(losses)), lr, min_scale)
            last = epoch == cfg.epochs - 1
            if val_dataset is not None and ((epoch + 1) % cfg.eval_every == 0 or last):
                entry.validation = validate(MlpParams.from_arrays(_backbone(arrays)), val_dataset, k_values)
            logs.append(entry)
            emit(entry.to_dict())
            log.info("epoch %d loss %.6f lr %.3g", epoch, entry.mean_loss, lr)
            if out is not None and cfg.checkpoint_every > 0 and (epoch + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(out / f"epoch_{epoch + 1:04d}.ckpt", _header(cfg, mlp_cfg, epoch + 1, opt), arrays)
        if out is not None:
            save_checkpoint(out / "final.ckpt", _header(cfg, mlp_cfg, cfg.epochs, opt), arrays)
    finally:
        if metrics is not None:
            metrics.close()

    final_params = MlpParams.from_arrays(_backbone(arrays))
    final_bank = bank.with_values(arrays[PROXY_KEY]) if bank is not None else None
    return FitResult(final_params, final_bank, logs, initial)


def _backbone(arrays: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v for k, v in arrays.items() if k != PROXY_KEY}
