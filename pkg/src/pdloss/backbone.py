"""MLP embedding network with L2-normalized output."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigError, DimensionError

NORM_EPS = 1e-12


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int = 32
    hidden_dims: tuple[int, ...] = (64,)
    embedding_dim: int = 32
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise ConfigError("layer widths must be positive")
        if self.embedding_dim < 2:
            raise ConfigError(f"embedding_dim must be >= 2, got {self.embedding_dim}")
        if self.activation != "relu":
            raise ConfigError(f"unsupported activation {self.activation!r}")

    @property
    def layer_dims(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.embedding_dim]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


@dataclass
class MlpParams:
    weights: list[Tensor] = field(default_factory=list)
    biases: list[Tensor] = field(default_factory=list)

    def named(self) -> dict[str, Tensor]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"layer{i}.weight"] = w
            out[f"layer{i}.bias"] = b
        return out

    def arrays(self) -> dict[str, np.ndarray]:
        return {k: v.numpy() for k, v in self.named().items()}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]) -> "MlpParams":
        n = sum(1 for k in arrays if k.endswith(".weight"))
        return cls(
            weights=[Tensor(arrays[f"layer{i}.weight"], requires_grad=True) for i in range(n)],
            biases=[Tensor(arrays[f"layer{i}.bias"], requires_grad=True) for i in range(n)],
        )


def kaiming_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def init_params(cfg: MlpConfig) -> MlpParams:
    rng = np.random.default_rng(cfg.seed)
    dims = cfg.layer_dims
    params = MlpParams()
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        params.weights.append(Tensor(kaiming_uniform(rng, fan_in, (fan_in, fan_out)), requires_grad=True))
        params.biases.append(Tensor(np.zeros(fan_out), requires_grad=True))
    return params


def embed(params: MlpParams, X) -> Tensor:
    """Map rows of ``X`` to unit-norm embeddings."""
    h = ad.as_tensor(X)
    expected = params.weights[0].shape[0]
    if h.ndim != 2 or h.shape[1] != expected:
        raise DimensionError(f"embed: input has shape {h.shape}, network expects {expected} columns")
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = ad.affine(h, w, b)
        if i < last:
            h = ad.relu(h)
    return ad.l2_normalize_rows(h, NORM_EPS)


def embed_array(params: MlpParams, X: np.ndarray) -> np.ndarray:
    """Forward pass without recording, returned as a plain array."""
    with ad.no_grad():
        return embed(params, X).numpy()


def save_backbone(path, cfg: MlpConfig, params: MlpParams, epoch: int = 0) -> None:
    save_checkpoint(path, {"kind": "backbone", "config": cfg.to_dict(), "seed": cfg.seed, "epoch": epoch},
                    params.arrays())


def load_backbone(path) -> tuple[MlpConfig, MlpParams, dict]:
    """Read the backbone part of a backbone or trainer checkpoint."""
    header, tensors = load_checkpoint(path)
    cfg_dict = header.get("config") if header.get("kind") == "backbone" else header.get("model_config")
    if cfg_dict is None:
        raise DimensionError(f"{path}: checkpoint carries no model config")
    cfg = MlpConfig(**cfg_dict)
    layer_arrays = {k: v for k, v in tensors.items() if k.startswith("layer")}
    return cfg, MlpParams.from_arrays(layer_arrays), header
