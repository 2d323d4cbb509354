"""Multi-head self-attentive temporal pooling with the smoothness-controlled penalty."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError
from .nets import glorot
from .numerics import Tensor
from .params import ParamStore


def default_lambdas(heads: int) -> tuple[float, ...]:
    """First ceil(3G/5) heads spiky (1.0), the rest smooth (1/G)."""
    spiky = math.ceil(3 * heads / 5)
    return tuple([1.0] * spiky + [1.0 / heads] * (heads - spiky))


@dataclass(frozen=True)
class PoolingConfig:
    heads: int = 5
    hidden: int = 64
    lambdas: tuple[float, ...] | None = None
    mu: float = 0.05
    stride: int = 1

    def __post_init__(self):
        if self.heads < 1:
            raise ConfigError("need at least one attention head")
        if self.stride < 1:
            raise ConfigError("subsample stride must be >= 1")
        if self.lambdas is None:
            object.__setattr__(self, "lambdas", default_lambdas(self.heads))
        if any(l <= 0 for l in self.lambdas):
            raise ConfigError("penalty lambdas must be positive")


@dataclass
class PooledEmbedding:
    heads: Tensor  # (..., G, N): integrated vectors, one row per head
    vector: Tensor  # (..., G*N): concatenation of the rows
    annotation: Tensor  # (..., T, G)


def init_pooling(params: ParamStore, cfg: PoolingConfig, input_dim: int, rng, prefix: str) -> None:
    params.add(f"{prefix}.W1", glorot(rng, input_dim, cfg.hidden))
    params.add(f"{prefix}.W2", glorot(rng, cfg.hidden, cfg.heads))


def subsample(H, stride: int):
    """Keep frames 0, stride, 2*stride, ... along the time axis (second to last)."""
    if stride < 1:
        raise ConfigError("subsample stride must be >= 1")
    if stride == 1:
        return H
    if isinstance(H, Tensor):
        return nx.take(H, np.arange(0, H.shape[-2], stride), axis=H.ndim - 2)
    return np.asarray(H)[..., ::stride, :]


def annotation_matrix(H, params: ParamStore, prefix: str) -> Tensor:
    """Column-stochastic T x G weights: softmax over time of tanh(H W1) W2."""
    scores = nx.matmul(nx.tanh(nx.matmul(H, params[f"{prefix}.W1"])), params[f"{prefix}.W2"])
    return nx.softmax_columns(scores)


def self_attentive_pool(H, cfg: PoolingConfig, params: ParamStore, prefix: str) -> PooledEmbedding:
    H = subsample(nx.as_tensor(H), cfg.stride)
    if H.shape[-2] < 1:
        raise ConfigError("pooling needs at least one frame")
    A = annotation_matrix(H, params, prefix)
    E = nx.matmul(nx.transpose(A), H)
    return PooledEmbedding(heads=E, vector=nx.vectorize(E, start=E.ndim - 2), annotation=A)


def attention_penalty(A, cfg: PoolingConfig) -> Tensor:
    """mu * ||A^T A - diag(lambda)||_F^2, averaged over any leading batch axes."""
    A = nx.as_tensor(A)
    G = A.shape[-1]
    if len(cfg.lambdas) != G:
        raise ConfigError(f"{len(cfg.lambdas)} lambdas for {G} heads")
    gram = nx.matmul(nx.transpose(A), A)
    diff = nx.sub(gram, np.diag(cfg.lambdas))
    sq = nx.sum(nx.hadamard(diff, diff), axis=(-2, -1))
    return nx.scale(nx.mean(sq) if sq.ndim else sq, cfg.mu)
