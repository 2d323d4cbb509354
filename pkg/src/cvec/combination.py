"""c-vector structures fusing K window-level d-vectors.

All weights follow the column-vector convention of the formulas they come
from (``W e``, ``U^T e``, ``P z``); inputs may carry any number of leading
batch axes, the combined feature axis is always last.

Variants (names as used in configs): FCFusion, SelfAtt1, SelfAtt2, GatedAdd,
Bilinear_sigmoid, Bilinear_tanh, Stacked_sigmoid, Stacked_tanh.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import numerics as nx
from .errors import ConfigError
from .nets import glorot
from .numerics import Tensor
from .params import ParamStore
from .pooling import PooledEmbedding, PoolingConfig, attention_penalty, default_lambdas, init_pooling, self_attentive_pool

VARIANTS = (
    "FCFusion",
    "SelfAtt1",
    "SelfAtt2",
    "GatedAdd",
    "Bilinear_sigmoid",
    "Bilinear_tanh",
    "Stacked_sigmoid",
    "Stacked_tanh",
)


@dataclass(frozen=True)
class CombinerSpec:
    variant: str
    input_dims: tuple[int, ...] = (640, 640)
    head_counts: tuple[int, ...] = (5, 5)
    rank: int = 128
    output_dim: int = 640
    common_dim: int | None = None  # SelfAtt1 candidate size; defaults to input_dims[0]
    head_common_dim: int | None = None  # SelfAtt2 candidate size; defaults to per-head size
    att_heads: int | None = None  # 1 for SelfAtt1/Stacked, 5 for SelfAtt2
    att_hidden: int = 64
    mu: float = 0.05
    gate_activation: str = "tanh"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown combiner {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if len(self.input_dims) != len(self.head_counts):
            raise ConfigError("one head count per input system")
        for d, g in zip(self.input_dims, self.head_counts):
            if d % g:
                raise ConfigError(f"d-vector size {d} is not divisible by its {g} heads")
        if self.family in ("Bilinear", "Stacked") and self.rank > min(self.bilinear_dims):
            raise ConfigError(f"bilinear rank {self.rank} exceeds min input size {min(self.bilinear_dims)}")
        if self.family in ("Bilinear", "Stacked") and len(self.input_dims) < 2:
            raise ConfigError("bilinear pooling needs at least two inputs")
        if self.family == "Stacked" and len(self.input_dims) != 2:
            raise ConfigError("the stacked structure combines exactly two systems")

    @property
    def family(self) -> str:
        return self.variant.split("_")[0]

    @property
    def activation(self) -> str:
        return self.variant.split("_")[1] if "_" in self.variant else "identity"

    @property
    def candidate_dim(self) -> int:
        return self.common_dim or self.input_dims[0]

    @property
    def head_dims(self) -> tuple[int, ...]:
        return tuple(d // g for d, g in zip(self.input_dims, self.head_counts))

    @property
    def head_candidate_dim(self) -> int:
        return self.head_common_dim or self.head_dims[0]

    @property
    def second_level_heads(self) -> int:
        if self.att_heads is not None:
            return self.att_heads
        return 5 if self.family == "SelfAtt2" else 1

    @property
    def bilinear_dims(self) -> tuple[int, ...]:
        if self.family == "Stacked":
            return (self.candidate_dim * self.second_level_heads, self.input_dims[1])
        return self.input_dims

    def attention_config(self, sequence_length: int) -> PoolingConfig:
        G = self.second_level_heads
        # a single head is smooth over the K candidates; several use the usual schedule
        lambdas = (1.0 / sequence_length,) if G == 1 else default_lambdas(G)
        return PoolingConfig(heads=G, hidden=self.att_hidden, lambdas=lambdas, mu=self.mu)

    @property
    def out_dim(self) -> int:
        if self.family == "SelfAtt1":
            return self.candidate_dim * self.second_level_heads
        if self.family == "SelfAtt2":
            return self.head_candidate_dim * self.second_level_heads
        return self.output_dim


@dataclass
class CVector:
    combined: Tensor  # c, before the final projection
    penalties: list[Tensor]
    annotation: Tensor | None = None


def _lin(W: Tensor, e: Tensor) -> Tensor:
    """W e for column-vector W applied to the last axis of e."""
    e = nx.as_tensor(e)
    if e.ndim == 1:
        return nx.matmul(nx.reshape(e, (1, -1)), nx.transpose(W))[0]
    return nx.matmul(e, nx.transpose(W))


def _lin_t(U: Tensor, e: Tensor) -> Tensor:
    """U^T e for U stored as (in, out)."""
    e = nx.as_tensor(e)
    if e.ndim == 1:
        return nx.matmul(nx.reshape(e, (1, -1)), U)[0]
    return nx.matmul(e, U)


# ---------------------------------------------------------------------------
# parameter creation


def init_combiner(params: ParamStore, spec: CombinerSpec, rng: np.random.Generator, prefix: str = "comb") -> None:
    fam = spec.family
    dims = spec.input_dims
    if fam == "FCFusion":
        params.add(f"{prefix}.W", glorot(rng, sum(dims), spec.output_dim).T.copy())
        params.add(f"{prefix}.b", np.zeros(spec.output_dim))
    elif fam == "SelfAtt1":
        _init_selfatt1(params, spec, rng, prefix, dims)
    elif fam == "SelfAtt2":
        for k, d in enumerate(spec.head_dims, start=1):
            params.add(f"{prefix}.W{k}", glorot(rng, d, spec.head_candidate_dim).T.copy())
        cfg = spec.attention_config(sum(spec.head_counts))
        init_pooling(params, cfg, spec.head_candidate_dim, rng, f"{prefix}.att")
    elif fam == "GatedAdd":
        for k, d in enumerate(dims, start=1):
            params.add(f"{prefix}.W{k}", glorot(rng, d, spec.output_dim).T.copy())
            params.add(f"{prefix}.bw{k}", np.zeros(spec.output_dim))
            params.add(f"{prefix}.U{k}", glorot(rng, d, spec.output_dim).T.copy())
            params.add(f"{prefix}.bu{k}", np.zeros(spec.output_dim))
    elif fam == "Bilinear":
        _init_bilinear(params, spec, rng, prefix, dims)
    elif fam == "Stacked":
        _init_selfatt1(params, spec, rng, f"{prefix}.sa", dims)
        _init_bilinear(params, spec, rng, f"{prefix}.bil", spec.bilinear_dims)


def _init_selfatt1(params, spec: CombinerSpec, rng, prefix: str, dims) -> None:
    for k, d in enumerate(dims, start=1):
        params.add(f"{prefix}.W{k}", glorot(rng, d, spec.candidate_dim).T.copy())
    init_pooling(params, spec.attention_config(len(dims)), spec.candidate_dim, rng, f"{prefix}.att")


def _init_bilinear(params, spec: CombinerSpec, rng, prefix: str, dims) -> None:
    D, O = spec.rank, spec.output_dim
    for k, d in enumerate(dims, start=1):
        params.add(f"{prefix}.U{k}", glorot(rng, d, D))
        params.add(f"{prefix}.V{k}", glorot(rng, d, O).T.copy())
    params.add(f"{prefix}.P", glorot(rng, D, O).T.copy())
    params.add(f"{prefix}.b", np.zeros(O))


# ---------------------------------------------------------------------------
# structures


def fc_fusion(es, params: ParamStore, prefix: str = "comb") -> Tensor:
    """ReLU(W concat(e_1..e_K) + b)."""
    if len(es) < 2:
        raise ConfigError("FC fusion needs at least two d-vectors")
    z = nx.concat([nx.as_tensor(e) for e in es], axis=-1)
    return nx.relu(_lin(params[f"{prefix}.W"], z) + params[f"{prefix}.b"])


def _attend(candidates: list[Tensor], cfg: PoolingConfig, params, prefix: str):
    V = nx.stack(candidates, axis=-2)  # (..., K, d)
    pooled = self_attentive_pool(V, cfg, params, f"{prefix}.att")
    return pooled.vector, attention_penalty(pooled.annotation, cfg), pooled.annotation


def selfatt1_combine(es, spec: CombinerSpec, params: ParamStore, prefix: str = "comb") -> CVector:
    """Attention over the mapped candidates W_k e_k; one weight per system."""
    if len(es) < 1:
        raise ConfigError("SelfAtt1 needs at least one d-vector")
    cands = [_lin(params[f"{prefix}.W{k}"], e) for k, e in enumerate(es, start=1)]
    c, pen, A = _attend(cands, spec.attention_config(len(es)), params, prefix)
    return CVector(c, [pen], A)


def selfatt2_combine(heads, spec: CombinerSpec, params: ParamStore, prefix: str = "comb") -> CVector:
    """Attention over every integrated head vector, each mapped by its system's W_k.

    ``heads[k]`` holds system k's per-head vectors with shape (..., G_k, N_k).
    """
    cands = []
    for k, E in enumerate(heads, start=1):
        E = nx.as_tensor(E)
        if E.ndim == 1:
            E = nx.reshape(E, (1, -1))
        mapped = _lin(params[f"{prefix}.W{k}"], E)
        cands.extend(nx.unbind(mapped, axis=mapped.ndim - 2))
    c, pen, A = _attend(cands, spec.attention_config(len(cands)), params, prefix)
    return CVector(c, [pen], A)


def gated_add_combine(es, spec: CombinerSpec, params: ParamStore, prefix: str = "comb") -> CVector:
    """sum_k f(W_k e_k + b_wk) * sigmoid(U_k e_k + b_uk)."""
    if len(es) < 2:
        raise ConfigError("gated addition needs at least two d-vectors")
    f = nx.ACTIVATIONS[spec.gate_activation]
    total = None
    for k, e in enumerate(es, start=1):
        cand = f(_lin(params[f"{prefix}.W{k}"], e) + params[f"{prefix}.bw{k}"])
        gate = nx.sigmoid(_lin(params[f"{prefix}.U{k}"], e) + params[f"{prefix}.bu{k}"])
        term = nx.hadamard(cand, gate)
        total = term if total is None else total + term
    return CVector(total, [])


def bilinear_core(es, activation: str, params: ParamStore, prefix: str = "comb") -> Tensor:
    """c* = P (f(U_1^T e_1) * ... * f(U_K^T e_K)) + b."""
    f = nx.ACTIVATIONS[activation]
    z = None
    for k, e in enumerate(es, start=1):
        proj = f(_lin_t(params[f"{prefix}.U{k}"], e))
        z = proj if z is None else nx.hadamard(z, proj)
    return _lin(params[f"{prefix}.P"], z) + params[f"{prefix}.b"]


def bilinear_combine_k(es, activation: str, params: ParamStore, prefix: str = "comb", shortcuts: bool = True) -> Tensor:
    """Low-rank bilinear pooling of K >= 2 vectors with shortcut projections V_k e_k."""
    if len(es) < 2:
        raise ConfigError("bilinear pooling needs at least two d-vectors")
    for k, e in enumerate(es, start=1):
        U = params[f"{prefix}.U{k}"]
        if nx.as_tensor(e).shape[-1] != U.shape[0]:
            raise ConfigError(f"input {k} has size {nx.as_tensor(e).shape[-1]}, U{k} expects {U.shape[0]}")
    c = bilinear_core(es, activation, params, prefix)
    if shortcuts:
        for k, e in enumerate(es, start=1):
            c = c + _lin(params[f"{prefix}.V{k}"], e)
    return c


def bilinear_combine(e1, e2, activation: str, params: ParamStore, prefix: str = "comb", shortcuts: bool = True) -> Tensor:
    return bilinear_combine_k([e1, e2], activation, params, prefix, shortcuts)


def stacked_combine(e1, e2, spec: CombinerSpec, params: ParamStore, prefix: str = "comb") -> CVector:
    """c' = SelfAtt1(e1, e2), then c = Bilinear(c', e2)."""
    first = selfatt1_combine([e1, e2], spec, params, f"{prefix}.sa")
    c = bilinear_combine(first.combined, e2, spec.activation, params, f"{prefix}.bil")
    return CVector(c, first.penalties, first.annotation)


def combine(pooled: list[PooledEmbedding], spec: CombinerSpec, params: ParamStore, prefix: str = "comb") -> CVector:
    """Dispatch on the variant, given each system's pooled output."""
    es = [p.vector for p in pooled]
    fam = spec.family
    if fam == "FCFusion":
        return CVector(fc_fusion(es, params, prefix), [])
    if fam == "SelfAtt1":
        return selfatt1_combine(es, spec, params, prefix)
    if fam == "SelfAtt2":
        return selfatt2_combine([p.heads for p in pooled], spec, params, prefix)
    if fam == "GatedAdd":
        return gated_add_combine(es, spec, params, prefix)
    if fam == "Bilinear":
        return CVector(bilinear_combine_k(es, spec.activation, params, prefix), [])
    return stacked_combine(es[0], es[1], spec, params, prefix)


# ---------------------------------------------------------------------------
# full-tensor bilinear forms (small sizes only; used as independent references)


def bilinear_full_oracle(e1, e2, W: np.ndarray, b: np.ndarray, route: str = "form") -> np.ndarray:
    """c_o = e1^T W[:, :, o] e2 + b_o.

    ``route="form"`` evaluates the bilinear form per output; ``route="outer"``
    projects the row-major vectorised outer product with the (O, M*N) matrix
    whose o-th row is the row-major vectorisation of ``W[:, :, o]``.
    """
    e1, e2, W, b = (np.asarray(x, dtype=np.float64) for x in (e1, e2, W, b))
    M, N, O = W.shape
    if route == "form":
        return np.array([e1 @ W[:, :, o] @ e2 for o in range(O)]) + b
    if route == "outer":
        flat = np.stack([W[:, :, o].reshape(-1) for o in range(O)])
        with nx.no_grad():
            z = nx.vectorize(nx.outer(e1, e2)).data
        return flat @ z + b
    raise ValueError(f"unknown route {route!r}")


def tied_low_rank_tensor(U1: np.ndarray, U2: np.ndarray, P: np.ndarray) -> np.ndarray:
    """W[:, :, o] = U1 diag(P[o]) U2^T, the full tensor behind P (U1^T e1 * U2^T e2)."""
    return np.einsum("md,od,nd->mno", U1, P, U2)


def param_names(spec: CombinerSpec, prefix: str = "comb") -> list[str]:
    store = ParamStore()
    init_combiner(store, spec, np.random.default_rng(0), prefix)
    return list(store)


def with_variant(spec: CombinerSpec, variant: str) -> CombinerSpec:
    return replace(spec, variant=variant)
