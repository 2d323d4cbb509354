"""Frame-level networks: TDNN and high-order RNN extractors, the VAD classifier
and the change-point model body.

Parameters live in a :class:`~cvec.params.ParamStore` under a caller-chosen
prefix, so the same forward function can serve several systems.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .errors import ConfigError, ContractError
from .numerics import Tensor
from .params import ParamStore

FRAME_PERIOD = 0.01
FEATURE_DIM = 40


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-a, a, size=shape or (fan_in, fan_out))


@dataclass(frozen=True)
class TdnnConfig:
    contexts: tuple[tuple[int, ...], ...] = ((-2, -1, 0, 1, 2), (-2, 0, 2), (-3, 0, 3), (0,), (0,), (0,))
    widths: tuple[int, ...] = (256, 256, 256, 256, 256, 128)
    activations: tuple[str, ...] = ("relu", "relu", "relu", "relu", "relu", "linear")
    input_dim: int = FEATURE_DIM

    def __post_init__(self):
        if not (len(self.contexts) == len(self.widths) == len(self.activations)):
            raise ConfigError("TDNN contexts, widths and activations must have equal length")
        for act in self.activations:
            if act not in nx.ACTIVATIONS:
                raise ConfigError(f"unknown activation {act!r}")

    @property
    def dims(self) -> list[tuple[int, int]]:
        """(input, output) size of each layer after splicing."""
        out, prev = [], self.input_dim
        for ctx, w in zip(self.contexts, self.widths):
            out.append((len(ctx) * prev, w))
            prev = w
        return out

    @property
    def output_dim(self) -> int:
        return self.widths[-1]

    @property
    def left_context(self) -> int:
        return -sum(min(c) for c in self.contexts)

    @property
    def right_context(self) -> int:
        return sum(max(c) for c in self.contexts)

    @property
    def receptive_field(self) -> int:
        return self.left_context + self.right_context + 1


@dataclass(frozen=True)
class HornnConfig:
    input_dim: int = FEATURE_DIM
    hidden: int = 256
    lags: tuple[int, ...] = (1, 4)
    projection: int = 128
    activation: str = "relu"

    def __post_init__(self):
        if any(l <= 0 for l in self.lags) or len(set(self.lags)) != len(self.lags):
            raise ConfigError("HORNN lags must be positive and distinct")
        if self.activation not in nx.ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")


@dataclass(frozen=True)
class VadConfig:
    context: int = 27
    layers: int = 7
    hidden: int = 256
    feature_dim: int = FEATURE_DIM

    @property
    def window(self) -> int:
        return 2 * self.context + 1

    @property
    def input_dim(self) -> int:
        return self.window * self.feature_dim


@dataclass(frozen=True)
class CpdConfig:
    context: int = 50
    tdnn: TdnnConfig = field(default_factory=TdnnConfig)
    rnn: HornnConfig = field(default_factory=lambda: HornnConfig(input_dim=128, hidden=256, lags=(1,), projection=128))

    def __post_init__(self):
        if self.rnn.input_dim != self.tdnn.output_dim:
            raise ConfigError("CPD recurrent encoder input must match the TDNN output size")

    @property
    def window(self) -> int:
        return self.context + 1


def tiny_tdnn(input_dim: int = FEATURE_DIM, width: int = 64, out: int = 32) -> TdnnConfig:
    return TdnnConfig(widths=(width,) * 5 + (out,), input_dim=input_dim)


def profile_configs(profile: str) -> dict:
    """Default network configs for the ``full`` profile or the quarter-width ``tiny`` one."""
    if profile == "full":
        return {
            "tdnn": TdnnConfig(),
            "hornn": HornnConfig(),
            "vad": VadConfig(),
            "cpd": CpdConfig(),
        }
    if profile == "tiny":
        # every width divided by four
        return {
            "tdnn": tiny_tdnn(),
            "hornn": HornnConfig(hidden=64, projection=32),
            "vad": VadConfig(hidden=64),
            "cpd": CpdConfig(tdnn=tiny_tdnn(), rnn=HornnConfig(input_dim=32, hidden=64, lags=(1,), projection=32)),
        }
    raise ConfigError(f"unknown profile {profile!r}")


# ---------------------------------------------------------------------------
# parameter initialisation


def init_tdnn(params: ParamStore, cfg: TdnnConfig, rng: np.random.Generator, prefix: str = "tdnn") -> None:
    for i, (fan_in, fan_out) in enumerate(cfg.dims, start=1):
        params.add(f"{prefix}.L{i}.W", glorot(rng, fan_in, fan_out))
        params.add(f"{prefix}.L{i}.b", np.zeros(fan_out))


def init_hornn(params: ParamStore, cfg: HornnConfig, rng: np.random.Generator, prefix: str = "hornn") -> None:
    params.add(f"{prefix}.W", glorot(rng, cfg.input_dim, cfg.hidden))
    params.add(f"{prefix}.b", np.zeros(cfg.hidden))
    for lag in cfg.lags:
        params.add(f"{prefix}.U{lag}", glorot(rng, cfg.hidden, cfg.hidden) / len(cfg.lags))
    params.add(f"{prefix}.proj", glorot(rng, cfg.hidden, cfg.projection))


def init_vad(params: ParamStore, cfg: VadConfig, rng: np.random.Generator, prefix: str = "vad") -> None:
    prev = cfg.input_dim
    for i in range(1, cfg.layers + 1):
        params.add(f"{prefix}.L{i}.W", glorot(rng, prev, cfg.hidden))
        params.add(f"{prefix}.L{i}.b", np.zeros(cfg.hidden))
        prev = cfg.hidden
    params.add(f"{prefix}.out.W", glorot(rng, prev, 2))
    params.add(f"{prefix}.out.b", np.zeros(2))


def init_cpd(params: ParamStore, cfg: CpdConfig, rng: np.random.Generator, prefix: str = "cpd") -> None:
    init_tdnn(params, cfg.tdnn, rng, f"{prefix}.tdnn")
    init_hornn(params, cfg.rnn, rng, f"{prefix}.rnn")
    params.add(f"{prefix}.out.W", glorot(rng, cfg.rnn.projection, 2))
    params.add(f"{prefix}.out.b", np.zeros(2))


# ---------------------------------------------------------------------------
# forward passes


def _batched(x) -> tuple[Tensor, bool]:
    x = nx.as_tensor(x)
    if x.ndim == 2:
        return nx.reshape(x, (1,) + x.shape), False
    if x.ndim != 3:
        raise ContractError(f"expected (T, D) or (B, T, D) features, got {x.shape}")
    return x, True


def _unbatch(y: Tensor, batched: bool) -> Tensor:
    return y if batched else nx.reshape(y, y.shape[1:])


def tdnn_forward(feats, cfg: TdnnConfig, params: ParamStore, prefix: str = "tdnn") -> Tensor:
    """Frame-level d-vectors, one per input frame.

    The input is replicate-padded by the total left/right context, so the
    output at frame t depends on frames t-7..t+7 only (default contexts).
    """
    x, batched = _batched(feats)
    if x.shape[-1] != cfg.input_dim:
        raise ConfigError(f"TDNN expects {cfg.input_dim}-dim features, got {x.shape[-1]}")
    T = x.shape[1]
    if T < 1:
        raise ContractError("empty feature sequence")
    idx = np.clip(np.arange(-cfg.left_context, T + cfg.right_context), 0, T - 1)
    h = nx.take(x, idx, axis=1)
    for i, (ctx, act) in enumerate(zip(cfg.contexts, cfg.activations), start=1):
        lo, hi = min(ctx), max(ctx)
        n = h.shape[1] - (hi - lo)
        parts = [h[:, o - lo : o - lo + n] for o in ctx]
        spliced = parts[0] if len(parts) == 1 else nx.concat(parts, axis=-1)
        h = nx.matmul(spliced, params[f"{prefix}.L{i}.W"]) + params[f"{prefix}.L{i}.b"]
        h = nx.ACTIVATIONS[act](h)
    return _unbatch(h, batched)


def hornn_forward(
    feats, cfg: HornnConfig, params: ParamStore, prefix: str = "hornn", last_only: bool = False
) -> Tensor:
    """h(t) = f(W x(t) + sum_l U_l h(t-l) + b), d(t) = proj h(t); h(t<1) = 0."""
    x, batched = _batched(feats)
    if x.shape[-1] != cfg.input_dim:
        raise ConfigError(f"HORNN expects {cfg.input_dim}-dim input, got {x.shape[-1]}")
    act = nx.ACTIVATIONS[cfg.activation]
    drive = nx.unbind(nx.matmul(x, params[f"{prefix}.W"]) + params[f"{prefix}.b"], axis=1)
    recur = [(lag, params[f"{prefix}.U{lag}"]) for lag in cfg.lags]
    states: list[Tensor] = []
    for t, z in enumerate(drive):
        for lag, U in recur:
            if t - lag >= 0:
                z = z + nx.matmul(states[t - lag], U)
        states.append(act(z))
    proj = params[f"{prefix}.proj"]
    if last_only:
        last = nx.matmul(states[-1], proj)
        return last if batched else last[0]
    return _unbatch(nx.matmul(nx.stack(states, axis=1), proj), batched)


def vad_logits(window, cfg: VadConfig, params: ParamStore, prefix: str = "vad") -> Tensor:
    x, batched = _batched(window)
    if x.shape[1] != cfg.window or x.shape[2] != cfg.feature_dim:
        raise ContractError(f"VAD window must be {cfg.window}x{cfg.feature_dim}, got {x.shape[1:]}")
    h = nx.reshape(x, (x.shape[0], cfg.input_dim))
    for i in range(1, cfg.layers + 1):
        h = nx.relu(nx.matmul(h, params[f"{prefix}.L{i}.W"]) + params[f"{prefix}.L{i}.b"])
    logits = nx.matmul(h, params[f"{prefix}.out.W"]) + params[f"{prefix}.out.b"]
    return logits if batched else logits[0]


def vad_forward(window, cfg: VadConfig, params: ParamStore, prefix: str = "vad") -> Tensor:
    """Speech/non-speech posterior pair; index 1 is speech."""
    return nx.softmax(vad_logits(window, cfg, params, prefix), axis=-1)


def cpd_encode(seq, cfg: CpdConfig, params: ParamStore, prefix: str = "cpd") -> Tensor:
    """Summary vector of a context whose last frame is the current frame."""
    h = tdnn_forward(seq, cfg.tdnn, params, f"{prefix}.tdnn")
    return hornn_forward(h, cfg.rnn, params, f"{prefix}.rnn", last_only=True)


def cpd_fused(past, future, cfg: CpdConfig, params: ParamStore, prefix: str = "cpd") -> Tensor:
    """Hadamard product of the past encoding and the time-reversed future encoding."""
    past, pb = _batched(past)
    future, fb = _batched(future)
    if past.shape[1] != cfg.window or future.shape[1] != cfg.window:
        raise ContractError(f"CPD contexts must be {cfg.window} frames long")
    fused = nx.hadamard(
        cpd_encode(past, cfg, params, prefix),
        cpd_encode(nx.flip(future, axis=1), cfg, params, prefix),
    )
    return fused if (pb or fb) else fused[0]


def cpd_logits(past, future, cfg: CpdConfig, params: ParamStore, prefix: str = "cpd") -> Tensor:
    fused = cpd_fused(past, future, cfg, params, prefix)
    return nx.matmul(fused, params[f"{prefix}.out.W"]) + params[f"{prefix}.out.b"] if fused.ndim == 2 else (
        nx.matmul(nx.reshape(fused, (1, -1)), params[f"{prefix}.out.W"]) + params[f"{prefix}.out.b"]
    )[0]


def cpd_forward(past, future, cfg: CpdConfig, params: ParamStore, prefix: str = "cpd") -> Tensor:
    """(non-change, change) posterior pair for the frame shared by both contexts."""
    return nx.softmax(cpd_logits(past, future, cfg, params, prefix), axis=-1)


# ---------------------------------------------------------------------------
# stream helpers (inference only)


def context_windows(feats: np.ndarray, frames: np.ndarray, left: int, right: int) -> np.ndarray:
    """Gather (len(frames), left+right+1, D) replicate-padded context windows."""
    T = feats.shape[0]
    idx = np.clip(frames[:, None] + np.arange(-left, right + 1)[None, :], 0, T - 1)
    return feats[idx]


def vad_posteriors(feats: np.ndarray, cfg: VadConfig, params: ParamStore, chunk: int = 2048) -> np.ndarray:
    """Per-frame speech posterior of a whole stream."""
    T = feats.shape[0]
    out = np.zeros(T)
    with nx.no_grad():
        for lo in range(0, T, chunk):
            frames = np.arange(lo, min(T, lo + chunk))
            win = context_windows(feats, frames, cfg.context, cfg.context)
            out[frames] = vad_forward(win, cfg, params).data[:, 1]
    return out


def cpd_posteriors(
    feats: np.ndarray, frames: np.ndarray, cfg: CpdConfig, params: ParamStore, chunk: int = 512
) -> np.ndarray:
    """Change posterior at each requested frame of a stream."""
    out = np.zeros(len(frames))
    with nx.no_grad():
        for lo in range(0, len(frames), chunk):
            sel = np.asarray(frames[lo : lo + chunk])
            past = context_windows(feats, sel, cfg.context, 0)
            future = context_windows(feats, sel, 0, cfg.context)
            out[lo : lo + len(sel)] = cpd_forward(past, future, cfg, params).data[:, 1]
    return out
