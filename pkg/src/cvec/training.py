"""Speaker-classification training of d-vector and c-vector systems, plus VAD/CPD frame classifiers.

A model is one or two frame-level networks (TDNN, HORNN), each followed by
multi-head self-attentive pooling, optionally fused by a combiner, then a
linear projection to the speaker embedding and an angular-softmax classifier.
"""

from __future__ import annotations

import logging
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from . import numerics as nx
from .combination import VARIANTS, CombinerSpec, combine, init_combiner
from .corpus import Recording
from .errors import ConfigError, TrainingDiverged
from .nets import (
    FEATURE_DIM,
    FRAME_PERIOD,
    CpdConfig,
    HornnConfig,
    TdnnConfig,
    VadConfig,
    context_windows,
    cpd_logits,
    glorot,
    hornn_forward,
    init_cpd,
    init_hornn,
    init_tdnn,
    init_vad,
    profile_configs,
    tdnn_forward,
    vad_logits,
)
from .numerics import Tensor
from .params import ParamStore
from .pooling import PoolingConfig, attention_penalty, init_pooling, self_attentive_pool
from .timeline import Segment, Timeline

log = logging.getLogger(__name__)

SINGLE_SYSTEMS = ("TDNN", "HORNN")
SYSTEMS = SINGLE_SYSTEMS + VARIANTS
NORM_FLOOR = 1e-8


# ---------------------------------------------------------------------------
# loss


def angular_softmax_logits(x, W) -> Tensor:
    """logit_j = ||x|| cos(theta_j) = x . w_j / ||w_j||; rows of W renormalised every call."""
    W = nx.as_tensor(W)
    norms = nx.sqrt(nx.sum(nx.hadamard(W, W), axis=-1, keepdims=True))
    W_hat = nx.divide(W, nx.maximum_scalar(norms, NORM_FLOOR))
    return nx.matmul(x, nx.transpose(W_hat))


def angular_softmax_loss(x, labels, W) -> Tensor:
    """Mean cross-entropy of cosine-softmax logits (margin m = 1).

    ``x`` is (E,) or (B, E); ``labels`` an int or (B,) ints; ``W`` is (C, E).
    """
    x = nx.as_tensor(x)
    single = x.ndim == 1
    if single:
        x = nx.reshape(x, (1, -1))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    logits = angular_softmax_logits(x, W)
    picked = nx.getitem(logits, (np.arange(len(labels)), labels))
    return nx.mean(nx.sub(nx.logsumexp(logits, axis=-1), picked))


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class TrainConfig:
    window: int = 200
    shift: int = 100
    batch_size: int = 32
    learning_rate: float = 0.02
    epochs: int = 8
    margin: int = 1
    mu: float = 0.05
    heldout_fraction: float = 0.1
    clip_norm: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.margin != 1:
            raise ConfigError("only the m = 1 angular softmax is supported")
        if not 0 < self.shift <= self.window:
            raise ConfigError("window shift must be in (0, window]")
        if self.batch_size < 1 or self.epochs < 0 or self.learning_rate <= 0:
            raise ConfigError("batch size >= 1, epochs >= 0 and a positive learning rate are required")
        if not 0 < self.heldout_fraction < 1:
            raise ConfigError("held-out fraction must be in (0, 1)")


@dataclass(frozen=True)
class FrameTrainConfig:
    """SGD settings for the VAD and CPD frame classifiers (balanced class sampling)."""

    steps: int = 300
    batch_size: int = 64
    learning_rate: float = 0.05
    clip_norm: float = 5.0
    positive_radius: int = 5  # CPD: frames this close to a change are positives
    negative_distance: int = 30  # CPD: negatives are at least this far from any change
    seed: int = 0


@dataclass(frozen=True)
class ModelSpec:
    """Which embedding system to build and at what size.

    ``system`` is ``TDNN``, ``HORNN`` or one of the combiner variants, which
    fuse a TDNN and a HORNN.
    """

    system: str = "Stacked_sigmoid"
    profile: str = "tiny"
    speakers: int = 8
    heads: int = 5
    att_hidden: int | None = None
    hornn_stride: int = 10
    embed_dim: int | None = None
    mu: float = 0.05

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ConfigError(f"unknown system {self.system!r}; choose from {', '.join(SYSTEMS)}")
        if self.speakers < 2:
            raise ConfigError("need at least two speakers")
        profile_configs(self.profile)  # validates the profile name

    @property
    def tiny(self) -> bool:
        return self.profile == "tiny"

    @property
    def branches(self) -> tuple[str, ...]:
        if self.system in SINGLE_SYSTEMS:
            return (self.system.lower(),)
        return ("tdnn", "hornn")

    @property
    def tdnn(self) -> TdnnConfig:
        return profile_configs(self.profile)["tdnn"]

    @property
    def hornn(self) -> HornnConfig:
        return profile_configs(self.profile)["hornn"]

    def branch_dim(self, branch: str) -> int:
        return self.tdnn.output_dim if branch == "tdnn" else self.hornn.projection

    def pooling(self, branch: str) -> PoolingConfig:
        hidden = self.att_hidden or (32 if self.tiny else 64)
        stride = self.hornn_stride if branch == "hornn" else 1
        return PoolingConfig(heads=self.heads, hidden=hidden, mu=self.mu, stride=stride)

    @property
    def combiner(self) -> CombinerSpec | None:
        if self.system in SINGLE_SYSTEMS:
            return None
        dims = tuple(self.heads * self.branch_dim(b) for b in self.branches)
        return CombinerSpec(
            self.system,
            input_dims=dims,
            head_counts=(self.heads,) * len(dims),
            rank=min(dims) // 5,
            output_dim=dims[0],
            att_hidden=self.att_hidden or (32 if self.tiny else 64),
            mu=self.mu,
        )

    @property
    def pre_projection_dim(self) -> int:
        comb = self.combiner
        if comb is None:
            return self.heads * self.branch_dim(self.branches[0])
        return comb.out_dim

    @property
    def embedding_dim(self) -> int:
        return self.embed_dim or (32 if self.tiny else 128)


def init_model(spec: ModelSpec, rng: np.random.Generator) -> ParamStore:
    params = ParamStore()
    for branch in spec.branches:
        if branch == "tdnn":
            init_tdnn(params, spec.tdnn, rng, "tdnn")
        else:
            init_hornn(params, spec.hornn, rng, "hornn")
        init_pooling(params, spec.pooling(branch), spec.branch_dim(branch), rng, f"{branch}.pool")
    if spec.combiner is not None:
        init_combiner(params, spec.combiner, rng, "comb")
    params.add("emb.W", glorot(rng, spec.pre_projection_dim, spec.embedding_dim))
    params.add("emb.b", np.zeros(spec.embedding_dim))
    params.add("cls.W", rng.standard_normal((spec.speakers, spec.embedding_dim)))
    return params


class Embedded(NamedTuple):
    embedding: Tensor  # (B, E)
    penalties: list[Tensor]


def embed_windows(windows, spec: ModelSpec, params: ParamStore) -> Embedded:
    """Window-level embeddings for a (B, T, 40) batch."""
    x = nx.as_tensor(windows)
    pooled, penalties = [], []
    for branch in spec.branches:
        if branch == "tdnn":
            H = tdnn_forward(x, spec.tdnn, params, "tdnn")
        else:
            H = hornn_forward(x, spec.hornn, params, "hornn")
        pcfg = spec.pooling(branch)
        p = self_attentive_pool(H, pcfg, params, f"{branch}.pool")
        penalties.append(attention_penalty(p.annotation, pcfg))
        pooled.append(p)
    if spec.combiner is None:
        c = pooled[0].vector
    else:
        cv = combine(pooled, spec.combiner, params, "comb")
        c = cv.combined
        penalties.extend(cv.penalties)
    emb = nx.matmul(c, params["emb.W"]) + params["emb.b"]
    return Embedded(emb, penalties)


def embed_array(windows: np.ndarray, spec: ModelSpec, params: ParamStore, batch: int = 64) -> np.ndarray:
    """Inference-only embeddings as a plain (B, E) array."""
    out = []
    with nx.no_grad():
        for lo in range(0, len(windows), batch):
            out.append(embed_windows(windows[lo : lo + batch], spec, params).embedding.data)
    if not out:
        return np.zeros((0, spec.embedding_dim))
    return np.concatenate(out)


# ---------------------------------------------------------------------------
# windows


class Window(NamedTuple):
    feats: np.ndarray  # (window, dim), replicate-padded if the span is shorter
    label: str
    start: int  # first frame in the stream
    stop: int  # one past the last real frame


def window_offsets(n: int, window: int, shift: int) -> list[tuple[int, int]]:
    """(start, stop) frame spans relative to a segment of ``n`` frames."""
    if n <= 0:
        return []
    if n < window:
        return [(0, n)]
    spans = [(o, o + window) for o in range(0, n - window + 1, shift)]
    tail = spans[-1][0] + shift
    if spans[-1][1] < n and n - tail >= shift:
        spans.append((tail, n))
    return spans


def _pad(chunk: np.ndarray, window: int) -> np.ndarray:
    if chunk.shape[0] == window:
        return chunk
    return np.concatenate([chunk, np.repeat(chunk[-1:], window - chunk.shape[0], axis=0)])


def to_frames(seconds: float) -> int:
    return int(round(seconds / FRAME_PERIOD))


def make_windows(feats: np.ndarray, timeline: Timeline, cfg: TrainConfig = TrainConfig()) -> list[Window]:
    """Fixed-length windows inside every segment of ``timeline``, labelled with the segment label."""
    out = []
    T = feats.shape[0]
    for seg in timeline:
        a, b = to_frames(seg.start), min(T, to_frames(seg.end))
        for lo, hi in window_offsets(b - a, cfg.window, cfg.shift):
            out.append(Window(_pad(feats[a + lo : a + hi], cfg.window), seg.label, a + lo, a + hi))
    return out


# ---------------------------------------------------------------------------
# held-out split


def heldout_split(
    recordings: Sequence[Recording], fraction: float, seed: int
) -> tuple[list[tuple[Recording, Segment]], list[tuple[Recording, Segment]]]:
    """Per speaker, hold out whole segments until ``fraction`` of its speech time is reached.

    Every speaker with two or more segments ends up on both sides.
    """
    rng = np.random.default_rng(seed)
    by_speaker: dict[str, list[tuple[Recording, Segment]]] = {}
    for rec in recordings:
        for seg in rec.reference:
            by_speaker.setdefault(seg.label, []).append((rec, seg))
    train, held = [], []
    for spk in sorted(by_speaker):
        items = by_speaker[spk]
        order = rng.permutation(len(items))
        total = sum(s.duration for _, s in items)
        taken = 0.0
        for rank, i in enumerate(order):
            if len(items) > 1 and rank < len(items) - 1 and (rank == 0 or taken < fraction * total):
                held.append(items[i])
                taken += items[i][1].duration
            else:
                train.append(items[i])
    return train, held


def _windows_of(items, cfg: TrainConfig, speakers: dict[str, int]) -> tuple[np.ndarray, np.ndarray]:
    feats, labels = [], []
    for rec, seg in items:
        for w in make_windows(rec.feats, Timeline(rec.rec_id, [seg]), cfg):
            feats.append(w.feats)
            labels.append(speakers[w.label])
    if not feats:
        return np.zeros((0, cfg.window, FEATURE_DIM)), np.zeros(0, dtype=np.int64)
    return np.stack(feats), np.asarray(labels, dtype=np.int64)


# ---------------------------------------------------------------------------
# optimisation


def clip_gradients(tensors: Sequence[Tensor], max_norm: float) -> float:
    """Scale all gradients in place so their joint L2 norm is at most ``max_norm``."""
    grads = [t.grad for t in tensors if t.grad is not None]
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if not np.isfinite(norm):
        raise TrainingDiverged("non-finite gradient norm")
    if norm > max_norm:
        for g in grads:
            g *= max_norm / norm
    return norm


def sgd_step(params: ParamStore, lr: float, clip_norm: float) -> float:
    tensors = params.tensors()
    norm = clip_gradients(tensors, clip_norm)
    for t in tensors:
        if t.grad is not None:
            t.data -= lr * t.grad
    params.zero_grad()
    return norm


@contextmanager
def _diverges_as(what: str):
    """Turn a non-finite intermediate anywhere in a step into TrainingDiverged."""
    try:
        yield
    except FloatingPointError as exc:
        raise TrainingDiverged(f"{what}: {exc}") from exc


def _checked_backward(loss: Tensor, what: str) -> float:
    value = loss.item()
    if not np.isfinite(value):
        raise TrainingDiverged(f"{what}: loss became {value}")
    nx.backward(loss)
    return value


# ---------------------------------------------------------------------------
# speaker-embedding training


@dataclass
class TrainResult:
    spec: ModelSpec
    params: ParamStore
    speakers: list[str]
    accuracy: list[float] = field(default_factory=list)  # held-out, index 0 is before training
    losses: list[float] = field(default_factory=list)  # mean training loss per epoch


def classify(windows: np.ndarray, spec: ModelSpec, params: ParamStore, batch: int = 64) -> np.ndarray:
    emb = embed_array(windows, spec, params, batch)
    with nx.no_grad():
        return np.argmax(angular_softmax_logits(emb, params["cls.W"]).data, axis=-1) if len(emb) else np.zeros(0, int)


def accuracy(windows: np.ndarray, labels: np.ndarray, spec: ModelSpec, params: ParamStore) -> float:
    if len(labels) == 0:
        return float("nan")
    return float(np.mean(classify(windows, spec, params) == labels))


def train_system(spec: ModelSpec, recordings: Sequence[Recording], cfg: TrainConfig) -> TrainResult:
    """Jointly train every parameter of ``spec`` by SGD on angular softmax plus attention penalties."""
    speakers = sorted({s.label for rec in recordings for s in rec.reference})
    if len(speakers) != spec.speakers:
        spec = replace(spec, speakers=len(speakers))
    if len(speakers) < 2:
        raise ConfigError("training needs at least two labelled speakers")
    index = {s: i for i, s in enumerate(speakers)}
    train_items, held_items = heldout_split(recordings, cfg.heldout_fraction, cfg.seed)
    Xtr, ytr = _windows_of(train_items, cfg, index)
    Xho, yho = _windows_of(held_items, cfg, index)
    if len(ytr) == 0:
        raise ConfigError("no training windows; is the corpus empty?")
    if not (np.all(np.isfinite(Xtr)) and np.all(np.isfinite(Xho))):
        raise ConfigError("training features contain non-finite values")

    rng = np.random.default_rng(cfg.seed)
    params = init_model(spec, rng)
    result = TrainResult(spec, params, speakers)
    result.accuracy.append(accuracy(Xho, yho, spec, params))
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(ytr))
        total = 0.0
        for lo in range(0, len(order), cfg.batch_size):
            sel = order[lo : lo + cfg.batch_size]
            what = f"{spec.system} epoch {epoch}"
            with _diverges_as(what):
                out = embed_windows(Xtr[sel], spec, params)
                loss = angular_softmax_loss(out.embedding, ytr[sel], params["cls.W"])
                for p in out.penalties:
                    loss = loss + p
                total += _checked_backward(loss, what) * len(sel)
            sgd_step(params, cfg.learning_rate, cfg.clip_norm)
        result.losses.append(total / len(ytr))
        result.accuracy.append(accuracy(Xho, yho, spec, params))
        log.info("%s epoch %d loss %.4f held-out acc %.4f", spec.system, epoch, result.losses[-1], result.accuracy[-1])
    return result


# ---------------------------------------------------------------------------
# frame classifiers


def speech_mask(rec: Recording) -> np.ndarray:
    mask = np.zeros(rec.feats.shape[0], dtype=bool)
    for seg in rec.reference:
        mask[to_frames(seg.start) : to_frames(seg.end)] = True
    return mask


def change_frames(rec: Recording) -> np.ndarray:
    return np.array([to_frames(t) for t in rec.reference.change_points()], dtype=np.int64)


def _balanced_batches(pools: list[list[tuple[int, int]]], steps: int, batch: int, rng):
    """Yield (recording index, frame, class) triples, half from each class pool."""
    if any(not p for p in pools):
        raise ConfigError("both classes need at least one example frame")
    half = batch // 2
    for _ in range(steps):
        picks = []
        for cls, pool in enumerate(pools):
            for i in rng.integers(len(pool), size=half if cls == 0 else batch - half):
                picks.append((*pool[i], cls))
        yield picks


def _group_frames(picks) -> dict[int, list[tuple[int, int, int]]]:
    out: dict[int, list] = {}
    for n, (r, t, c) in enumerate(picks):
        out.setdefault(r, []).append((n, t, c))
    return out


def _gather(recordings, picks, left: int, right: int) -> np.ndarray:
    windows = [None] * len(picks)
    for r, items in _group_frames(picks).items():
        frames = np.array([t for _, t, _ in items])
        ctx = context_windows(recordings[r].feats, frames, left, right)
        for (n, _, _), w in zip(items, ctx):
            windows[n] = w
    return np.stack(windows)


def _frame_pools(recordings, labels_of) -> list[list[tuple[int, int]]]:
    pools: list[list[tuple[int, int]]] = [[], []]
    for r, rec in enumerate(recordings):
        lab = labels_of(rec)
        for cls in (0, 1):
            pools[cls].extend((r, int(t)) for t in np.flatnonzero(lab == cls))
    return pools


def train_vad(recordings: Sequence[Recording], cfg: VadConfig, tcfg: FrameTrainConfig) -> ParamStore:
    """Speech/non-speech classifier from reference timelines (speech is class 1)."""
    rng = np.random.default_rng(tcfg.seed)
    params = ParamStore()
    init_vad(params, cfg, rng)
    pools = _frame_pools(recordings, lambda rec: speech_mask(rec).astype(int))
    for step, picks in enumerate(_balanced_batches(pools, tcfg.steps, tcfg.batch_size, rng)):
        x = _gather(recordings, picks, cfg.context, cfg.context)
        y = np.array([c for _, _, c in picks])
        with _diverges_as(f"VAD step {step}"):
            _checked_backward(_cross_entropy(vad_logits(x, cfg, params), y), f"VAD step {step}")
        sgd_step(params, tcfg.learning_rate, tcfg.clip_norm)
    return params


def cpd_labels(rec: Recording, tcfg: FrameTrainConfig) -> np.ndarray:
    """1 near a speaker change, 0 in speech far from every change, -1 elsewhere (unused)."""
    T = rec.feats.shape[0]
    lab = np.full(T, -1)
    changes = change_frames(rec)
    dist = np.full(T, np.iinfo(np.int64).max)
    frames = np.arange(T)
    for c in changes:
        dist = np.minimum(dist, np.abs(frames - c))
    speech = speech_mask(rec)
    lab[speech & (dist > tcfg.negative_distance)] = 0
    lab[dist <= tcfg.positive_radius] = 1
    return lab


def train_cpd(recordings: Sequence[Recording], cfg: CpdConfig, tcfg: FrameTrainConfig) -> ParamStore:
    rng = np.random.default_rng(tcfg.seed)
    params = ParamStore()
    init_cpd(params, cfg, rng)
    pools = _frame_pools(recordings, lambda rec: cpd_labels(rec, tcfg))
    for step, picks in enumerate(_balanced_batches(pools, tcfg.steps, tcfg.batch_size, rng)):
        past = _gather(recordings, picks, cfg.context, 0)
        future = _gather(recordings, picks, 0, cfg.context)
        y = np.array([c for _, _, c in picks])
        with _diverges_as(f"CPD step {step}"):
            _checked_backward(_cross_entropy(cpd_logits(past, future, cfg, params), y), f"CPD step {step}")
        sgd_step(params, tcfg.learning_rate, tcfg.clip_norm)
    return params


def _cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    picked = nx.getitem(logits, (np.arange(len(labels)), labels))
    return nx.mean(nx.sub(nx.logsumexp(logits, axis=-1), picked))
