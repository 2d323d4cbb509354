"""Synthetic multi-speaker "log-Mel" corpus and its on-disk layout.

Each speaker owns a smooth 40-bin spectral template. A speech frame is
template + phone pattern (shared by all speakers) + Gaussian noise, with
phones changing every 5-15 frames; non-speech is low-energy white noise.
Recordings alternate speaker turns separated either by a pause or by a
direct change, so both VAD and CPD have something to find.

Disk layout: ``<corpus>/<split>/<recording>/{feats.f64, ref.rttm}`` where
``feats.f64`` is a 16-byte header (magic ``b"CVF1"``, uint64 T, uint32 dim)
followed by T x dim little-endian doubles.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .nets import FEATURE_DIM, FRAME_PERIOD
from .timeline import Segment, Timeline, read_rttm, write_rttm

FEATS_MAGIC = b"CVF1"


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    speakers: int = 8
    feature_dim: int = FEATURE_DIM
    template_scale: float = 1.0  # spread of speaker templates around the common envelope
    noise_scale: float = 1.0  # per-frame noise std
    phones: int = 6
    phone_scale: float = 0.8
    nonspeech_level: float = -4.0
    nonspeech_scale: float = 0.5
    turn_seconds: tuple[float, float] = (2.0, 6.0)
    pause_seconds: tuple[float, float] = (0.3, 1.0)
    short_pause_seconds: tuple[float, float] = (0.03, 0.12)
    pause_probability: float = 0.4
    short_pause_probability: float = 0.2
    edge_silence_seconds: float = 0.5
    train_recordings: int = 12
    train_turns: int = 16
    eval_recordings: int = 2
    eval_turns: int = 14
    eval_speakers: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.speakers < 2:
            raise ConfigError("need at least two speakers")
        if self.eval_speakers > self.speakers:
            raise ConfigError("eval recordings cannot use more speakers than exist")


@dataclass
class Recording:
    rec_id: str
    feats: np.ndarray  # (T, dim)
    reference: Timeline

    @property
    def duration(self) -> float:
        return self.feats.shape[0] * FRAME_PERIOD


@dataclass
class Corpus:
    spec: SyntheticCorpusSpec
    train: list[Recording] = field(default_factory=list)
    eval: list[Recording] = field(default_factory=list)

    def split(self, name: str) -> list[Recording]:
        return {"train": self.train, "eval": self.eval}[name]


def _smooth_curve(rng: np.random.Generator, dim: int, knots: int = 6) -> np.ndarray:
    xs = np.linspace(0, dim - 1, knots)
    return np.interp(np.arange(dim), xs, rng.standard_normal(knots))


class _Voices:
    def __init__(self, spec: SyntheticCorpusSpec, rng: np.random.Generator):
        d = spec.feature_dim
        self.spec = spec
        self.envelope = np.linspace(1.0, -1.0, d)
        self.templates = np.stack(
            [spec.template_scale * (_smooth_curve(rng, d) + 0.5 * rng.standard_normal(d)) for _ in range(spec.speakers)]
        )
        self.phones = spec.phone_scale * rng.standard_normal((spec.phones, d))

    def speech(self, rng: np.random.Generator, speaker: int, n: int) -> np.ndarray:
        out = np.empty((n, self.spec.feature_dim))
        t = 0
        while t < n:
            dur = int(rng.integers(5, 16))
            out[t : t + dur] = self.phones[rng.integers(self.spec.phones)]
            t += dur
        out += self.envelope + self.templates[speaker]
        out += self.spec.noise_scale * rng.standard_normal(out.shape)
        return out

    def silence(self, rng: np.random.Generator, n: int) -> np.ndarray:
        s = self.spec
        return s.nonspeech_level + s.nonspeech_scale * rng.standard_normal((n, s.feature_dim))


def _frames(seconds: float) -> int:
    return int(round(seconds / FRAME_PERIOD))


def _recording(
    voices: _Voices, rng: np.random.Generator, rec_id: str, speakers: np.ndarray, turns: int
) -> Recording:
    s = voices.spec
    chunks = [voices.silence(rng, _frames(s.edge_silence_seconds))]
    t = chunks[0].shape[0]
    segments = []
    prev = None
    for i in range(turns):
        choices = [k for k in speakers if k != prev]
        spk = int(rng.choice(choices))
        n = _frames(rng.uniform(*s.turn_seconds))
        chunks.append(voices.speech(rng, spk, n))
        segments.append(Segment(t * FRAME_PERIOD, (t + n) * FRAME_PERIOD, f"spk{spk}"))
        t += n
        prev = spk
        if i == turns - 1:
            break
        u = rng.uniform()
        if u < s.pause_probability:
            gap = _frames(rng.uniform(*s.pause_seconds))
        elif u < s.pause_probability + s.short_pause_probability:
            gap = _frames(rng.uniform(*s.short_pause_seconds))
        else:
            gap = 0
        if gap:
            chunks.append(voices.silence(rng, gap))
            t += gap
    chunks.append(voices.silence(rng, _frames(s.edge_silence_seconds)))
    feats = np.concatenate(chunks)
    return Recording(rec_id, feats, Timeline(rec_id, segments))


def generate_synthetic_corpus(spec: SyntheticCorpusSpec) -> Corpus:
    """Deterministic given ``spec.seed``; references are overlap-free."""
    rng = np.random.default_rng(spec.seed)
    voices = _Voices(spec, rng)
    corpus = Corpus(spec)
    all_spk = np.arange(spec.speakers)
    for r in range(spec.train_recordings):
        # cycle speakers so every one of them gets plenty of train and held-out data
        group = np.roll(all_spk, -r * 3)[: max(2, min(4, spec.speakers))]
        corpus.train.append(_recording(voices, rng, f"train{r:03d}", group, spec.train_turns))
    for r in range(spec.eval_recordings):
        group = np.sort(rng.choice(all_spk, size=spec.eval_speakers, replace=False))
        corpus.eval.append(_recording(voices, rng, f"eval{r:03d}", group, spec.eval_turns))
    return corpus


# ---------------------------------------------------------------------------
# disk format


def write_feats(path: str | Path, feats: np.ndarray) -> None:
    feats = np.ascontiguousarray(feats, dtype="<f8")
    T, dim = feats.shape
    Path(path).write_bytes(FEATS_MAGIC + struct.pack("<QI", T, dim) + feats.tobytes())


def read_feats(path: str | Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if len(blob) < 16 or blob[:4] != FEATS_MAGIC:
        raise ValueError(f"{path}: not a feats.f64 file")
    T, dim = struct.unpack_from("<QI", blob, 4)
    if len(blob) != 16 + 8 * T * dim:
        raise ValueError(f"{path}: expected {T}x{dim} values, file size disagrees")
    return np.frombuffer(blob, dtype="<f8", offset=16).reshape(T, dim).astype(np.float64)


def save_recording(rec: Recording, directory: str | Path) -> Path:
    d = Path(directory) / rec.rec_id
    d.mkdir(parents=True, exist_ok=True)
    write_feats(d / "feats.f64", rec.feats)
    write_rttm(d / "ref.rttm", rec.reference)
    return d


def load_recording(directory: str | Path) -> Recording:
    d = Path(directory)
    feats = read_feats(d / "feats.f64")
    ref_path = d / "ref.rttm"
    if ref_path.exists():
        timelines = read_rttm(ref_path)
        ref = timelines.get(d.name, Timeline(d.name, []))
    else:
        ref = Timeline(d.name, [])
    return Recording(d.name, feats, ref)


def save_corpus(corpus: Corpus, root: str | Path) -> None:
    root = Path(root)
    for split in ("train", "eval"):
        for rec in corpus.split(split):
            save_recording(rec, root / split)


def load_split(root: str | Path, split: str) -> list[Recording]:
    base = Path(root) / split
    if not base.is_dir():
        return []
    return [load_recording(d) for d in sorted(base.iterdir()) if (d / "feats.f64").exists()]
