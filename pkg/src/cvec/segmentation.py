"""Frame posteriors to speech segments (VAD) and to speaker-homogeneous segments (CPD)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import median_filter

from .errors import ConfigError
from .nets import FRAME_PERIOD, CpdConfig, VadConfig, cpd_posteriors, vad_posteriors
from .params import ParamStore
from .timeline import RttmError, Segment, Timeline, format_rttm, parse_rttm, read_rttm, write_rttm

__all__ = [
    "RttmError",
    "Segment",
    "SegmenterConfig",
    "Timeline",
    "cpd_eval",
    "cpd_segment",
    "format_rttm",
    "parse_rttm",
    "read_rttm",
    "vad_segment",
    "write_rttm",
]

TICKS_PER_SECOND = 10_000


@dataclass(frozen=True)
class SegmenterConfig:
    speech_threshold: float = 0.5
    min_nonspeech: float = 0.2  # seconds; shorter gaps are bridged
    min_segment: float = 0.3  # seconds; shorter CPD pieces are merged away
    change_threshold: float = 0.5
    smoothing: int = 11  # median filter length in frames; 1 disables
    merge_rule: str = "shorter"  # neighbour that absorbs a short piece: "shorter" or "longer"

    def __post_init__(self):
        if self.min_nonspeech <= 0 or self.min_segment <= 0:
            raise ConfigError("segmenter durations must be positive")
        if self.smoothing < 1 or self.smoothing % 2 == 0:
            raise ConfigError("median smoothing length must be a positive odd number")
        if self.merge_rule not in ("shorter", "longer"):
            raise ConfigError("merge_rule must be 'shorter' or 'longer'")


def smooth(post: np.ndarray, width: int) -> np.ndarray:
    if width == 1 or len(post) == 0:
        return np.asarray(post, dtype=np.float64)
    return median_filter(np.asarray(post, dtype=np.float64), size=width, mode="nearest")


def runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Maximal [start, stop) runs of True."""
    m = np.concatenate([[False], np.asarray(mask, dtype=bool), [False]])
    edges = np.flatnonzero(m[1:] != m[:-1])
    return list(zip(edges[::2].tolist(), edges[1::2].tolist()))


def _seconds(frame: int) -> float:
    return frame * FRAME_PERIOD


# ---------------------------------------------------------------------------
# VAD


def speech_runs(post: np.ndarray, cfg: SegmenterConfig) -> list[tuple[int, int]]:
    """Thresholded, smoothed speech runs with short non-speech gaps bridged."""
    found = runs(smooth(post, cfg.smoothing) > cfg.speech_threshold)
    merged: list[tuple[int, int]] = []
    for a, b in found:
        if merged and _seconds(a - merged[-1][1]) < cfg.min_nonspeech - 1e-9:
            merged[-1] = (merged[-1][0], b)
        else:
            merged.append((a, b))
    return merged


def timeline_from_runs(rec_id: str, spans, label: str = "speech") -> Timeline:
    return Timeline(rec_id, [Segment(_seconds(a), _seconds(b), label) for a, b in spans])


def vad_segment(
    feats: np.ndarray, params: ParamStore, vad_cfg: VadConfig, cfg: SegmenterConfig = SegmenterConfig(), rec_id: str = "rec"
) -> Timeline:
    if feats.shape[0] == 0:
        return Timeline(rec_id, [])
    return timeline_from_runs(rec_id, speech_runs(vad_posteriors(feats, vad_cfg, params), cfg))


# ---------------------------------------------------------------------------
# CPD


def change_frames_from_posteriors(post: np.ndarray, cfg: SegmenterConfig) -> list[int]:
    """Middle frame of every maximal above-threshold run (indices into ``post``)."""
    return [(a + b - 1) // 2 for a, b in runs(smooth(post, cfg.smoothing) > cfg.change_threshold)]


def merge_short(bounds: list[int], min_len: int, rule: str = "shorter") -> list[int]:
    """Drop inner boundaries until every piece is at least ``min_len`` long (or one piece remains).

    ``bounds`` are sorted piece edges including both ends. The shortest short
    piece goes first (earliest on ties) and joins its shorter neighbour, the
    earlier one on ties; ``rule="longer"`` picks the longer neighbour instead.
    """
    bounds = list(bounds)
    while len(bounds) > 2:
        lengths = np.diff(bounds)
        i = int(np.argmin(lengths))
        if lengths[i] >= min_len:
            break
        left = lengths[i - 1] if i > 0 else None
        right = lengths[i + 1] if i + 1 < len(lengths) else None
        if left is None:
            join_left = False
        elif right is None:
            join_left = True
        elif rule == "shorter":
            join_left = left <= right
        else:
            join_left = left >= right
        # joining the left neighbour removes this piece's start edge
        del bounds[i if join_left else i + 1]
    return bounds


def split_segment(start: int, stop: int, change_post: np.ndarray, cfg: SegmenterConfig) -> list[tuple[int, int]]:
    """Split frames [start, stop) at detected change points, then merge short pieces."""
    cuts = [start + c for c in change_frames_from_posteriors(change_post, cfg)]
    bounds = [start] + [c for c in cuts if start < c < stop] + [stop]
    bounds = merge_short(bounds, int(round(cfg.min_segment / FRAME_PERIOD)), cfg.merge_rule)
    return list(zip(bounds[:-1], bounds[1:]))


def cpd_segment(
    feats: np.ndarray,
    speech: Timeline,
    params: ParamStore,
    cpd_cfg: CpdConfig,
    cfg: SegmenterConfig = SegmenterConfig(),
) -> Timeline:
    """Cut each speech segment at detected speaker changes; the pieces tile the input exactly."""
    out = []
    for seg in speech:
        a, b = int(round(seg.start / FRAME_PERIOD)), int(round(seg.end / FRAME_PERIOD))
        b = min(b, feats.shape[0])
        if b - a < cpd_cfg.window:
            out.append(seg)
            continue
        post = cpd_posteriors(feats, np.arange(a, b), cpd_cfg, params)
        pieces = split_segment(a, b, post, cfg)
        edges = [seg.start] + [_seconds(x) for _, x in pieces[:-1]] + [seg.end]
        out.extend(Segment(lo, hi, seg.label) for lo, hi in zip(edges[:-1], edges[1:]))
    return Timeline(speech.rec_id, out)


# ---------------------------------------------------------------------------
# change-point metric


@dataclass(frozen=True)
class ChangeScore:
    precision: float
    recall: float
    f1: float
    matched: int


def cpd_eval(hypothesis, reference, collar: float = 0.5) -> ChangeScore:
    """Greedy one-to-one matching of change points (seconds) within +-collar.

    Hypotheses are taken in time order and matched to the nearest unmatched
    reference point (earlier on ties). With no reference points recall is 1.
    """
    hyp = sorted(int(round(t * TICKS_PER_SECOND)) for t in hypothesis)
    ref = sorted(int(round(t * TICKS_PER_SECOND)) for t in reference)
    tol = int(round(collar * TICKS_PER_SECOND))
    used = [False] * len(ref)
    tp = 0
    for h in hyp:
        best, best_d = None, None
        for j, r in enumerate(ref):
            d = abs(h - r)
            if not used[j] and d <= tol and (best_d is None or d < best_d):
                best, best_d = j, d
        if best is not None:
            used[best] = True
            tp += 1
    p = tp / len(hyp) if hyp else (1.0 if not ref else 0.0)
    r = tp / len(ref) if ref else 1.0
    f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return ChangeScore(p, r, f1, tp)
