"""Diarisation error rate: collar and overlap exclusion, optimal speaker mapping, MS/FA/SER.

All interval arithmetic runs on integer ticks of 0.1 ms. Errors are
weighted by speaker counts as in the usual NIST scorer, so with overlap
scored a region with two reference speakers and one hypothesis speaker
contributes one speaker's worth of missed speech.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ConfigError
from .timeline import Timeline

TICKS_PER_SECOND = 10_000


def to_ticks(seconds: float) -> int:
    return int(round(seconds * TICKS_PER_SECOND))


@dataclass(frozen=True)
class ScoreConfig:
    collar: float = 0.25
    score_overlap: bool = False

    def __post_init__(self):
        if self.collar < 0:
            raise ConfigError("collar must be non-negative")


@dataclass
class RecordingScore:
    rec_id: str
    scored_speech: float  # seconds, speaker-weighted
    missed: float
    false_alarm: float
    speaker_error: float
    mapping: dict[str, str]


@dataclass
class ScoreReport:
    MS: float
    FA: float
    SER: float
    DER: float
    scored_speech: float
    invalid: bool = False
    recordings: list[RecordingScore] = field(default_factory=list)

    @property
    def mapping(self) -> dict[str, dict[str, str]]:
        return {r.rec_id: r.mapping for r in self.recordings}

    def table(self) -> str:
        rows = [("recording", "scored(s)", "MS%", "FA%", "SER%", "DER%")]
        for r in self.recordings:
            rows.append((r.rec_id, f"{r.scored_speech:.2f}", *(_pct(x, r.scored_speech) for x in _parts(r))))
        rows.append(("ALL", f"{self.scored_speech:.2f}", *(f"{v:.2f}" for v in (self.MS, self.FA, self.SER, self.DER))))
        widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
        lines = ["  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(row, widths))) for row in rows]
        if self.invalid:
            lines.append("WARNING: no scored reference speech; rates are undefined")
        return "\n".join(lines)

    def key_values(self) -> str:
        pairs = [
            ("DER", f"{self.DER:.4f}"),
            ("MS", f"{self.MS:.4f}"),
            ("FA", f"{self.FA:.4f}"),
            ("SER", f"{self.SER:.4f}"),
            ("SCORED_SPEECH", f"{self.scored_speech:.4f}"),
            ("INVALID", str(int(self.invalid))),
        ]
        return "".join(f"{k}={v}\n" for k, v in pairs)


def _parts(r: RecordingScore):
    return r.missed, r.false_alarm, r.speaker_error, r.missed + r.false_alarm + r.speaker_error


def _pct(x: float, denom: float) -> str:
    return f"{100 * x / denom:.2f}" if denom > 0 else "nan"


# ---------------------------------------------------------------------------
# interval algebra


def _speaker_intervals(tl: Timeline) -> dict[str, list[tuple[int, int]]]:
    out: dict[str, list[tuple[int, int]]] = {}
    for s in tl:
        out.setdefault(s.label, []).append((to_ticks(s.start), to_ticks(s.end)))
    return out


def _coverage(intervals, grid: np.ndarray) -> np.ndarray:
    """How many of ``intervals`` cover each elementary cell [grid[i], grid[i+1])."""
    diff = np.zeros(len(grid), dtype=np.int64)
    for a, b in intervals:
        if b > a:
            diff[np.searchsorted(grid, a)] += 1
            diff[np.searchsorted(grid, b)] -= 1
    return np.cumsum(diff)[:-1]


def _indicator(groups, grid: np.ndarray) -> np.ndarray:
    """(speakers, cells) 0/1 matrix of who talks in each cell."""
    out = np.zeros((len(groups), len(grid) - 1), dtype=np.int64)
    for i, ivs in enumerate(groups):
        out[i] = _coverage(ivs, grid) > 0
    return out


def _union(intervals) -> list[tuple[int, int]]:
    out: list[list[int]] = []
    for a, b in sorted(intervals):
        if out and a <= out[-1][1]:
            out[-1][1] = max(out[-1][1], b)
        else:
            out.append([a, b])
    return [tuple(x) for x in out]


def apply_collar_and_overlap(reference: Timeline, cfg: ScoreConfig = ScoreConfig(), end: float | None = None):
    """Scored region as sorted disjoint (start, stop) tick intervals over [0, end].

    Removes +-collar around every reference boundary, and reference overlap
    unless ``cfg.score_overlap``.
    """
    stop = to_ticks(end if end is not None else reference.end)
    c = to_ticks(cfg.collar)
    excluded = []
    for s in reference:
        for t in (to_ticks(s.start), to_ticks(s.end)):
            if c > 0:
                excluded.append((t - c, t + c))
    if not cfg.score_overlap:
        ivs = [iv for ivs in _speaker_intervals(reference).values() for iv in ivs]
        grid = np.unique([x for iv in ivs for x in iv] + [0, stop])
        if len(grid) > 1:
            cov = _coverage(ivs, grid)
            excluded.extend((int(grid[i]), int(grid[i + 1])) for i in np.flatnonzero(cov >= 2))
    region, cursor = [], 0
    for a, b in _union(excluded):
        if a > cursor:
            region.append((cursor, min(a, stop)))
        cursor = max(cursor, b)
    if cursor < stop:
        region.append((cursor, stop))
    return [(a, b) for a, b in region if b > a]


def optimal_mapping(overlap: np.ndarray) -> list[tuple[int, int]]:
    """(ref, cluster) pairs maximising total mapped overlap; zero-overlap pairs are dropped."""
    overlap = np.asarray(overlap, dtype=np.float64)
    if overlap.size == 0:
        return []
    rows, cols = linear_sum_assignment(overlap, maximize=True)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if overlap[r, c] > 0]


def score_recording(reference: Timeline, hypothesis: Timeline, cfg: ScoreConfig = ScoreConfig()) -> RecordingScore:
    end = max(reference.end, hypothesis.end)
    region = apply_collar_and_overlap(reference, cfg, end)
    ref = _speaker_intervals(reference)
    hyp = _speaker_intervals(hypothesis)
    points = {0, to_ticks(end)}
    for group in (ref, hyp):
        for ivs in group.values():
            points.update(x for iv in ivs for x in iv)
    points.update(x for iv in region for x in iv)
    grid = np.array(sorted(points), dtype=np.int64)
    if len(grid) < 2:
        return RecordingScore(reference.rec_id, 0.0, 0.0, 0.0, 0.0, {})
    dur = np.diff(grid) * (_coverage(region, grid) > 0)
    ref_names, hyp_names = sorted(ref), sorted(hyp)
    R = _indicator([ref[n] for n in ref_names], grid)
    H = _indicator([hyp[n] for n in hyp_names], grid)
    n_ref, n_hyp = R.sum(axis=0), H.sum(axis=0)
    overlap = (R[:, None, :] * H[None, :, :] * dur).sum(-1) if len(ref_names) and len(hyp_names) else np.zeros((len(ref_names), len(hyp_names)))
    pairs = optimal_mapping(overlap)
    correct = np.zeros_like(dur)
    for r, h in pairs:
        correct += R[r] * H[h]
    speech = int((dur * n_ref).sum())
    missed = int((dur * np.maximum(0, n_ref - n_hyp)).sum())
    fa = int((dur * np.maximum(0, n_hyp - n_ref)).sum())
    ser = int((dur * (np.minimum(n_ref, n_hyp) - correct)).sum())
    s = 1.0 / TICKS_PER_SECOND
    mapping = {hyp_names[h]: ref_names[r] for r, h in pairs}
    return RecordingScore(reference.rec_id, speech * s, missed * s, fa * s, ser * s, mapping)


def score(
    reference: Timeline | Mapping[str, Timeline],
    hypothesis: Timeline | Mapping[str, Timeline],
    cfg: ScoreConfig = ScoreConfig(),
) -> ScoreReport:
    """Score one recording or a set of recordings; times are pooled across recordings."""
    refs = {reference.rec_id: reference} if isinstance(reference, Timeline) else dict(reference)
    hyps = {hypothesis.rec_id: hypothesis} if isinstance(hypothesis, Timeline) else dict(hypothesis)
    if isinstance(reference, Timeline) and isinstance(hypothesis, Timeline) and reference.rec_id != hypothesis.rec_id:
        hyps = {reference.rec_id: Timeline(reference.rec_id, hypothesis.segments)}
    recs = []
    for rec_id in sorted(set(refs) | set(hyps)):
        recs.append(
            score_recording(refs.get(rec_id, Timeline(rec_id, [])), hyps.get(rec_id, Timeline(rec_id, [])), cfg)
        )
    speech = sum(r.scored_speech for r in recs)
    ms, fa, ser = (sum(x) for x in zip(*[_parts(r)[:3] for r in recs])) if recs else (0.0, 0.0, 0.0)
    if speech <= 0:
        nan = float("nan")
        return ScoreReport(nan, nan, nan, nan, 0.0, invalid=True, recordings=recs)
    MS, FA, SER, DER = (100.0 * x / speech for x in (ms, fa, ser, ms + fa + ser))
    return ScoreReport(MS, FA, SER, DER, speech, recordings=recs)
