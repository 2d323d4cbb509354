"""Labelled time intervals over one recording, and RTTM reading/writing."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable


class RttmError(ValueError):
    """A malformed RTTM line; the message carries the line number."""


@dataclass(frozen=True, order=True)
class Segment:
    start: float
    end: float
    label: str = ""

    def __post_init__(self):
        # canonical 0.1 ms grid so that times survive an RTTM round trip
        object.__setattr__(self, "start", round(float(self.start), 4))
        object.__setattr__(self, "end", round(float(self.end), 4))
        if not self.start < self.end:
            raise ValueError(f"segment start {self.start} must precede end {self.end}")

    @property
    def duration(self) -> float:
        return self.end - self.start


@dataclass
class Timeline:
    rec_id: str
    segments: list[Segment] = field(default_factory=list)

    def __post_init__(self):
        self.segments = sorted(self.segments)

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    @property
    def labels(self) -> list[str]:
        return sorted({s.label for s in self.segments})

    @property
    def end(self) -> float:
        return max((s.end for s in self.segments), default=0.0)

    def total(self) -> float:
        return sum(s.duration for s in self.segments)

    def is_disjoint(self) -> bool:
        return all(a.end <= b.start for a, b in zip(self.segments, self.segments[1:]))

    def relabel(self, mapping: dict[str, str]) -> "Timeline":
        return Timeline(self.rec_id, [Segment(s.start, s.end, mapping.get(s.label, s.label)) for s in self.segments])

    def merged(self) -> "Timeline":
        """Join touching or overlapping neighbours that carry the same label."""
        out: list[Segment] = []
        for s in self.segments:
            if out and out[-1].label == s.label and s.start <= out[-1].end:
                out[-1] = Segment(out[-1].start, max(out[-1].end, s.end), s.label)
            else:
                out.append(s)
        return Timeline(self.rec_id, out)

    def change_points(self) -> list[float]:
        """Times where the speaker changes between consecutive segments.

        A pause between two speakers yields its midpoint.
        """
        pts = []
        for a, b in zip(self.segments, self.segments[1:]):
            if a.label != b.label:
                pts.append(round((a.end + b.start) / 2, 4))
        return pts


def format_rttm(timeline: Timeline) -> str:
    lines = [
        f"SPEAKER {timeline.rec_id} 1 {s.start:.3f} {s.duration:.3f} <NA> <NA> {s.label} <NA> <NA>"
        for s in timeline.segments
    ]
    return "".join(line + "\n" for line in lines)


def parse_rttm(text: str, source: str = "<rttm>") -> dict[str, Timeline]:
    segs: dict[str, list[Segment]] = defaultdict(list)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith(("#", ";")):
            continue
        fields = line.split()
        if fields[0] != "SPEAKER":
            continue
        if len(fields) < 8:
            raise RttmError(f"{source}:{lineno}: expected at least 8 fields, got {len(fields)}")
        try:
            start, dur = float(fields[3]), float(fields[4])
        except ValueError:
            raise RttmError(f"{source}:{lineno}: bad start/duration {fields[3]!r} {fields[4]!r}") from None
        if dur < 0 or start < 0:
            raise RttmError(f"{source}:{lineno}: negative time")
        if dur == 0:
            continue
        segs[fields[1]].append(Segment(start, start + dur, fields[7]))
    return {rec: Timeline(rec, s) for rec, s in segs.items()}


def read_rttm(path: str | Path) -> dict[str, Timeline]:
    return parse_rttm(Path(path).read_text(), str(path))


def write_rttm(path: str | Path, timelines: Timeline | Iterable[Timeline]) -> None:
    if isinstance(timelines, Timeline):
        timelines = [timelines]
    Path(path).write_text("".join(format_rttm(t) for t in timelines))
