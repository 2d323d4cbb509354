"""Scoring a hand-made hypothesis: collars, overlap and the speaker mapping."""

from cvec.scoring import ScoreConfig, score
from cvec.timeline import Segment, Timeline

ref = Timeline("demo", [Segment(0.0, 4.0, "alice"), Segment(4.0, 9.0, "bob"), Segment(8.0, 10.0, "carol")])
hyp = Timeline("demo", [Segment(0.0, 4.5, "c0"), Segment(4.5, 10.0, "c1")])

for collar, overlap in [(0.25, False), (0.0, False), (0.0, True)]:
    r = score(ref, hyp, ScoreConfig(collar=collar, score_overlap=overlap))
    print(f"collar {collar:.2f}, overlap {'scored' if overlap else 'excluded'}")
    print(r.table())
    print("mapping", r.mapping["demo"])
    print()
