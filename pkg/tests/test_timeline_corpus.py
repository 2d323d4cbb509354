import numpy as np
import pytest

from cvec.corpus import (
    SyntheticCorpusSpec,
    generate_synthetic_corpus,
    load_split,
    read_feats,
    save_corpus,
    write_feats,
)
from cvec.errors import ConfigError
from cvec.nets import FRAME_PERIOD
from cvec.timeline import RttmError, Segment, Timeline, format_rttm, parse_rttm, read_rttm, write_rttm


class TestTimeline:
    def test_segment_order_and_validation(self):
        with pytest.raises(ValueError):
            Segment(2.0, 1.0)
        tl = Timeline("r", [Segment(3, 4, "b"), Segment(0, 1, "a")])
        assert [s.start for s in tl] == [0, 3]
        assert tl.labels == ["a", "b"] and tl.end == 4 and tl.total() == 2

    def test_merge_same_label_neighbours(self):
        tl = Timeline("r", [Segment(0, 1, "a"), Segment(1, 2, "a"), Segment(2, 3, "b"), Segment(3.5, 4, "b")])
        assert [(s.start, s.end, s.label) for s in tl.merged()] == [(0, 2, "a"), (2, 3, "b"), (3.5, 4, "b")]

    def test_change_points(self):
        tl = Timeline("r", [Segment(0, 1, "a"), Segment(1, 2, "b"), Segment(2.5, 3, "a"), Segment(3, 4, "a")])
        assert tl.change_points() == [1.0, 2.25]

    def test_rttm_roundtrip(self, tmp_path):
        a = Timeline("rec1", [Segment(0.5, 1.25, "spk0"), Segment(2.0, 3.5, "spk1")])
        b = Timeline("rec2", [Segment(0.0, 0.01, "x")])
        write_rttm(tmp_path / "h.rttm", [a, b])
        back = read_rttm(tmp_path / "h.rttm")
        assert back["rec1"].segments == a.segments and back["rec2"].segments == b.segments

    def test_rttm_line_format(self):
        text = format_rttm(Timeline("r", [Segment(1.0, 2.5, "s")]))
        assert text == "SPEAKER r 1 1.000 1.500 <NA> <NA> s <NA> <NA>\n"

    def test_malformed_line_number(self):
        text = "SPEAKER r 1 0.0 1.0 <NA> <NA> a <NA> <NA>\nSPEAKER r 1 zero 1.0 <NA> <NA> a\n"
        with pytest.raises(RttmError, match=":2:"):
            parse_rttm(text)
        with pytest.raises(RttmError, match=":1:"):
            parse_rttm("SPEAKER r 1 0.0\n")

    def test_comments_and_other_types_skipped(self):
        text = "# note\nSPKR-INFO r 1 <NA> <NA> <NA> unknown a <NA> <NA>\nSPEAKER r 1 0 1 <NA> <NA> a <NA> <NA>\n"
        assert len(parse_rttm(text)["r"]) == 1


class TestCorpus:
    def test_deterministic(self, tmp_path):
        spec = SyntheticCorpusSpec(speakers=3, train_recordings=2, train_turns=4, eval_recordings=1, eval_speakers=2, seed=11)
        save_corpus(generate_synthetic_corpus(spec), tmp_path / "a")
        save_corpus(generate_synthetic_corpus(spec), tmp_path / "b")
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert files
        for f in files:
            assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()

    def test_reference_matches_speech(self, small_corpus):
        for rec in small_corpus.train + small_corpus.eval:
            assert rec.reference.is_disjoint()
            energy = rec.feats.mean(axis=1)
            mask = np.zeros(len(energy), bool)
            for s in rec.reference:
                a, b = round(s.start / FRAME_PERIOD), round(s.end / FRAME_PERIOD)
                mask[a:b] = True
            # non-speech sits near -4 and speech near the envelope; the split is exact
            assert energy[mask].min() > -2.5 > energy[~mask].max()

    def test_every_speaker_in_training(self, small_corpus):
        assert {s.label for r in small_corpus.train for s in r.reference} == {f"spk{i}" for i in range(4)}

    def test_linear_classifier_sanity_floor(self, small_corpus):
        def frames(recs):
            X, y = [], []
            for r in recs:
                for s in r.reference:
                    a, b = round(s.start / FRAME_PERIOD), round(s.end / FRAME_PERIOD)
                    X.append(r.feats[a:b])
                    y += [int(s.label[3:])] * (b - a)
            return np.concatenate(X), np.array(y)

        X, y = frames(small_corpus.train)
        Xe, ye = frames(small_corpus.eval)
        A = np.hstack([X, np.ones((len(X), 1))])
        W = np.linalg.lstsq(A, np.eye(4)[y], rcond=None)[0]
        pred = np.argmax(np.hstack([Xe, np.ones((len(Xe), 1))]) @ W, axis=1)
        assert np.mean(pred == ye) > 0.8

    def test_feats_file_roundtrip_and_checks(self, tmp_path, rng):
        x = rng.standard_normal((7, 40))
        write_feats(tmp_path / "f", x)
        assert np.array_equal(read_feats(tmp_path / "f"), x)
        (tmp_path / "g").write_bytes((tmp_path / "f").read_bytes()[:-8])
        with pytest.raises(ValueError):
            read_feats(tmp_path / "g")

    def test_save_and_load_split(self, small_corpus, tmp_path):
        save_corpus(small_corpus, tmp_path)
        back = load_split(tmp_path, "train")
        assert [r.rec_id for r in back] == [r.rec_id for r in small_corpus.train]
        assert np.array_equal(back[0].feats, small_corpus.train[0].feats)
        assert back[0].reference.segments == small_corpus.train[0].reference.segments
        assert load_split(tmp_path, "missing") == []

    def test_spec_checks(self):
        with pytest.raises(ConfigError):
            SyntheticCorpusSpec(speakers=1)
        with pytest.raises(ConfigError):
            SyntheticCorpusSpec(speakers=3, eval_speakers=4)
