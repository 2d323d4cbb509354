import math

import numpy as np
import pytest
from scipy.stats import ortho_group

from cvec import numerics as nx
from cvec.corpus import Recording
from cvec.errors import ConfigError, TrainingDiverged
from cvec.numerics import Tensor
from cvec.params import ParamStore
from cvec.timeline import Segment, Timeline
from cvec.training import (
    FrameTrainConfig,
    ModelSpec,
    TrainConfig,
    accuracy,
    angular_softmax_logits,
    angular_softmax_loss,
    clip_gradients,
    cpd_labels,
    embed_windows,
    heldout_split,
    init_model,
    make_windows,
    sgd_step,
    speech_mask,
    train_system,
    window_offsets,
)


def loss_oracle(x, label, W):
    Wn = W / np.linalg.norm(W, axis=1, keepdims=True)
    z = Wn @ x
    return math.log(np.sum(np.exp(z - z.max()))) + z.max() - z[label]


class TestAngularSoftmax:
    @pytest.mark.parametrize("s", [0.5, 3.0, 12.0])
    def test_two_class_aligned(self, s):
        W = np.array([[2.0, 0.0], [0.0, 0.7]])
        got = angular_softmax_loss(np.array([s, 0.0]), 0, W).item()
        assert abs(got - math.log1p(math.exp(-s))) < 1e-12

    def test_equidistant_gives_log_c(self):
        W = np.eye(4)[:3] * np.array([[1.0], [3.0], [0.5]])
        x = np.array([0.0, 0.0, 0.0, 5.0])
        assert abs(angular_softmax_loss(x, 1, W).item() - math.log(3)) < 1e-12

    def test_random_three_class(self, rng):
        W, x = rng.standard_normal((3, 6)), rng.standard_normal(6)
        assert abs(angular_softmax_loss(x, 2, W).item() - loss_oracle(x, 2, W)) < 1e-12

    def test_batch_is_mean(self, rng):
        W, X = rng.standard_normal((3, 6)), rng.standard_normal((4, 6))
        labels = np.array([0, 2, 1, 1])
        want = np.mean([loss_oracle(X[i], labels[i], W) for i in range(4)])
        assert abs(angular_softmax_loss(X, labels, W).item() - want) < 1e-12

    def test_row_scaling_invariance(self, rng):
        W, x = rng.standard_normal((5, 6)), rng.standard_normal((2, 6))
        scaled = W * rng.uniform(0.01, 100, size=(5, 1))
        diff = angular_softmax_logits(x, W).data - angular_softmax_logits(x, scaled).data
        assert np.max(np.abs(diff)) < 1e-12

    def test_rotation_invariance(self, rng):
        W, x = rng.standard_normal((5, 6)), rng.standard_normal(6)
        Q = ortho_group.rvs(6, random_state=7)
        a = angular_softmax_loss(x, 3, W).item()
        b = angular_softmax_loss(Q @ x, 3, W @ Q.T).item()
        assert abs(a - b) < 1e-12

    def test_zero_norm_guarded(self):
        W = np.array([[0.0, 0.0], [1.0, 0.0]])
        out = angular_softmax_loss(np.zeros(2), 0, W).item()
        assert math.isfinite(out) and abs(out - math.log(2)) < 1e-12

    def test_gradient_flows_to_embedding_and_weights(self, rng):
        x = Tensor(rng.standard_normal((2, 4)), requires_grad=True)
        W = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
        nx.backward(angular_softmax_loss(x, np.array([0, 1]), W))
        assert np.any(x.grad) and np.any(W.grad)


class TestWindows:
    def feats(self, n):
        return np.arange(n, dtype=float)[:, None] * np.ones((1, 40))

    def test_400_frames(self):
        wins = make_windows(self.feats(400), Timeline("r", [Segment(0.0, 4.0, "a")]))
        assert [w.start for w in wins] == [0, 100, 200]
        assert all(w.feats.shape == (200, 40) for w in wins)

    @pytest.mark.parametrize("n", [150, 50])
    def test_short_segment_single_padded_window(self, n):
        wins = make_windows(self.feats(n), Timeline("r", [Segment(0.0, n / 100, "a")]))
        assert len(wins) == 1
        w = wins[0]
        assert (w.start, w.stop) == (0, n)
        assert w.feats.shape == (200, 40)
        assert np.all(w.feats[n:] == n - 1)

    def test_tail_rule(self):
        # a remainder of at least one shift gets a padded tail window; shorter ones are dropped
        assert window_offsets(350, 200, 100) == [(0, 200), (100, 300), (200, 350)]
        assert window_offsets(300, 200, 100) == [(0, 200), (100, 300)]
        assert window_offsets(250, 200, 100) == [(0, 200), (100, 250)]
        assert window_offsets(290, 200, 100) == [(0, 200), (100, 290)]
        assert window_offsets(0, 200, 100) == []

    def test_offsets_cover_segment(self):
        for n in range(1, 1200, 37):
            spans = window_offsets(n, 200, 100)
            assert spans[0][0] == 0
            assert max(b for _, b in spans) >= n - 99
            assert all(b - a <= 200 for a, b in spans)

    def test_labels_and_stream_offsets(self):
        tl = Timeline("r", [Segment(1.0, 3.0, "a"), Segment(3.5, 6.0, "b")])
        wins = make_windows(self.feats(700), tl)
        assert [(w.label, w.start) for w in wins] == [("a", 100), ("b", 350), ("b", 450)]
        assert wins[1].feats[0, 0] == 350

    def test_config_checks(self):
        with pytest.raises(ConfigError):
            TrainConfig(margin=2)
        with pytest.raises(ConfigError):
            TrainConfig(window=100, shift=150)


class TestHeldout:
    def test_every_speaker_on_both_sides(self, small_corpus):
        train, held = heldout_split(small_corpus.train, 0.1, seed=0)
        spk = lambda items: {s.label for _, s in items}
        assert spk(train) == spk(held) == {s.label for r in small_corpus.train for s in r.reference}
        key = lambda items: {(r.rec_id, s.start) for r, s in items}
        assert not key(train) & key(held)
        assert len(train) + len(held) == sum(len(r.reference) for r in small_corpus.train)

    def test_deterministic(self, small_corpus):
        a = heldout_split(small_corpus.train, 0.1, seed=4)
        b = heldout_split(small_corpus.train, 0.1, seed=4)
        assert [(r.rec_id, s) for r, s in a[1]] == [(r.rec_id, s) for r, s in b[1]]


class TestOptimisation:
    def test_clip_to_global_norm(self):
        a, b = Tensor(np.zeros(2), True), Tensor(np.zeros(1), True)
        a.grad, b.grad = np.array([3.0, 0.0]), np.array([4.0])
        assert clip_gradients([a, b], 1.0) == pytest.approx(5.0)
        assert np.allclose(np.concatenate([a.grad, b.grad]), [0.6, 0.0, 0.8])

    def test_no_clip_below_norm(self):
        a = Tensor(np.zeros(2), True)
        a.grad = np.array([0.3, 0.4])
        clip_gradients([a], 5.0)
        assert np.array_equal(a.grad, [0.3, 0.4])

    def test_nonfinite_gradient(self):
        a = Tensor(np.zeros(1), True)
        a.grad = np.array([np.inf])
        with pytest.raises(TrainingDiverged):
            clip_gradients([a], 5.0)

    def test_sgd_step(self):
        p = ParamStore()
        t = p.add("w", np.array([1.0, 1.0]))
        t.grad = np.array([1.0, -2.0])
        sgd_step(p, 0.1, 100.0)
        assert np.allclose(t.data, [0.9, 1.2]) and t.grad is None


@pytest.mark.parametrize("variant", ["Stacked_sigmoid", "GatedAdd", "SelfAtt2"])
def test_one_step_moves_both_systems_and_combiner(variant, rng):
    spec = ModelSpec(variant, speakers=3)
    params = init_model(spec, np.random.default_rng(0))
    before = params.snapshot()
    out = embed_windows(rng.standard_normal((4, 200, 40)), spec, params)
    loss = angular_softmax_loss(out.embedding, np.array([0, 1, 2, 0]), params["cls.W"])
    for pen in out.penalties:
        loss = loss + pen
    nx.backward(loss)
    sgd_step(params, 0.02, 5.0)
    moved = {n for n, t in params.items() if not np.array_equal(t.data, before[n])}
    for prefix in ("tdnn.", "hornn.", "comb."):
        names = params.names(prefix)
        assert any(n in moved for n in names), prefix
    assert "tdnn.L1.W" in moved and "hornn.W" in moved


class TestTrainSystem:
    def test_zero_epochs_is_chance(self, small_corpus):
        # one initialisation can collapse onto any class, so average over many
        speakers = sorted({s.label for r in small_corpus.train for s in r.reference})
        idx = {s: i for i, s in enumerate(speakers)}
        wins = [w for r in small_corpus.train for w in make_windows(r.feats, r.reference)]
        X, y = np.stack([w.feats for w in wins]), np.array([idx[w.label] for w in wins])
        spec = ModelSpec("TDNN", speakers=len(speakers))
        accs = [accuracy(X, y, spec, init_model(spec, np.random.default_rng(s))) for s in range(20)]
        assert abs(np.mean(accs) - 1 / len(speakers)) < 0.1

    def test_zero_epochs_returns_initialisation(self, small_corpus):
        cfg = TrainConfig(epochs=0, seed=5)
        res = train_system(ModelSpec("TDNN", speakers=4), small_corpus.train, cfg)
        init = init_model(ModelSpec("TDNN", speakers=4), np.random.default_rng(5))
        assert res.losses == [] and len(res.accuracy) == 1
        assert all(np.array_equal(res.params[n].data, init[n].data) for n in init)

    def test_deterministic_and_learning(self, small_corpus):
        cfg = TrainConfig(epochs=2, seed=1)
        a = train_system(ModelSpec("TDNN", speakers=4), small_corpus.train, cfg)
        b = train_system(ModelSpec("TDNN", speakers=4), small_corpus.train, cfg)
        assert a.losses == b.losses and a.accuracy == b.accuracy
        assert a.params.to_bytes() == b.params.to_bytes()
        assert a.losses[1] < a.losses[0]

    def test_nan_loss_aborts(self, small_corpus, monkeypatch):
        import cvec.training as tr

        real = tr.angular_softmax_loss
        monkeypatch.setattr(tr, "angular_softmax_loss", lambda *a: nx.scale(real(*a), float("nan")))
        with pytest.raises(TrainingDiverged, match="epoch 1"):
            train_system(ModelSpec("TDNN", speakers=4), small_corpus.train, TrainConfig(epochs=1))

    def test_nonfinite_features_rejected(self, small_corpus):
        rec = small_corpus.train[0]
        bad = Recording(rec.rec_id, np.full_like(rec.feats, np.nan), rec.reference)
        with pytest.raises(ConfigError, match="non-finite"):
            train_system(ModelSpec("TDNN", speakers=4), [bad] + small_corpus.train[1:], TrainConfig(epochs=1))

    def test_needs_two_speakers(self, small_corpus):
        rec = small_corpus.train[0]
        one = Recording(rec.rec_id, rec.feats, rec.reference.relabel({l: "x" for l in rec.reference.labels}))
        with pytest.raises(ConfigError):
            train_system(ModelSpec("TDNN"), [one], TrainConfig(epochs=1))


class TestFrameLabels:
    def rec(self):
        tl = Timeline("r", [Segment(0.5, 2.0, "a"), Segment(2.0, 3.0, "b"), Segment(3.5, 4.5, "a")])
        return Recording("r", np.zeros((500, 40)), tl)

    def test_speech_mask(self):
        m = speech_mask(self.rec())
        assert m[50] and m[299] and not m[49] and not m[300] and m[350] and not m[450]

    def test_cpd_labels(self):
        lab = cpd_labels(self.rec(), FrameTrainConfig(positive_radius=5, negative_distance=30))
        # changes at 2.0 s (frame 200) and mid-pause 3.25 s (frame 325)
        assert lab[195] == lab[205] == lab[200] == 1 and lab[194] == -1
        assert lab[100] == 0 and lab[180] == -1
        assert lab[325] == 1 and lab[310] == -1 and lab[10] == -1
