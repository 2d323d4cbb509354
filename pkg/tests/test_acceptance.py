"""Acceptance criteria 1-9, each reported as one PASS/FAIL line at the end of the run.

Criteria 7-9 train full models on the eight-speaker synthetic corpus and take
several minutes; they carry the ``slow`` marker (deselect with ``-m "not slow"``).
"""

import contextlib
import io
import itertools
import time

import numpy as np
import pytest

from cvec import cli
from cvec.clustering import choose_k_and_cluster, cosine_affinity, refine_affinity
from cvec.combination import VARIANTS
from cvec.corpus import SyntheticCorpusSpec, generate_synthetic_corpus
from cvec.scoring import ScoreConfig, score
from cvec.segmentation import cpd_eval
from cvec.selftest import GRAD_TOL, adjusted_rand_index, attention_check, bilinear_check, gaussian_clouds, gradient_check
from cvec.selftest import GRADIENT_TARGETS
from cvec.timeline import Segment, Timeline, read_rttm
from cvec.training import ModelSpec, TrainConfig, train_system


def verdict(report, n, passed, detail):
    line = f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}"
    report[n] = line
    print(line)
    assert passed, line


def test_c1_gradients(acceptance_report):
    t0 = time.perf_counter()
    results = {name: gradient_check(name, seed=0, n_samples=200) for name in GRADIENT_TARGETS}
    elapsed = time.perf_counter() - t0
    failing = {n: r for n, r in results.items() if not (r.ok(GRAD_TOL) and r.checked >= 200)}
    worst = max(results.values(), key=lambda r: r.max_rel_error)
    detail = f"{len(results) - len(failing)}/{len(results)} targets below {GRAD_TOL:g} in {elapsed:.1f}s"
    if failing:
        detail += "; failing " + ", ".join(f"{n} ({r.max_rel_error:.2e} at {r.worst[0]})" for n, r in failing.items())
    detail += f"; worst overall {worst.max_rel_error:.2e}"
    verdict(acceptance_report, 1, not failing and elapsed < 60, detail)


def test_c2_bilinear_algebra(acceptance_report):
    out = bilinear_check(draws=100, seed=0)
    verdict(acceptance_report, 2, out.passed, out.detail)


def test_c3_attention_invariants(acceptance_report):
    out = attention_check(draws=100, seed=0)
    verdict(acceptance_report, 3, out.passed, out.detail)


def test_c4_clustering_recovery(acceptance_report):
    t0 = time.perf_counter()
    found = {}
    for k in (3, 2, 4, 5):
        X, truth = gaussian_clouds(k, np.random.default_rng(100 + k), per_cluster=20, sigma=1.0)
        res = choose_k_and_cluster(refine_affinity(cosine_affinity(X)), k_max=10, embeddings=X)
        found[k] = (res.k, adjusted_rand_index(truth, res.labels))
    elapsed = time.perf_counter() - t0
    ok = all(kk == k and ari == 1.0 for k, (kk, ari) in found.items()) and elapsed < 10
    detail = ", ".join(f"k={k}->{kk} ARI={a:.3f}" for k, (kk, a) in found.items()) + f" in {elapsed:.2f}s"
    verdict(acceptance_report, 4, ok, detail)


def _random_timeline(rng, labels, rec="r"):
    segs = []
    for lab in labels:
        cuts = np.unique(np.round(rng.uniform(0, 30, 2 * rng.integers(1, 5)), 2))
        segs += [Segment(a, b, lab) for a, b in zip(cuts[::2], cuts[1::2])]
    return Timeline(rec, segs)


def test_c5_scoring_fixtures(acceptance_report):
    fx = score(Timeline("fx", [Segment(0.0, 10.0, "A")]), Timeline("fx", [Segment(0.0, 5.0, "c1")]), ScoreConfig(0.25))
    fixture_ok = abs(fx.MS - 50.0) <= 0.1 and fx.FA == 0 and fx.SER == 0
    rng = np.random.default_rng(5)
    perm_ok, worst_sum, checked = True, 0.0, 0
    while checked < 50:
        ref = _random_timeline(rng, ["A", "B", "C"])
        hyp = _random_timeline(rng, ["x", "y", "z"])
        a = score(ref, hyp)
        if a.invalid:
            continue
        checked += 1
        worst_sum = max(worst_sum, abs(a.MS + a.FA + a.SER - a.DER))
        for names in itertools.permutations(["p", "q", "s"]):
            b = score(ref, hyp.relabel(dict(zip(["x", "y", "z"], names))))
            perm_ok &= (a.MS, a.FA, a.SER, a.DER) == (b.MS, b.FA, b.SER, b.DER)
    ok = fixture_ok and perm_ok and worst_sum <= 1e-9
    detail = f"MS={fx.MS:.2f} FA={fx.FA:.2f} SER={fx.SER:.2f}; permutation exact={perm_ok}; |MS+FA+SER-DER| max {worst_sum:.1e} on {checked}"
    verdict(acceptance_report, 5, ok, detail)


def test_c6_cpd_metric(acceptance_report):
    s = cpd_eval([1.0, 5.0], [1.3, 3.0, 7.0], collar=0.5)
    ok = (round(s.precision, 3), round(s.recall, 3), round(s.f1, 3)) == (0.5, 0.333, 0.4)
    verdict(acceptance_report, 6, ok, f"P={s.precision:.3f} R={s.recall:.3f} F1={s.f1:.3f}")


# ---------------------------------------------------------------------------
# end to end


CONFIG = """seed = 0
profile = "tiny"
system = "Stacked_sigmoid"
[paths]
corpus = "corpus"
model = "model"
output = "out"
"""


def run_pipeline(root):
    """corpus, train, diarize and score through the command line; returns (seconds, key/value score)."""
    root.mkdir(parents=True, exist_ok=True)
    (root / "cvec.toml").write_text(CONFIG)
    cfg = str(root / "cvec.toml")
    t0 = time.perf_counter()
    assert cli.main(["corpus", "--out", str(root / "corpus"), "--seed", "0", "--speakers", "8"]) == 0
    assert cli.main(["train", "--config", cfg]) == 0
    assert cli.main(["diarize", "--config", cfg]) == 0
    refs = {}
    for p in sorted((root / "corpus" / "eval").glob("*/ref.rttm")):
        refs.update(read_rttm(p))
    from cvec.timeline import write_rttm

    write_rttm(root / "ref.rttm", list(refs.values()))
    buf = io.StringIO()
    with contextlib.redirect_stdout(buf):
        assert cli.main(["score", str(root / "ref.rttm"), str(root / "out" / "all.rttm"), "--format", "kv"]) == 0
    elapsed = time.perf_counter() - t0
    kv = dict(line.split("=") for line in buf.getvalue().split())
    return elapsed, kv


def random_label_baseline(hyp: Timeline, labels: int = 4, seed: int = 0) -> Timeline:
    """The system's speech regions cut into 1 s pieces, each given a uniformly random speaker."""
    rng = np.random.default_rng(seed)
    regions = Timeline(hyp.rec_id, [Segment(s.start, s.end, "s") for s in hyp]).merged()
    pieces = []
    for s in regions:
        a = s.start
        while a < s.end - 1e-9:
            b = min(s.end, a + 1.0)
            pieces.append(Segment(a, b, f"r{rng.integers(labels)}"))
            a = b
    return Timeline(hyp.rec_id, pieces)


@pytest.fixture(scope="module")
def pipeline_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    first = run_pipeline(root / "run1")
    second = run_pipeline(root / "run2")
    return root, first, second


@pytest.mark.slow
def test_c7_end_to_end(pipeline_runs, acceptance_report):
    root, (elapsed, kv), _ = pipeline_runs
    refs = read_rttm(root / "run1" / "ref.rttm")
    hyps = read_rttm(root / "run1" / "out" / "all.rttm")
    baseline = score(refs, {k: random_label_baseline(h) for k, h in hyps.items()})
    der = float(kv["DER"])
    ok = der <= 10.0 and baseline.DER >= 60.0 and elapsed <= 15 * 60
    detail = f"DER={der:.2f}% (MS {float(kv['MS']):.2f}, FA {float(kv['FA']):.2f}, SER {float(kv['SER']):.2f}); random-label baseline DER={baseline.DER:.2f}%; {elapsed:.0f}s"
    verdict(acceptance_report, 7, ok, detail)


@pytest.mark.slow
def test_c9_determinism(pipeline_runs, acceptance_report):
    root, _, _ = pipeline_runs
    a, b = root / "run1", root / "run2"
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file() and p.suffix in (".params", ".rttm", ".f64"))
    differing = [str(f) for f in files if (a / f).read_bytes() != (b / f).read_bytes()]
    n_params = sum(f.suffix == ".params" for f in files)
    n_rttm = sum(f.suffix == ".rttm" for f in files)
    ok = not differing and n_params == 3 and n_rttm > 0
    detail = f"{len(files)} files compared ({n_params} param archives, {n_rttm} RTTM); differing: {differing or 'none'}"
    verdict(acceptance_report, 9, ok, detail)


@pytest.mark.slow
def test_c8_combination_trend(acceptance_report):
    corpus = generate_synthetic_corpus(SyntheticCorpusSpec(seed=0))
    speakers = len({s.label for r in corpus.train for s in r.reference})
    acc = {}
    for system in ("TDNN", "HORNN") + VARIANTS:
        res = train_system(ModelSpec(system, speakers=speakers), corpus.train, TrainConfig(seed=0))
        acc[system] = res.accuracy[-1]
    best_single = max(acc["TDNN"], acc["HORNN"])
    behind = [v for v in VARIANTS if acc[v] < best_single - 0.005]
    stacked_behind = [v for v in VARIANTS if v.startswith("Stacked") and acc[v] < best_single]
    ok = not behind and not stacked_behind
    detail = " ".join(f"{k}={100 * v:.1f}" for k, v in acc.items())
    if behind or stacked_behind:
        detail += f"; below the bar: {sorted(set(behind + stacked_behind))}"
    verdict(acceptance_report, 8, ok, detail)
