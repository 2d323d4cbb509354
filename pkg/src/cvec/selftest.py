"""Oracle checks that need no trained model; run by ``cvec selftest``."""

from __future__ import annotations

import re
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import numerics as nx
from .clustering import choose_k_and_cluster, cosine_affinity, refine_affinity
from .combination import VARIANTS, bilinear_combine, bilinear_full_oracle, tied_low_rank_tensor
from .gradcheck import GradCheckResult, check_gradients, random_projection_loss
from .nets import (
    cpd_forward,
    hornn_forward,
    init_cpd,
    init_hornn,
    init_tdnn,
    init_vad,
    profile_configs,
    tdnn_forward,
    vad_forward,
)
from .params import ParamFormatError, ParamStore
from .pooling import PoolingConfig, annotation_matrix, attention_penalty, init_pooling
from .scoring import ScoreConfig, score
from .segmentation import cpd_eval
from .timeline import Segment, Timeline
from .training import ModelSpec, embed_windows, init_model

GRAD_TOL = 1e-5


@dataclass
class CheckOutcome:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0


def _jitter_biases(params: ParamStore, rng: np.random.Generator) -> None:
    # zero biases put many ReLU inputs exactly on ties at random inputs
    for name in params:
        if re.fullmatch(r"b[wu]?\d*", name.rsplit(".", 1)[-1]):
            t = params[name]
            t.data[...] = rng.uniform(-0.1, 0.1, t.shape)


# ---------------------------------------------------------------------------
# gradient checks


def _network_case(name: str, rng: np.random.Generator, batch: int, steps: int):
    cfgs = profile_configs("tiny")
    params = ParamStore()
    if name == "TDNN":
        cfg = cfgs["tdnn"]
        init_tdnn(params, cfg, rng)
        x = rng.standard_normal((batch, steps, cfg.input_dim))
        out = lambda: tdnn_forward(x, cfg, params)
    elif name == "HORNN":
        cfg = cfgs["hornn"]
        init_hornn(params, cfg, rng)
        x = rng.standard_normal((batch, steps, cfg.input_dim))
        out = lambda: hornn_forward(x, cfg, params)
    elif name == "VAD":
        cfg = cfgs["vad"]
        init_vad(params, cfg, rng)
        x = rng.standard_normal((batch, cfg.window, cfg.feature_dim))
        out = lambda: vad_forward(x, cfg, params)
    elif name == "CPD":
        cfg = cfgs["cpd"]
        init_cpd(params, cfg, rng)
        past = rng.standard_normal((batch, cfg.window, cfg.tdnn.input_dim))
        future = rng.standard_normal((batch, cfg.window, cfg.tdnn.input_dim))
        out = lambda: cpd_forward(past, future, cfg, params)
    else:
        spec = ModelSpec(name, profile="tiny")
        params = init_model(spec, rng)
        x = rng.standard_normal((batch, steps, 40))

        # everything up to the combined vector, so the check covers the combiner and what feeds it
        def out():
            emb = embed_windows(x, spec, params)
            total = emb.embedding
            for p in emb.penalties:
                total = total + p
            return total

    _jitter_biases(params, rng)
    loss = random_projection_loss(rng)
    return (lambda: loss(out())), params


def gradient_check(name: str, seed: int = 0, n_samples: int = 200, batch: int = 4, steps: int = 30) -> GradCheckResult:
    """Finite-difference check of one network or combiner at the tiny profile.

    Parameters are freshly initialised from ``seed`` with biases jittered, the
    inputs are standard normal, and the loss is a fixed random projection of
    the output.
    """
    rng = np.random.default_rng(seed)
    f, params = _network_case(name, rng, batch, steps)
    return check_gradients(f, {n: params[n] for n in params}, n_samples=n_samples, rng=rng)


GRADIENT_TARGETS = ("TDNN", "HORNN", "VAD", "CPD") + VARIANTS


def gradient_suite(seed: int = 0, n_samples: int = 200) -> list[CheckOutcome]:
    out = []
    for name in GRADIENT_TARGETS:
        t0 = time.perf_counter()
        r = gradient_check(name, seed=seed, n_samples=n_samples)
        out.append(
            CheckOutcome(
                f"gradient {name}",
                r.ok(GRAD_TOL) and r.checked >= n_samples,
                f"max rel err {r.max_rel_error:.2e} over {r.checked} entries ({r.redrawn} redrawn)",
                time.perf_counter() - t0,
            )
        )
    return out


# ---------------------------------------------------------------------------
# algebra, attention, clustering, scoring


def bilinear_check(draws: int = 100, seed: int = 0) -> CheckOutcome:
    rng = np.random.default_rng(seed)
    worst_route = worst_tied = 0.0
    shortcut_exact = True
    for _ in range(draws):
        M, N = rng.integers(1, 7, size=2)
        O, D = rng.integers(1, 7), rng.integers(1, min(M, N) + 1)
        e1, e2 = rng.standard_normal(M), rng.standard_normal(N)
        W, b = rng.standard_normal((M, N, O)), rng.standard_normal(O)
        a = bilinear_full_oracle(e1, e2, W, b, route="form")
        c = bilinear_full_oracle(e1, e2, W, b, route="outer")
        worst_route = max(worst_route, float(np.max(np.abs(a - c))))

        p = ParamStore()
        U1, U2, P = rng.standard_normal((M, D)), rng.standard_normal((N, D)), rng.standard_normal((O, D))
        p.add("t.U1", U1), p.add("t.U2", U2), p.add("t.P", P), p.add("t.b", b)
        p.add("t.V1", np.zeros((O, M))), p.add("t.V2", np.zeros((O, N)))
        with nx.no_grad():
            got = bilinear_combine(e1, e2, "identity", p, "t").data
        ref = bilinear_full_oracle(e1, e2, tied_low_rank_tensor(U1, U2, P), b)
        worst_tied = max(worst_tied, float(np.max(np.abs(got - ref))))

        V1, V2 = rng.standard_normal((O, M)), rng.standard_normal((O, N))
        p["t.P"].data[...] = 0.0
        p["t.V1"].data[...] = V1
        p["t.V2"].data[...] = V2
        p["t.b"].data[...] = 0.0
        with nx.no_grad():
            got = bilinear_combine(e1, e2, "identity", p, "t").data
        shortcut_exact &= bool(np.array_equal(got, e1 @ V1.T + e2 @ V2.T))
    ok = worst_route <= 1e-12 and worst_tied <= 1e-12 and shortcut_exact
    return CheckOutcome(
        "bilinear equivalences",
        ok,
        f"routes {worst_route:.1e}, tied {worst_tied:.1e}, shortcut exact={shortcut_exact}",
    )


def attention_check(draws: int = 100, seed: int = 0) -> CheckOutcome:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(draws):
        T, N, G = rng.integers(1, 30), rng.integers(1, 10), rng.integers(1, 6)
        cfg = PoolingConfig(heads=int(G), hidden=8)
        p = ParamStore()
        init_pooling(p, cfg, int(N), rng, "a")
        with nx.no_grad():
            A = annotation_matrix(5 * rng.standard_normal((T, N)), p, "a").data
        worst = max(worst, float(np.max(np.abs(A.sum(axis=0) - 1))))
    T, G = 6, 3
    onehot = np.eye(T)[:, :G]
    spiky = attention_penalty(onehot, PoolingConfig(heads=G, lambdas=(1.0,) * G)).item()
    uniform = attention_penalty(np.full((T, 1), 1 / T), PoolingConfig(heads=1, lambdas=(1 / T,))).item()
    positive = all(
        attention_penalty(_random_stochastic(rng), PoolingConfig(heads=5)).item() > 0 for _ in range(draws)
    )
    ok = worst <= 1e-12 and spiky == 0 and abs(uniform) < 1e-15 and positive
    return CheckOutcome("attention invariants", ok, f"column sums {worst:.1e}, one-hot {spiky}, uniform {uniform:.1e}")


def _random_stochastic(rng: np.random.Generator) -> np.ndarray:
    A = rng.random((int(rng.integers(2, 20)), 5))
    return A / A.sum(axis=0)


def gaussian_clouds(k: int, rng: np.random.Generator, per_cluster: int = 20, dim: int = 32, sigma: float = 1.0):
    """k clouds whose centres are pairwise 10 sigma apart (scaled simplex corners)."""
    centres = np.zeros((k, dim))
    centres[np.arange(k), np.arange(k)] = 10 * sigma / np.sqrt(2)
    X = np.concatenate([c + sigma * rng.standard_normal((per_cluster, dim)) for c in centres])
    return X, np.repeat(np.arange(k), per_cluster)


def adjusted_rand_index(a, b) -> float:
    a, b = np.asarray(a), np.asarray(b)
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)
    comb = lambda x: x * (x - 1) / 2
    index = comb(table).sum()
    rows, cols = comb(table.sum(1)).sum(), comb(table.sum(0)).sum()
    expected = rows * cols / comb(len(a))
    top = (rows + cols) / 2
    return 1.0 if top == expected else float((index - expected) / (top - expected))


def clustering_check(seed: int = 0) -> CheckOutcome:
    rng = np.random.default_rng(seed)
    found = {}
    for k in (2, 3, 4, 5):
        X, truth = gaussian_clouds(k, rng)
        res = choose_k_and_cluster(refine_affinity(cosine_affinity(X)), k_max=10, embeddings=X)
        found[k] = (res.k, adjusted_rand_index(truth, res.labels))
    ok = all(kk == k and ari == 1.0 for k, (kk, ari) in found.items())
    return CheckOutcome("clustering recovery", ok, ", ".join(f"k={k}->{kk} ARI={a:.3f}" for k, (kk, a) in found.items()))


def scoring_check() -> CheckOutcome:
    ref = Timeline("fx", [Segment(0.0, 10.0, "A")])
    hyp = Timeline("fx", [Segment(0.0, 5.0, "c1")])
    r = score(ref, hyp, ScoreConfig(collar=0.25))
    ok = abs(r.MS - 50.0) <= 0.1 and r.FA == 0 and r.SER == 0
    cp = cpd_eval([1.0, 5.0], [1.3, 3.0, 7.0], collar=0.5)
    ok_cp = cp.precision == 0.5 and abs(cp.recall - 1 / 3) < 1e-15 and abs(cp.f1 - 0.4) < 1e-15
    return CheckOutcome(
        "scoring fixtures",
        ok and ok_cp,
        f"MS={r.MS:.2f} FA={r.FA:.2f} SER={r.SER:.2f}; CPD P={cp.precision:.3f} R={cp.recall:.3f} F1={cp.f1:.3f}",
    )


def serialization_check(seed: int = 0) -> CheckOutcome:
    rng = np.random.default_rng(seed)
    p = ParamStore()
    p.add("w", rng.standard_normal((3, 4)))
    blob = p.to_bytes()
    same = ParamStore.from_bytes(blob).to_bytes() == blob
    corrupted = bytearray(blob)
    corrupted[len(corrupted) // 2] ^= 0xFF
    try:
        ParamStore.from_bytes(bytes(corrupted))
        caught = False
    except ParamFormatError:
        caught = True
    return CheckOutcome("param archive", same and caught, f"round trip={same}, corruption detected={caught}")


def run_all(include_gradients: bool = True) -> list[CheckOutcome]:
    checks: list[Callable[[], CheckOutcome]] = [
        bilinear_check,
        attention_check,
        clustering_check,
        scoring_check,
        serialization_check,
    ]
    out = gradient_suite() if include_gradients else []
    for check in checks:
        t0 = time.perf_counter()
        res = check()
        res.seconds = time.perf_counter() - t0
        out.append(res)
    return out


def format_outcomes(outcomes: list[CheckOutcome]) -> str:
    width = max(len(o.name) for o in outcomes)
    return "\n".join(
        f"{'PASS' if o.passed else 'FAIL'}  {o.name.ljust(width)}  {o.seconds:6.2f}s  {o.detail}" for o in outcomes
    )
