"""End-to-end train and diarize stages behind the command line.

Model directory layout::

    model.json    system, profile, speaker list, window settings
    vad.params    cpd.params    embed.params    (ParamStore archives)
    metrics.json  per-epoch held-out accuracy and losses
"""

from __future__ import annotations

import json
import logging
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .clustering import (
    assign_segments,
    choose_k_and_cluster,
    cluster_label,
    cosine_affinity,
    refine_affinity,
    window_level_timeline,
)
from .config import PipelineConfig
from .corpus import Recording, load_recording, load_split
from .nets import init_cpd, init_vad, profile_configs
from .params import ParamFormatError, ParamStore
from .segmentation import cpd_segment, vad_segment
from .timeline import Segment, Timeline, write_rttm
from .training import (
    ModelSpec,
    TrainConfig,
    embed_array,
    init_model,
    make_windows,
    train_cpd,
    train_system,
    train_vad,
)

log = logging.getLogger(__name__)

MODEL_FORMAT = 1


class InputError(RuntimeError):
    """Missing or unreadable corpus, recording or RTTM input."""


class ModelError(RuntimeError):
    """Missing, corrupt or inconsistent trained model."""


@dataclass
class Models:
    spec: ModelSpec
    speakers: list[str]
    window: int
    shift: int
    vad: ParamStore
    cpd: ParamStore
    embed: ParamStore

    @property
    def nets(self) -> dict:
        return profile_configs(self.spec.profile)


# ---------------------------------------------------------------------------
# training


def train_models(cfg: PipelineConfig, recordings: Sequence[Recording]) -> tuple[Models, dict]:
    if not recordings:
        raise InputError("no training recordings")
    nets = profile_configs(cfg.profile)
    log.info("training VAD (%d steps)", cfg.vad_train.steps)
    vad = train_vad(recordings, nets["vad"], cfg.vad_train)
    log.info("training CPD (%d steps)", cfg.cpd_train.steps)
    cpd = train_cpd(recordings, nets["cpd"], cfg.cpd_train)
    speakers = sorted({s.label for r in recordings for s in r.reference})
    spec = ModelSpec(cfg.system, profile=cfg.profile, speakers=len(speakers), mu=cfg.train.mu)
    log.info("training %s embedding system (%d epochs)", cfg.system, cfg.train.epochs)
    result = train_system(spec, recordings, cfg.train)
    models = Models(spec, result.speakers, cfg.train.window, cfg.train.shift, vad, cpd, result.params)
    metrics = {"system": cfg.system, "heldout_accuracy": result.accuracy, "train_loss": result.losses}
    return models, metrics


def save_models(models: Models, directory: Path, metrics: dict | None = None) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "format": MODEL_FORMAT,
        "system": models.spec.system,
        "profile": models.spec.profile,
        "speakers": models.speakers,
        "window": models.window,
        "shift": models.shift,
        "mu": models.spec.mu,
    }
    (directory / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    models.vad.save(directory / "vad.params")
    models.cpd.save(directory / "cpd.params")
    models.embed.save(directory / "embed.params")
    if metrics is not None:
        (directory / "metrics.json").write_text(json.dumps(metrics, indent=2, sort_keys=True) + "\n")


def load_models(directory: Path) -> Models:
    meta_path = directory / "model.json"
    if not meta_path.exists():
        raise ModelError(f"no trained model in {directory} (model.json missing); run `cvec train` first")
    try:
        meta = json.loads(meta_path.read_text())
        if meta.get("format") != MODEL_FORMAT:
            raise ModelError(f"unsupported model format {meta.get('format')!r}")
        spec = ModelSpec(meta["system"], profile=meta["profile"], speakers=len(meta["speakers"]), mu=meta["mu"])
        stores = {n: ParamStore.load(directory / f"{n}.params") for n in ("vad", "cpd", "embed")}
    except (OSError, KeyError, ValueError, ParamFormatError) as exc:
        raise ModelError(f"cannot load model from {directory}: {exc}") from exc
    models = Models(spec, list(meta["speakers"]), int(meta["window"]), int(meta["shift"]), **stores)
    _check_inventory(models)
    return models


def _check_inventory(models: Models) -> None:
    rng = np.random.default_rng(0)
    expected = {"vad": ParamStore(), "cpd": ParamStore()}
    init_vad(expected["vad"], models.nets["vad"], rng)
    init_cpd(expected["cpd"], models.nets["cpd"], rng)
    expected["embed"] = init_model(models.spec, rng)
    for name, store in expected.items():
        got = getattr(models, name)
        for p in store:
            if p not in got or got[p].shape != store[p].shape:
                raise ModelError(f"{name}.params: parameter {p} missing or mis-shaped")


# ---------------------------------------------------------------------------
# diarisation


def recording_seed(seed: int, rec_id: str) -> int:
    return (seed * 1_000_003 + zlib.crc32(rec_id.encode())) % (2**32)


def diarize_recording(rec: Recording, models: Models, cfg: PipelineConfig) -> Timeline:
    """VAD, optional CPD, window embeddings, spectral clustering, label assignment."""
    feats = rec.feats
    if feats.shape[0] == 0:
        return Timeline(rec.rec_id, [])
    nets = models.nets
    speech = vad_segment(feats, models.vad, nets["vad"], cfg.segmenter, rec.rec_id)
    if cfg.segmentation == "cpd":
        segments = cpd_segment(feats, speech, models.cpd, nets["cpd"], cfg.segmenter)
    else:
        segments = speech
    if len(segments) == 0:
        return Timeline(rec.rec_id, [])
    wcfg = TrainConfig(window=models.window, shift=models.shift)
    indexed = Timeline(rec.rec_id, [Segment(s.start, s.end, str(i)) for i, s in enumerate(segments)])
    windows = make_windows(feats, indexed, wcfg)
    owner = np.array([int(w.label) for w in windows])
    X = embed_array(np.stack([w.feats for w in windows]), models.spec, models.embed)
    if len(windows) < 2:
        return Timeline(rec.rec_id, [Segment(s.start, s.end, cluster_label(0)) for s in segments])
    A = refine_affinity(cosine_affinity(X), cfg.clustering.p)
    clusters = choose_k_and_cluster(
        A,
        cfg.clustering.k_max,
        embeddings=X,
        restarts=cfg.clustering.restarts,
        seed=recording_seed(cfg.seed, rec.rec_id),
    )
    if cfg.segmentation == "cpd":
        window_map = [np.flatnonzero(owner == i).tolist() for i in range(len(segments))]
        return assign_segments(segments, window_map, X, clusters).merged()
    spans = [(w.start, w.stop) for w in windows]
    return window_level_timeline(rec.rec_id, spans, clusters.labels)


def diarize(recordings: Sequence[Recording], models: Models, cfg: PipelineConfig, jobs: int = 1) -> list[Timeline]:
    """Recordings are independent; results come back in input order whatever ``jobs`` is."""
    if jobs <= 1 or len(recordings) <= 1:
        return [diarize_recording(r, models, cfg) for r in recordings]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(lambda r: diarize_recording(r, models, cfg), recordings))


def load_recordings(paths: Sequence[str | Path], cfg: PipelineConfig, split: str = "eval") -> list[Recording]:
    """Explicit recording directories, or every recording of ``split`` under the corpus."""
    if paths:
        out = []
        for p in paths:
            p = Path(p)
            if not (p / "feats.f64").exists():
                raise InputError(f"{p}: not a recording directory (feats.f64 missing)")
            try:
                out.append(load_recording(p))
            except ValueError as exc:
                raise InputError(str(exc)) from exc
        return out
    if not cfg.paths.corpus.is_dir():
        raise InputError(f"corpus directory not found: {cfg.paths.corpus}")
    try:
        recs = load_split(cfg.paths.corpus, split)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if not recs:
        raise InputError(f"no recordings under {cfg.paths.corpus / split}")
    return recs


def write_hypotheses(hyps: Sequence[Timeline], directory: Path) -> Path:
    """One ``<rec>.rttm`` per recording plus ``all.rttm``; returns the latter."""
    directory.mkdir(parents=True, exist_ok=True)
    for h in hyps:
        write_rttm(directory / f"{h.rec_id}.rttm", h)
    combined = directory / "all.rttm"
    write_rttm(combined, list(hyps))
    return combined


def with_epochs(cfg: PipelineConfig, epochs: int) -> PipelineConfig:
    """``epochs == 0`` also skips VAD/CPD updates, leaving every model at its initialisation."""
    cfg = replace(cfg, train=replace(cfg.train, epochs=epochs))
    if epochs == 0:
        cfg = replace(cfg, vad_train=replace(cfg.vad_train, steps=0), cpd_train=replace(cfg.cpd_train, steps=0))
    return cfg
