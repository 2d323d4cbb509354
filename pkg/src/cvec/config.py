"""Pipeline configuration: one TOML file, strict about unknown keys.

Example::

    seed = 7
    profile = "tiny"
    system = "Stacked_sigmoid"
    segmentation = "cpd"        # or "window"

    [paths]
    corpus = "corpus"
    model = "model"
    output = "out"

    [train]
    epochs = 6

    [segmenter]
    min_nonspeech = 0.2

Relative paths are resolved against the config file's directory.
The environment variable ``CVEC_SEED`` overrides ``seed``.
"""

from __future__ import annotations

import dataclasses
import os
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError
from .scoring import ScoreConfig
from .segmentation import SegmenterConfig
from .training import SYSTEMS, FrameTrainConfig, TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SEED_ENV = "CVEC_SEED"
SEGMENTATION_MODES = ("cpd", "window")


@dataclass(frozen=True)
class Paths:
    corpus: Path = Path("corpus")
    model: Path = Path("model")
    output: Path = Path("out")


@dataclass(frozen=True)
class ClusterConfig:
    p: float = 0.9  # calibrated on training recordings; see README
    k_max: int = 10
    restarts: int = 50

    def __post_init__(self):
        if not 0 < self.p < 1:
            raise ConfigError("clustering.p must be in (0, 1)")
        if self.k_max < 2 or self.restarts < 1:
            raise ConfigError("clustering.k_max >= 2 and restarts >= 1 are required")


@dataclass(frozen=True)
class PipelineConfig:
    seed: int = 0
    profile: str = "tiny"
    system: str = "Stacked_sigmoid"
    segmentation: str = "cpd"
    paths: Paths = field(default_factory=Paths)
    train: TrainConfig = field(default_factory=TrainConfig)
    vad_train: FrameTrainConfig = field(default_factory=lambda: FrameTrainConfig(steps=300))
    cpd_train: FrameTrainConfig = field(default_factory=lambda: FrameTrainConfig(steps=800))
    segmenter: SegmenterConfig = field(default_factory=SegmenterConfig)
    clustering: ClusterConfig = field(default_factory=ClusterConfig)
    score: ScoreConfig = field(default_factory=ScoreConfig)

    def __post_init__(self):
        if self.system not in SYSTEMS:
            raise ConfigError(f"unknown system {self.system!r}; choose from {', '.join(SYSTEMS)}")
        if self.segmentation not in SEGMENTATION_MODES:
            raise ConfigError(f"segmentation must be one of {SEGMENTATION_MODES}")
        if self.profile not in ("tiny", "full"):
            raise ConfigError(f"unknown profile {self.profile!r}")

    def with_seed(self, seed: int) -> "PipelineConfig":
        """Propagate one global seed to every stochastic stage."""
        return replace(
            self,
            seed=seed,
            train=replace(self.train, seed=seed),
            vad_train=replace(self.vad_train, seed=seed),
            cpd_train=replace(self.cpd_train, seed=seed + 1),
        )


_SECTIONS = {
    "paths": Paths,
    "train": TrainConfig,
    "vad_train": FrameTrainConfig,
    "cpd_train": FrameTrainConfig,
    "segmenter": SegmenterConfig,
    "clustering": ClusterConfig,
    "score": ScoreConfig,
}


def _build(cls, values: Mapping[str, Any], where: str, base=None):
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in [{where}]: {', '.join(unknown)}")
    kwargs = {}
    for name, value in values.items():
        if isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return replace(base, **kwargs) if base is not None else cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"[{where}]: {exc}") from None


def config_from_mapping(data: Mapping[str, Any], base_dir: Path | None = None) -> PipelineConfig:
    data = dict(data)
    top = {f.name for f in fields(PipelineConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    defaults = PipelineConfig()
    kwargs: dict[str, Any] = {}
    for name, value in data.items():
        if name in _SECTIONS:
            if not isinstance(value, Mapping):
                raise ConfigError(f"[{name}] must be a table")
            kwargs[name] = _build(_SECTIONS[name], value, name, getattr(defaults, name))
        else:
            kwargs[name] = value
    cfg = replace(defaults, **kwargs)
    seed = cfg.seed
    if os.environ.get(SEED_ENV):
        try:
            seed = int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
    cfg = cfg.with_seed(seed)
    base = base_dir or Path.cwd()
    p = cfg.paths
    resolved = Paths(*(Path(x) if Path(x).is_absolute() else base / Path(x) for x in (p.corpus, p.model, p.output)))
    return replace(cfg, paths=resolved)


def load_config(path: str | Path | None) -> PipelineConfig:
    """Read a TOML config; ``None`` gives the defaults relative to the working directory."""
    if path is None:
        return config_from_mapping({})
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_mapping(data, path.parent.resolve())


def config_to_dict(cfg: PipelineConfig) -> dict[str, Any]:
    """Plain-data view (paths as strings), for logging alongside trained models."""

    def plain(x):
        if dataclasses.is_dataclass(x):
            return {f.name: plain(getattr(x, f.name)) for f in fields(x)}
        if isinstance(x, Path):
            return str(x)
        if isinstance(x, tuple):
            return list(x)
        return x

    return plain(cfg)
