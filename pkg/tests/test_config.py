from pathlib import Path

import pytest

from cvec.config import SEED_ENV, config_from_mapping, config_to_dict, load_config
from cvec.errors import ConfigError


def write(tmp_path, text):
    path = tmp_path / "c.toml"
    path.write_text(text)
    return path


def test_defaults():
    cfg = config_from_mapping({})
    assert cfg.system == "Stacked_sigmoid" and cfg.segmentation == "cpd"
    assert cfg.segmenter.min_nonspeech == 0.2 and cfg.clustering.p == 0.9 and cfg.score.collar == 0.25


def test_sections_override(tmp_path):
    cfg = load_config(write(tmp_path, 'system = "TDNN"\n[train]\nepochs = 3\n[clustering]\np = 0.5\n'))
    assert cfg.system == "TDNN" and cfg.train.epochs == 3 and cfg.clustering.p == 0.5
    assert cfg.train.window == 200


@pytest.mark.parametrize(
    "text, where",
    [("colour = 1\n", "top-level"), ("[train]\nepoch = 3\n", "train"), ("[paths]\nmodels = 'm'\n", "paths")],
)
def test_unknown_keys_rejected(tmp_path, text, where):
    with pytest.raises(ConfigError, match=where):
        load_config(write(tmp_path, text))


def test_bad_values(tmp_path):
    for text in ('system = "LSTM"\n', 'segmentation = "oracle"\n', "[clustering]\np = 1.5\n", "train = 3\n"):
        with pytest.raises(ConfigError):
            load_config(write(tmp_path, text))


def test_missing_and_malformed_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.toml")
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "seed = = 1\n"))


def test_relative_paths_follow_the_file(tmp_path):
    cfg = load_config(write(tmp_path, '[paths]\ncorpus = "data"\nmodel = "/abs/m"\n'))
    assert cfg.paths.corpus == tmp_path.resolve() / "data"
    assert cfg.paths.model == Path("/abs/m")


def test_seed_reaches_every_stage(tmp_path, monkeypatch):
    monkeypatch.delenv(SEED_ENV, raising=False)
    cfg = load_config(write(tmp_path, "seed = 7\n"))
    assert cfg.seed == cfg.train.seed == cfg.vad_train.seed == 7
    monkeypatch.setenv(SEED_ENV, "11")
    cfg = load_config(write(tmp_path, "seed = 7\n"))
    assert cfg.seed == cfg.train.seed == 11
    monkeypatch.setenv(SEED_ENV, "eleven")
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "seed = 7\n"))


def test_plain_dict_view():
    d = config_to_dict(config_from_mapping({}))
    assert isinstance(d["paths"]["corpus"], str) and d["train"]["window"] == 200
