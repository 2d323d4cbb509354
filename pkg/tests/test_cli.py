import numpy as np
import pytest

from cvec import cli
from cvec.corpus import save_corpus, write_feats
from cvec.nets import init_cpd, init_vad, profile_configs
from cvec.params import ParamStore
from cvec.selftest import CheckOutcome
from cvec.training import ModelSpec, init_model

TINY = """seed = 3
system = "TDNN"
[paths]
corpus = "corpus"
model = "{model}"
output = "{output}"
[train]
epochs = {epochs}
[vad_train]
steps = 5
[cpd_train]
steps = 5
"""


def make_config(root, model="model", output="out", epochs=1):
    path = root / f"{model}.toml"
    path.write_text(TINY.format(model=model, output=output, epochs=epochs))
    return str(path)


@pytest.fixture(scope="session")
def workspace(small_corpus, tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    save_corpus(small_corpus, root / "corpus")
    assert cli.main(["train", "--config", make_config(root)]) == 0
    return root


def test_train_writes_model(workspace):
    names = {p.name for p in (workspace / "model").iterdir()}
    assert {"model.json", "vad.params", "cpd.params", "embed.params", "metrics.json"} <= names


def test_train_is_deterministic(workspace):
    assert cli.main(["train", "--config", make_config(workspace, model="again")]) == 0
    for name in ("vad.params", "cpd.params", "embed.params"):
        assert (workspace / "again" / name).read_bytes() == (workspace / "model" / name).read_bytes()


def test_zero_epochs_saves_initialisation(workspace):
    assert cli.main(["train", "--config", make_config(workspace, model="init"), "--epochs", "0"]) == 0
    rng = np.random.default_rng(3)
    spec = ModelSpec("TDNN", speakers=4)
    assert (workspace / "init" / "embed.params").read_bytes() == init_model(spec, rng).to_bytes()
    nets = profile_configs("tiny")
    vad = ParamStore()
    init_vad(vad, nets["vad"], np.random.default_rng(3))
    cpd = ParamStore()
    init_cpd(cpd, nets["cpd"], np.random.default_rng(4))
    assert (workspace / "init" / "vad.params").read_bytes() == vad.to_bytes()
    assert (workspace / "init" / "cpd.params").read_bytes() == cpd.to_bytes()


def test_diarize_and_score_against_reference(workspace, capsys):
    cfg = make_config(workspace)
    assert cli.main(["diarize", "--config", cfg]) == 0
    hyp = workspace / "out" / "all.rttm"
    assert hyp.read_text().startswith("SPEAKER eval000 1 ")
    ref = next((workspace / "corpus" / "eval").glob("*/ref.rttm"))
    capsys.readouterr()
    assert cli.main(["score", str(ref), str(hyp), "--format", "kv"]) == 0
    out = dict(line.split("=") for line in capsys.readouterr().out.split())
    assert 0 <= float(out["DER"]) and out["INVALID"] == "0"


def test_score_self_is_zero(workspace, capsys):
    ref = str(next((workspace / "corpus" / "eval").glob("*/ref.rttm")))
    assert cli.main(["score", ref, ref, "--format", "kv"]) == 0
    assert "DER=0.0000" in capsys.readouterr().out


def test_empty_recording_gives_empty_rttm(workspace, tmp_path):
    rec = tmp_path / "silent"
    rec.mkdir()
    write_feats(rec / "feats.f64", np.zeros((0, 40)))
    cfg = make_config(workspace, output=str(tmp_path / "hyp"))
    assert cli.main(["diarize", "--config", cfg, str(rec)]) == 0
    assert (tmp_path / "hyp" / "silent.rttm").read_text() == ""


def test_missing_corpus_is_input_error(tmp_path, capsys):
    assert cli.main(["train", "--config", make_config(tmp_path)]) == 2
    assert "corpus directory not found" in capsys.readouterr().err


def test_untrained_model_is_model_error(workspace, capsys):
    assert cli.main(["diarize", "--config", make_config(workspace, model="never")]) == 3
    assert "cvec train" in capsys.readouterr().err


def test_corrupt_params_is_model_error(workspace, tmp_path):
    import shutil

    shutil.copytree(workspace / "model", tmp_path / "bad")
    blob = bytearray((tmp_path / "bad" / "embed.params").read_bytes())
    blob[len(blob) // 2] ^= 0x01
    (tmp_path / "bad" / "embed.params").write_bytes(bytes(blob))
    assert cli.main(["diarize", "--config", make_config(workspace, model=str(tmp_path / "bad"))]) == 3


def test_score_input_errors(tmp_path, capsys):
    good = tmp_path / "g.rttm"
    good.write_text("SPEAKER r 1 0.0 1.0 <NA> <NA> a <NA> <NA>\n")
    assert cli.main(["score", str(good), str(tmp_path / "missing.rttm")]) == 2
    bad = tmp_path / "b.rttm"
    bad.write_text("SPEAKER r 1 0.0 1.0 <NA> <NA> a <NA> <NA>\nSPEAKER r 1 x 1.0 <NA> <NA> a <NA> <NA>\n")
    capsys.readouterr()
    assert cli.main(["score", str(good), str(bad)]) == 2
    assert ":2:" in capsys.readouterr().err


def test_unknown_config_key_is_input_error(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[train]\nepoch = 2\n")
    assert cli.main(["train", "--config", str(path)]) == 2


def test_selftest_exit_codes(monkeypatch):
    monkeypatch.setattr(cli, "run_all", lambda include_gradients: [CheckOutcome("ok", True, "")])
    assert cli.main(["selftest"]) == 0
    monkeypatch.setattr(cli, "run_all", lambda include_gradients: [CheckOutcome("broken", False, "")])
    assert cli.main(["selftest"]) == 4


def test_selftest_without_gradients_runs_real_checks(capsys):
    assert cli.main(["selftest", "--skip-gradients"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "clustering recovery" in out


def test_corpus_command(tmp_path):
    assert cli.main(["corpus", "--out", str(tmp_path / "c"), "--speakers", "3"]) == 0
    assert (tmp_path / "c" / "eval").is_dir()
