import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    from cvec.corpus import SyntheticCorpusSpec, generate_synthetic_corpus

    spec = SyntheticCorpusSpec(
        speakers=4, train_recordings=3, train_turns=8, eval_recordings=1, eval_turns=6, eval_speakers=3, seed=3
    )
    return generate_synthetic_corpus(spec)


_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one verdict line per acceptance criterion; printed at the end of the run."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
