import time

import numpy as np
import pytest

from v2s_lab.corpus import CorpusSpec, synth_corpus
from v2s_lab.models import preset
from v2s_lab.pipeline import TrainingConfig, train_asr, train_asv

_VERDICTS: list[str] = []


def record_verdict(line: str) -> None:
    _VERDICTS.append(line)


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in _VERDICTS:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_corpus():
    spec = CorpusSpec(
        n_speakers=3, n_phonemes=4, static_dim=3, utterances_per_speaker=6, heldout_per_speaker=2, min_frames=12, max_frames=20
    )
    return synth_corpus(spec)


@pytest.fixture(scope="session")
def desk_corpus():
    return synth_corpus(CorpusSpec())


@pytest.fixture(scope="session")
def desk_models(desk_corpus):
    """ASV and ASR trained on the default desk corpus, with their histories and wall time."""
    t0 = time.perf_counter()
    asv, asv_hist = train_asv(desk_corpus, preset("asv"), TrainingConfig(seed=0))
    asr, asr_hist = train_asr(desk_corpus, preset("asr"), TrainingConfig(seed=0))
    return {
        "asv": asv,
        "asr": asr,
        "asv_history": asv_hist,
        "asr_history": asr_hist,
        "seconds": time.perf_counter() - t0,
    }
