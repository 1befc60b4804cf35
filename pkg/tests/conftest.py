import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from progosd.data import CorpusSpec, corpus_windows, generate_corpus
from progosd.model import ModelConfig


def tiny_model_config(**kw):
    base = dict(d_model=8, d_spk=4, n_enc=1, n_dec=1, heads=2,
                conv_kernel=3, ff_mult=1)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def small_corpus():
    """Four 60 s sessions with mixed overlap; enough windows of every class."""
    spec = CorpusSpec(num_sessions=4, session_seconds=60.0, num_speakers=3,
                      target_overlap_ratio=0.3, gap_mean_seconds=1.2, seed=42)
    sessions = generate_corpus(spec)
    return sessions


@pytest.fixture(scope="session")
def small_windows(small_corpus):
    return corpus_windows(small_corpus)
