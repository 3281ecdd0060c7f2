import numpy as np
import pytest

from sslse import data

from helpers import make_tone


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def tone():
    return make_tone()


@pytest.fixture(scope="session")
def tiny_corpus():
    return data.synth_smoke_corpus(n_utts=6, duration=1.3, seed=3)
