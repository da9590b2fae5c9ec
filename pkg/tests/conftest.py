from __future__ import annotations

import numpy as np
import pytest

from cpt.models.config import model_preset
from cpt.network import CPTParams
from cpt.vocab import Vocabulary


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    return model_preset("tiny")


@pytest.fixture
def tiny_params(tiny_config):
    return CPTParams.initialize(tiny_config, np.random.default_rng(0))


@pytest.fixture
def wide_params():
    """Tiny shape with larger init so random-weight outputs are not near-uniform."""
    return CPTParams.initialize(model_preset("tiny", init_std=0.5), np.random.default_rng(7))


@pytest.fixture
def vocab(tiny_config):
    return Vocabulary.for_size(tiny_config.vocab_size)
