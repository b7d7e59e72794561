import numpy as np
import pytest

from model_runtime import ModelConfig, WeightStore


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Narrow, shallow model so end-to-end tests stay fast"""
    return ModelConfig(nc=4, fie_blocks=1, spatial_blocks=1, frequency_blocks=1)


@pytest.fixture
def tiny_weights(tiny_config):
    return WeightStore.initialize(tiny_config, seed=7)
