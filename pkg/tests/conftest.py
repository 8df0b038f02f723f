import numpy as np
import pytest

from stn.evalkit import toy_dataset
from stn.model import ModelConfig, init_params
from stn.trainer import Problem


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def toy():
    """(dataset, model config, params, problem) at the gradient-check scale."""
    ds = toy_dataset(seed=3)
    cfg = ModelConfig(d_s=7, d_t=5, n_classes=3, d=4, hidden=6, init_seed=3)
    params = init_params(cfg)
    return ds, cfg, params, Problem.from_dataset(ds, cfg.slope)
