import numpy as np
import pytest
import torch

torch.set_num_threads(2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def overfit_result():
    """One shared 500-epoch tiny overfit run (several minutes on CPU)."""
    from bsnet.experiments import overfit_run

    return overfit_run(epochs=500, n_samples=4, seed=0)
