import numpy as np
import pytest

from dynerr.attractor import build_reference
from dynerr.core import compute_norm_stats, split, zscore
from dynerr.generators import LorenzParams, simulate_lorenz


class LorenzEnv:
    """Small end-to-end environment: simulated data, splits, z-scored reference."""

    def __init__(self):
        data = simulate_lorenz(LorenzParams(n_steps=31_000, transient_discard=1_000))
        train, val, test = split(data)
        self.stats = compute_norm_stats(train)
        self.raw = data
        self.train = zscore(train, self.stats)
        self.val = zscore(val, self.stats)
        self.test = zscore(test, self.stats)
        self.ref = build_reference(self.train, normalized=True)


@pytest.fixture(scope="session")
def lorenz_env():
    return LorenzEnv()


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
