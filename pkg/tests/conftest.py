import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def off_kinks(x, margin=1e-2):
    """Push values away from 0 so finite differences never straddle a ReLU kink."""
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def distinct(x, rng, margin=3e-3):
    """Random values with pairwise gaps > margin, so max-pool argmaxes are stable."""
    flat = np.sort(rng.uniform(-1, 1, int(np.prod(x))))
    flat = flat + margin * np.arange(flat.size)
    return rng.permutation(flat).reshape(x)
