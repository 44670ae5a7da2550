import numpy as np
import pytest
from hypothesis import settings

from pgft.model import TrainConfig
from pgft.graphlearn import train_model

import imagesets

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def random_cgl(n: int, rng, density: float = 0.6) -> np.ndarray:
    """Random connected CGL: a spanning path plus random extra edges."""
    w = np.zeros((n, n))
    perm = rng.permutation(n)
    for a, b in zip(perm[:-1], perm[1:]):
        w[min(a, b), max(a, b)] = rng.uniform(0.1, 2.0)
    extra = rng.random((n, n)) < density
    w += np.triu(extra, 1) * rng.uniform(0.0, 2.0, (n, n))
    w = w + w.T
    return np.diag(w.sum(axis=1)) - w


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_images():
    names = ("camera", "coins", "brick", "chelsea")
    return [imagesets.load(n)[:192, :192] for n in names]


@pytest.fixture(scope="session")
def models(small_images):
    """One small model per coding mode, all trained on the same images."""
    out = {}
    for mode in ("nonsep", "sep-rc", "sep-r1"):
        cfg = TrainConfig(mode=mode, n_c=2)
        out[mode] = train_model(small_images, cfg)
    return out
