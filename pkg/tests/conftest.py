import numpy as np
import pytest

from shrinkfuse.glm import Dataset, Source


def make_logistic(rng, n, beta, source=Source.SMALL):
    p = len(beta)
    X = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
    mu = 1.0 / (1.0 + np.exp(-X @ np.asarray(beta)))
    y = (rng.random(n) < mu).astype(float)
    return Dataset(y, X, source)


@pytest.fixture
def seed42_data():
    """Fixed 30-row, p=3 dataset drawn from seed 42."""
    rng = np.random.default_rng(42)
    return make_logistic(rng, 30, [0.2, 0.8, -0.5])


@pytest.fixture
def seed42_pair():
    rng = np.random.default_rng(42)
    beta = np.array([0.3, 0.6, -0.4, 0.2])
    small = make_logistic(rng, 120, beta, Source.SMALL)
    big = make_logistic(rng, 600, beta + np.array([0.3, -0.2, 0.1, 0.0]), Source.BIG)
    return small, big
