import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from features.matrix import FeatureMatrix  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def sparse_problem(rng):
    """n=200, p=20 design with three nonzero coefficients."""
    X = rng.standard_normal((200, 20))
    beta = np.zeros(20)
    beta[[0, 3, 7]] = [1.5, -2.0, 0.8]
    y = 3.0 + X @ beta + 0.3 * rng.standard_normal(200)
    return X, y, beta


def make_matrix(values, names=None, ids=None):
    values = np.asarray(values, dtype=float)
    names = names or [f"f{j}" for j in range(values.shape[1])]
    ids = ids or [f"P{i:04d}" for i in range(values.shape[0])]
    return FeatureMatrix(ids, names, values, np.zeros(values.shape, dtype=bool), {n: {"kind": "test"} for n in names})
