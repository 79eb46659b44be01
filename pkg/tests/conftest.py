import numpy as np
import pytest

from mixadapt.model import AdaptationModel


@pytest.fixture()
def tiny_model():
    return AdaptationModel(input_dim=3, num_classes=3, feature_dim=4, hidden_sizes=(5,), seed=3)


def random_simplex(rng, n, c):
    rows = rng.gamma(1.0, 1.0, size=(n, c))
    return rows / rows.sum(axis=1, keepdims=True)
