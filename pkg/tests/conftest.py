import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pdd.config import Config

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def tiny_config(**sections):
    """Small data, few epochs: enough to exercise the whole pipeline quickly."""
    base = {
        "data": {"n_train_normal": 8, "n_test_normal": 4, "n_test_abnormal": 4},
        "train": {"epochs": 2, "batch_size": 4},
    }
    for k, v in sections.items():
        base.setdefault(k, {}).update(v)
    return Config().replace(**base)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny():
    return tiny_config()
