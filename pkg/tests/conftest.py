import os

import numpy as np
import pytest

from simfed.data import gen_synthetic_classification, gen_toy_sine, partition_iid
from simfed.models import MlpModel, RbfFeatureModel


@pytest.fixture(scope="session", autouse=True)
def _serial_threads():
    """Pin the parallelism contract: the suite (and its runtime budgets)
    measures the single-threaded default."""
    saved = os.environ.pop("SIMFED_THREADS", None)
    yield
    if saved is not None:
        os.environ["SIMFED_THREADS"] = saved


@pytest.fixture()
def toy_small():
    return gen_toy_sine(10, 2, seed=3)


@pytest.fixture()
def rbf_small():
    return RbfFeatureModel.sample(12, 0.3, seed=5)


@pytest.fixture()
def mlp_small():
    return MlpModel(sizes=(3, 6, 4), activation="tanh", task="classification")


@pytest.fixture()
def cls_fed():
    pool = gen_synthetic_classification(4, 30, 3, seed=11)
    return partition_iid(pool, 6, seed=12), pool


@pytest.fixture()
def rng():
    return np.random.default_rng(2024)
