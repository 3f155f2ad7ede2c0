import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from cfgrec import data as D  # noqa: E402
from cfgrec import trainer as tr  # noqa: E402
from cfgrec.synthetic import two_block_reviews  # noqa: E402


def synthetic_split(n_users=200, seed=0, ratios="80:20"):
    return D.split(D.preprocess(two_block_reviews(n_users=n_users, seed=seed)), ratios)


@pytest.fixture(scope="session")
def small_split():
    return synthetic_split(n_users=60, seed=1)


@pytest.fixture
def small_data(small_split):
    return tr.TrainData(D.to_multihot(small_split, "train"), D.to_multihot(small_split, "test"), "test", "fp")
