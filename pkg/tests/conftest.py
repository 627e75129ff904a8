import numpy as np
import pytest

from implicitcf.data import InteractionMatrix, SplitDataset


def build_toy_split(num_users, num_items, train_pairs, test_items):
    """Assemble a SplitDataset directly from explicit train pairs."""
    users = np.asarray([p[0] for p in train_pairs], dtype=np.int64)
    items = np.asarray([p[1] for p in train_pairs], dtype=np.int64)
    train = InteractionMatrix.from_pairs(num_users, num_items, users, items)
    times = [np.arange(row.size, dtype=np.int64) for row in train.user_items]
    return SplitDataset(train=train, train_times=times,
                        test_items=np.asarray(test_items, dtype=np.int64),
                        test_times=np.full(num_users, 10_000, dtype=np.int64))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
