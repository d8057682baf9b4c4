import numpy as np
import pytest

from nairs.benchmark import two_cluster_dataset
from nairs.dataset import UserHistory, build_user_histories
from nairs.model import AttentionParams, Hyperparams, ModelParams


def random_params(rng, num_users, num_items, d, a, scale=0.5):
    """Random params large enough to give well-conditioned gradients."""
    return ModelParams(
        P=rng.normal(0.0, scale, size=(num_items, d)),
        Q=rng.normal(0.0, scale, size=(num_items, d)),
        user_bias=rng.normal(0.0, scale, size=num_users),
        item_bias=rng.normal(0.0, scale, size=num_items),
        attn=AttentionParams(
            W=rng.normal(0.0, scale, size=(a, d)),
            V=rng.normal(0.0, scale, size=a),
            b=rng.normal(0.0, scale, size=a),
        ),
    )


def random_histories(rng, num_users, num_items, max_len=4):
    """Histories of length 1..max_len; some users deliberately empty."""
    histories = {}
    for u in range(num_users):
        if rng.random() < 0.15:
            continue  # cold user
        size = int(rng.integers(1, max_len + 1))
        items = rng.choice(num_items, size=min(size, num_items), replace=False)
        histories[u] = UserHistory(user=u, items=[int(j) for j in items])
    return histories


@pytest.fixture
def toy():
    return two_cluster_dataset()


@pytest.fixture
def toy_histories(toy):
    return build_user_histories(toy)


@pytest.fixture
def small_hp():
    return Hyperparams(d=4, a=3, beta=0.5, lam=1e-3, lr=1e-3, neg_ratio=2,
                       epochs=2, batch_size=8, seed=11)


def rng_of(seed):
    return np.random.default_rng(seed)
