import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nairs.dataset import UserHistory, build_user_histories, from_pairs
from nairs.errors import NotFoundError, StaleCacheError
from nairs.model import Hyperparams, model_digest
from nairs.retrieval import (
    adjusted_cosine,
    build_cache,
    check_cache_version,
    load_cache,
    save_cache,
    similar_items,
    similar_users,
    user_matrix,
    zero_variance,
)

from conftest import random_params


def test_self_similarity_is_two():
    assert adjusted_cosine([1, 2, 3], [1, 2, 3]) == pytest.approx(2.0, abs=1e-12)


def test_anti_aligned_after_centering_is_zero():
    assert adjusted_cosine([1, -1], [-1, 1]) == pytest.approx(0.0, abs=1e-12)


def test_zero_variance_neutral_value_and_flag():
    assert adjusted_cosine([5, 5], [1, 7]) == 1.0
    assert zero_variance([5, 5])
    assert not zero_variance([1, 7])


def test_length_mismatch_rejected():
    with pytest.raises(ValueError):
        adjusted_cosine([1, 2], [1, 2, 3])


@settings(max_examples=300, deadline=None)
@given(
    st.lists(st.floats(-1e4, 1e4), min_size=2, max_size=16),
    st.data(),
)
def test_range_and_symmetry(x, data):
    y = data.draw(st.lists(st.floats(-1e4, 1e4), min_size=len(x), max_size=len(x)))
    s = adjusted_cosine(x, y)
    assert 0.0 <= s <= 2.0
    assert s == adjusted_cosine(y, x)


def test_range_on_1e5_random_pairs():
    rng = np.random.default_rng(0)
    X = rng.normal(scale=100.0, size=(100_000, 8))
    Y = rng.normal(scale=0.01, size=(100_000, 8))
    for i in range(0, 100_000, 9973):  # spot-check symmetry on a subsample
        assert adjusted_cosine(X[i], Y[i]) == adjusted_cosine(Y[i], X[i])
    sims = np.fromiter(
        (adjusted_cosine(X[i], Y[i]) for i in range(100_000)), dtype=float
    )
    assert np.all(sims >= 0.0)
    assert np.all(sims <= 2.0)


# ---------------------------------------------------------------------------
# similar_users / similar_items
# ---------------------------------------------------------------------------

def small_world(seed=0, num_users=6, num_items=9, d=4):
    rng = np.random.default_rng(seed)
    params = random_params(rng, num_users, num_items, d, 3)
    rows = []
    for u in range(num_users):
        for j in rng.choice(num_items, size=int(rng.integers(1, 5)), replace=False):
            rows.append((u, int(j)))
    ds = from_pairs(rows, num_users=num_users, num_items=num_items)
    histories = build_user_histories(ds)
    hp = Hyperparams(d=d, a=3, beta=0.5)
    return params, histories, hp


def test_identical_histories_pairwise_similarity_two():
    params, _, hp = small_world(num_users=3)
    histories = {u: UserHistory(u, [0, 1, 2]) for u in range(3)}
    mat = user_matrix(params, histories, hp)
    for u in range(3):
        res = similar_users(mat, u, k=5)
        assert sorted(n for n, _ in res.neighbors) == sorted(set(range(3)) - {u})
        assert all(s == pytest.approx(2.0, abs=1e-9) for _, s in res.neighbors)


def test_k_larger_than_population_returns_all_without_padding():
    params, histories, hp = small_world()
    mat = user_matrix(params, histories, hp)
    res = similar_users(mat, 2, k=100)
    assert len(res.neighbors) == params.num_users - 1
    assert 2 not in [n for n, _ in res.neighbors]


def test_duplicated_item_embeddings_are_mutual_top_neighbors():
    params, _, hp = small_world()
    params.Q[3] = params.Q[7]
    r3 = similar_items(params, 3, k=1, threshold=0.0)
    r7 = similar_items(params, 7, k=1, threshold=0.0)
    assert r3.neighbors[0][0] == 7
    assert r7.neighbors[0][0] == 3
    assert r3.neighbors[0][1] == pytest.approx(2.0, abs=1e-12)


def test_threshold_above_two_yields_empty_list():
    params, _, hp = small_world()
    res = similar_items(params, 0, k=5, threshold=2.0 + 1e-9)
    assert res.neighbors == []


def test_unknown_ids_raise_not_found():
    params, histories, hp = small_world()
    mat = user_matrix(params, histories, hp)
    with pytest.raises(NotFoundError):
        similar_users(mat, 99, k=3)
    with pytest.raises(NotFoundError):
        similar_items(params, 99, k=3)


def test_similarities_descending_and_above_threshold():
    params, _, hp = small_world(seed=5)
    res = similar_items(params, 1, k=6, threshold=0.8)
    sims = [s for _, s in res.neighbors]
    assert sims == sorted(sims, reverse=True)
    assert all(s >= 0.8 for s in sims)


# ---------------------------------------------------------------------------
# Cache
# ---------------------------------------------------------------------------

def test_cache_equals_direct_scan_exactly():
    params, histories, hp = small_world(seed=7, num_users=50, num_items=60)
    cache = build_cache(params, histories, hp, depth=10)
    mat = user_matrix(params, histories, hp)
    for u in range(params.num_users):
        direct = similar_users(mat, u, k=10)
        cached = similar_users(cache, u, k=10)
        assert cached.neighbors == direct.neighbors
    for i in range(params.num_items):
        direct = similar_items(params, i, k=10, threshold=1.0)
        cached = similar_items(cache, i, k=10, threshold=1.0)
        assert cached.neighbors == direct.neighbors


def test_rebuild_on_identical_snapshot_is_identical():
    params, histories, hp = small_world(seed=9)
    c1 = build_cache(params, histories, hp, depth=5)
    c2 = build_cache(params, histories, hp, depth=5)
    assert c1.user_neighbors == c2.user_neighbors
    assert c1.item_neighbors == c2.item_neighbors
    assert c1.snapshot_version == c2.snapshot_version


def test_stale_cache_detected():
    params, histories, hp = small_world(seed=11)
    cache = build_cache(params, histories, hp, depth=5)
    check_cache_version(cache, params, hp)  # fresh: no error
    params.Q[0, 0] += 1.0
    with pytest.raises(StaleCacheError):
        check_cache_version(cache, params, hp)


def test_k1_on_two_item_model():
    rng = np.random.default_rng(13)
    params = random_params(rng, 2, 2, 3, 2)
    histories = {0: UserHistory(0, [0]), 1: UserHistory(1, [1])}
    hp = Hyperparams(d=3, a=2)
    cache = build_cache(params, histories, hp, depth=1)
    assert [n for n, _ in cache.item_neighbors[0]] == [1]
    assert [n for n, _ in cache.item_neighbors[1]] == [0]


def test_cache_round_trips_through_disk(tmp_path):
    params, histories, hp = small_world(seed=15)
    cache = build_cache(params, histories, hp, depth=8)
    path = tmp_path / "cache.json"
    save_cache(cache, str(path))
    loaded = load_cache(str(path))
    assert loaded.snapshot_version == cache.snapshot_version
    assert loaded.user_neighbors == cache.user_neighbors
    assert loaded.item_neighbors == cache.item_neighbors
    assert loaded.depth == cache.depth
    assert cache.snapshot_version == model_digest(params, hp)
