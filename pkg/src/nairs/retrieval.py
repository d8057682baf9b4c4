"""Similar-user and similar-item search over learned representations.

Similarity is adjusted cosine shifted to [0, 2]: each vector is centered by
its own mean over embedding dimensions before the cosine, and 1 is added so
scores display as positive. Users are represented by their attention-weighted
profile vectors, items by their target-role embeddings. Exhaustive top-K
lists are precomputed into a cache stamped with the model snapshot digest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataset import UserHistory
from .errors import NotFoundError, StaleCacheError
from .model import Hyperparams, ModelParams, model_digest, user_vector

DEFAULT_ITEM_THRESHOLD = 1.0  # the neutral midpoint of [0, 2]
DEFAULT_CACHE_DEPTH = 50


@dataclass
class SimilarityResult:
    query: int
    neighbors: list[tuple[int, float]]  # (id, similarity), descending
    threshold: float
    query_degenerate: bool = False  # query vector had zero variance


@dataclass
class SimilarityCache:
    user_neighbors: dict[int, list[tuple[int, float]]]
    item_neighbors: dict[int, list[tuple[int, float]]]
    snapshot_version: str
    depth: int


def zero_variance(x) -> bool:
    """True when the mean-centered vector has zero norm."""
    v = np.asarray(x, dtype=float)
    return bool(np.linalg.norm(v - v.mean()) == 0.0)


def adjusted_cosine(x, y) -> float:
    """Cosine of the mean-centered vectors plus 1, clipped into [0, 2].

    A zero-variance input (centered norm 0) yields the neutral value 1.0;
    use zero_variance() to detect that case.
    """
    a = np.asarray(x, dtype=float)
    b = np.asarray(y, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or a.size < 1:
        raise ValueError(f"expected equal-length vectors, got {a.shape} and {b.shape}")
    ac = a - a.mean()
    bc = b - b.mean()
    na = np.linalg.norm(ac)
    nb = np.linalg.norm(bc)
    if na == 0.0 or nb == 0.0:
        return 1.0
    value = 1.0 + float(ac @ bc) / (float(na) * float(nb))
    return float(min(2.0, max(0.0, value)))


def _centered_unit_rows(mat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rows centered by their own mean and normalized; flags zero-variance rows."""
    centered = mat - mat.mean(axis=1, keepdims=True)
    norms = np.linalg.norm(centered, axis=1)
    degenerate = norms == 0.0
    safe = np.where(degenerate, 1.0, norms)
    return centered / safe[:, None], degenerate


def _top_k_from_row(sims: np.ndarray, query: int, k: int,
                    threshold: float) -> list[tuple[int, float]]:
    """Top-k (id, similarity) above threshold, ties broken by ascending id."""
    ids = np.arange(sims.size)
    keep = (ids != query) & (sims >= threshold)
    ids = ids[keep]
    vals = sims[keep]
    order = np.lexsort((ids, -vals))
    take = order[: min(k, order.size)]
    return [(int(ids[i]), float(vals[i])) for i in take]


def user_matrix(params: ModelParams, histories: dict[int, UserHistory],
                hp: Hyperparams) -> np.ndarray:
    """Profile vectors for every user; zero rows for empty histories."""
    mat = np.zeros((params.num_users, params.d))
    for user, hist in histories.items():
        if hist.items and 0 <= user < params.num_users:
            mat[user] = user_vector(params, hist, hp)
    return mat


def _similarity_row(mat: np.ndarray, query: int) -> tuple[np.ndarray, bool]:
    unit, degenerate = _centered_unit_rows(mat)
    sims = 1.0 + unit @ unit[query]
    sims[degenerate] = 1.0
    sims = np.clip(sims, 0.0, 2.0)
    return sims, bool(degenerate[query])


def similar_users(source, user: int, k: int,
                  params: ModelParams | None = None,
                  histories: dict[int, UserHistory] | None = None,
                  hp: Hyperparams | None = None) -> SimilarityResult:
    """Top-k most similar users, from a SimilarityCache or computed directly.

    Pass a SimilarityCache as ``source`` for the O(1) path, or pass the user
    matrix (ndarray) to scan it.
    """
    if isinstance(source, SimilarityCache):
        if user not in source.user_neighbors:
            raise NotFoundError(f"unknown user {user}")
        neighbors = source.user_neighbors[user][:k]
        return SimilarityResult(query=user, neighbors=neighbors, threshold=0.0)
    mat = np.asarray(source, dtype=float)
    if not 0 <= user < mat.shape[0]:
        raise NotFoundError(f"unknown user {user}")
    sims, degenerate = _similarity_row(mat, user)
    return SimilarityResult(
        query=user,
        neighbors=_top_k_from_row(sims, user, k, threshold=0.0),
        threshold=0.0,
        query_degenerate=degenerate,
    )


def similar_items(source, item: int, k: int,
                  threshold: float = DEFAULT_ITEM_THRESHOLD) -> SimilarityResult:
    """Top-k items above the similarity threshold, by target embeddings."""
    if isinstance(source, SimilarityCache):
        if item not in source.item_neighbors:
            raise NotFoundError(f"unknown item {item}")
        neighbors = [
            (j, s) for j, s in source.item_neighbors[item] if s >= threshold
        ][:k]
        return SimilarityResult(query=item, neighbors=neighbors, threshold=threshold)
    if isinstance(source, ModelParams):
        mat = source.Q
    else:
        mat = np.asarray(source, dtype=float)
    if not 0 <= item < mat.shape[0]:
        raise NotFoundError(f"unknown item {item}")
    sims, degenerate = _similarity_row(mat, item)
    return SimilarityResult(
        query=item,
        neighbors=_top_k_from_row(sims, item, k, threshold),
        threshold=threshold,
        query_degenerate=degenerate,
    )


def build_cache(params: ModelParams, histories: dict[int, UserHistory],
                hp: Hyperparams, depth: int = DEFAULT_CACHE_DEPTH) -> SimilarityCache:
    """Exhaustive top-K neighbor lists for every user and item.

    Item lists keep everything down to similarity 0 so serve-time threshold
    filtering stays a pure cache lookup.
    """
    version = model_digest(params, hp)
    users = user_matrix(params, histories, hp)
    user_unit, user_degenerate = _centered_unit_rows(users)
    item_unit, item_degenerate = _centered_unit_rows(params.Q)

    def all_rows(unit, degenerate):
        n = unit.shape[0]
        out = {}
        for q in range(n):
            sims = 1.0 + unit @ unit[q]
            sims[degenerate] = 1.0
            if degenerate[q]:
                sims[:] = 1.0
            sims = np.clip(sims, 0.0, 2.0)
            out[q] = _top_k_from_row(sims, q, depth, threshold=0.0)
        return out

    return SimilarityCache(
        user_neighbors=all_rows(user_unit, user_degenerate),
        item_neighbors=all_rows(item_unit, item_degenerate),
        snapshot_version=version,
        depth=depth,
    )


def check_cache_version(cache: SimilarityCache, params: ModelParams,
                        hp: Hyperparams) -> None:
    live = model_digest(params, hp)
    if cache.snapshot_version != live:
        raise StaleCacheError(
            f"cache built for snapshot {cache.snapshot_version[:12]}..., "
            f"live snapshot is {live[:12]}..."
        )


def save_cache(cache: SimilarityCache, path: str) -> None:
    payload = {
        "format": "nairs-similarity-cache",
        "version": 1,
        "snapshot_version": cache.snapshot_version,
        "depth": cache.depth,
        "user_neighbors": {str(k): v for k, v in cache.user_neighbors.items()},
        "item_neighbors": {str(k): v for k, v in cache.item_neighbors.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_cache(path: str) -> SimilarityCache:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("format") != "nairs-similarity-cache":
        raise StaleCacheError(f"{path}: not a similarity cache file")
    return SimilarityCache(
        user_neighbors={
            int(k): [(int(j), float(s)) for j, s in v]
            for k, v in payload["user_neighbors"].items()
        },
        item_neighbors={
            int(k): [(int(j), float(s)) for j, s in v]
            for k, v in payload["item_neighbors"].items()
        },
        snapshot_version=payload["snapshot_version"],
        depth=int(payload["depth"]),
    )
