"""HTTP API over a live model snapshot.

Exposes recommendations, interpretation payloads, similar-user/item
retrieval, profile editing, cold-start bootstrap, and an append-only
behavior log. Trained users' profiles lazily initialize from their known
histories; new users exist as soon as something is added to their profile
and are scored with a zero user bias (identity only enters the model
through that bias, so the live profile acts as the history).

Every profile mutation is appended to the event log (JSON lines, ISO-8601
timestamps) and fsynced before it is acknowledged; restarting the service
and replaying the log reconstructs every profile exactly.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from . import retrieval
from .dataset import InteractionSet, UserHistory, build_user_histories, load_dataset
from .errors import EmptyProfileError, NotFoundError, StaleCacheError
from .interpretation import (
    DEFAULT_FONT_MAX,
    DEFAULT_FONT_MIN,
    contribution_scores,
    profile_weights,
    tagcloud_scale,
)
from .model import (
    Hyperparams,
    ModelParams,
    fism_vector,
    load_model,
    model_digest,
    score_candidates,
    sigmoid,
    user_vector,
)

EVENT_KINDS = (
    "add_item",
    "remove_item",
    "like",
    "dislike",
    "click_recommendation",
    "search_query",
    "bootstrap_select",
    "follow_user",  # the similar-users "follow" action; logged, no model effect
)

ITEM_EVENT_KINDS = ("add_item", "remove_item", "like", "dislike",
                    "click_recommendation", "bootstrap_select")

MAX_SEARCH_SUGGESTIONS = 10


@dataclass
class SessionProfile:
    user: int
    items: list[int]
    created: str


class EventLog:
    """Append-only JSONL behavior log; appends are fsynced before returning."""

    def __init__(self, path: str):
        self.path = path
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        self._fh = open(path, "a", encoding="utf-8")
        self._lock = threading.Lock()

    def append(self, user: int, kind: str, payload) -> dict:
        event = {
            "ts": datetime.now(timezone.utc).isoformat(),
            "user": int(user),
            "kind": kind,
            "payload": payload,
        }
        line = json.dumps(event, sort_keys=True)
        with self._lock:
            self._fh.write(line + "\n")
            self._fh.flush()
            os.fsync(self._fh.fileno())
        return event

    def close(self) -> None:
        self._fh.close()

    @staticmethod
    def read_events(path: str) -> list[dict]:
        if not os.path.exists(path):
            return []
        events = []
        with open(path, "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    events.append(json.loads(line))
        return events


class ServiceState:
    """Owns the snapshot, the profiles, the caches, and the behavior log."""

    def __init__(self, params: ModelParams, hp: Hyperparams, dataset: InteractionSet,
                 log_path: str, cache: retrieval.SimilarityCache | None = None,
                 cache_depth: int = retrieval.DEFAULT_CACHE_DEPTH):
        self.params = params
        self.hp = hp
        self.dataset = dataset
        self.histories = build_user_histories(dataset)
        self.snapshot_version = model_digest(params, hp)
        self.profiles: dict[int, SessionProfile] = {}
        self._user_vectors: dict[int, np.ndarray | None] = {}
        self._mutate_lock = threading.Lock()

        if cache is not None:
            try:
                retrieval.check_cache_version(cache, params, hp)
            except StaleCacheError:
                cache = None  # stale caches are discarded and rebuilt
        if cache is None:
            cache = retrieval.build_cache(params, hp=hp, histories=self.histories,
                                          depth=cache_depth)
        self.cache = cache
        self._user_matrix = retrieval.user_matrix(params, self.histories, hp)

        self._replay(log_path)
        self.log = EventLog(log_path)

    # -- construction -----------------------------------------------------

    @classmethod
    def from_files(cls, model_path: str, data_dir: str, log_path: str,
                   cache_path: str | None = None) -> "ServiceState":
        params, hp = load_model(model_path)
        dataset = load_dataset(data_dir)
        cache = None
        if cache_path and os.path.exists(cache_path):
            cache = retrieval.load_cache(cache_path)
        return cls(params, hp, dataset, log_path, cache=cache)

    def _replay(self, log_path: str) -> None:
        for event in EventLog.read_events(log_path):
            self._apply_event(event["user"], event["kind"], event["payload"])

    # -- profiles ----------------------------------------------------------

    def is_known_user(self, user: int) -> bool:
        return user in self.profiles or 0 <= user < self.dataset.num_users

    def profile_items(self, user: int) -> list[int]:
        """Live profile if one exists, else the user's known history."""
        if user in self.profiles:
            return list(self.profiles[user].items)
        hist = self.histories.get(user)
        return list(hist.items) if hist else []

    def _materialize(self, user: int) -> SessionProfile:
        if user not in self.profiles:
            self.profiles[user] = SessionProfile(
                user=user,
                items=self.profile_items(user),
                created=datetime.now(timezone.utc).isoformat(),
            )
        return self.profiles[user]

    def _apply_event(self, user: int, kind: str, payload) -> None:
        if kind in ("add_item", "like", "remove_item"):
            profile = self._materialize(user)
            if kind == "remove_item":
                if payload in profile.items:
                    profile.items.remove(payload)
            elif payload not in profile.items:
                profile.items.append(payload)
            self._user_vectors.pop(user, None)
        # dislike / click_recommendation / search_query / bootstrap_select
        # are recorded for offline use and do not change serving state.

    def record(self, user: int, kind: str, payload) -> dict:
        """Durably log an event, then apply it. Returns the logged event."""
        with self._mutate_lock:
            event = self.log.append(user, kind, payload)
            self._apply_event(user, kind, payload)
        return event

    # -- scoring -----------------------------------------------------------

    def user_history(self, user: int) -> UserHistory:
        return UserHistory(user=user, items=self.profile_items(user))

    def profile_vector(self, user: int) -> np.ndarray | None:
        if user not in self._user_vectors:
            items = self.profile_items(user)
            if not items:
                self._user_vectors[user] = None
            elif self.hp.variant == "fism":
                self._user_vectors[user] = fism_vector(self.params, items,
                                                       self.hp.fism_alpha)
            else:
                self._user_vectors[user] = user_vector(
                    self.params, UserHistory(user, items), self.hp)
        return self._user_vectors[user]

    def recommend(self, user: int, n: int) -> list[tuple[int, float]]:
        """Top-n (item, score) over items outside the profile; ties by id."""
        profile = set(self.profile_items(user))
        candidates = np.asarray(
            [i for i in range(self.dataset.num_items) if i not in profile],
            dtype=int,
        )
        if candidates.size == 0 or n <= 0:
            return []
        scores = score_candidates(
            self.params, user, self.user_history(user), candidates,
            self.hp, self.hp.variant,
        )
        order = np.lexsort((candidates, -scores))
        take = order[: min(n, order.size)]
        return [(int(candidates[i]), float(scores[i])) for i in take]

    def name_of(self, item: int) -> str:
        return self.dataset.name_of(item)

    def valid_item(self, item: int) -> bool:
        return 0 <= item < self.dataset.num_items


def _item_entry(state: ServiceState, item: int) -> dict:
    return {"item": int(item), "name": state.name_of(item)}


def _profile_payload(state: ServiceState, user: int, warning: str | None = None) -> dict:
    items = state.profile_items(user)
    body = {
        "user": int(user),
        "items": [_item_entry(state, i) for i in items],
        "size": len(items),
    }
    if warning:
        body["warning"] = warning
    return body


def _interpretation_payload(state: ServiceState, user: int) -> dict | None:
    items = state.profile_items(user)
    if not items:
        return None
    pairs = profile_weights(state.params, UserHistory(user, items), state.hp)
    fonts = tagcloud_scale([w for _, w in pairs], DEFAULT_FONT_MIN, DEFAULT_FONT_MAX)
    return {
        "entries": [
            {
                "item": int(item),
                "name": state.name_of(item),
                "weight": float(w),
                "font_size": float(f),
            }
            for (item, w), f in zip(pairs, fonts)
        ]
    }


def create_app(state: ServiceState) -> FastAPI:
    app = FastAPI(title="nairs", version="0.1.0")

    @app.middleware("http")
    async def stamp_snapshot(request: Request, call_next):
        response = await call_next(request)
        response.headers["X-Snapshot-Version"] = state.snapshot_version
        return response

    @app.exception_handler(NotFoundError)
    async def not_found(request: Request, exc: NotFoundError):
        return JSONResponse(status_code=404, content={"error": str(exc)})

    @app.get("/health")
    def health():
        return {"status": "ok", "snapshot_version": state.snapshot_version}

    @app.get("/bootstrap/items")
    def bootstrap_items(k: int = 10, request: Request = None):
        seed = request.headers.get("x-sample-seed") if request else None
        rng = np.random.default_rng(int(seed)) if seed is not None else np.random.default_rng()
        k = max(0, min(k, state.dataset.num_items))
        picks = rng.choice(state.dataset.num_items, size=k, replace=False) if k else []
        return {
            "items": [_item_entry(state, int(i)) for i in picks],
            "snapshot_version": state.snapshot_version,
        }

    @app.get("/users/{user}/profile")
    def get_profile(user: int):
        if not state.is_known_user(user):
            raise HTTPException(status_code=404, detail={"error": f"unknown user {user}"})
        return _profile_payload(state, user)

    @app.post("/users/{user}/profile")
    def edit_profile(user: int, body: dict):
        if user < 0:
            raise HTTPException(status_code=404, detail={"error": f"invalid user {user}"})
        add = body.get("add", [])
        remove = body.get("remove", [])
        if not isinstance(add, list) or not isinstance(remove, list):
            raise HTTPException(status_code=400, detail={"error": "add/remove must be lists"})
        for item in list(add) + list(remove):
            if not isinstance(item, int) or not state.valid_item(item):
                raise HTTPException(status_code=404,
                                    detail={"error": "unknown item", "item": item})
        current = set(state.profile_items(user))
        warnings = []
        for item in add:
            if item not in current:
                state.record(user, "add_item", item)
                current.add(item)
        for item in remove:
            if item in current:
                state.record(user, "remove_item", item)
                current.discard(item)
            else:
                warnings.append(f"item {item} was not in the profile")
        return _profile_payload(state, user, warning="; ".join(warnings) or None)

    @app.get("/users/{user}/recommendations")
    def recommendations(user: int, n: int = 10):
        items = state.profile_items(user)
        if not items:
            return {
                "user": int(user),
                "cold_start": True,
                "bootstrap": "/bootstrap/items",
                "items": [],
                "interpretation": None,
                "snapshot_version": state.snapshot_version,
            }
        ranked = state.recommend(user, n)
        return {
            "user": int(user),
            "cold_start": False,
            "items": [
                {
                    "item": item,
                    "name": state.name_of(item),
                    "score": score,
                    "probability": float(sigmoid(score)),
                }
                for item, score in ranked
            ],
            "interpretation": _interpretation_payload(state, user),
            "snapshot_version": state.snapshot_version,
        }

    @app.get("/users/{user}/interpretation")
    def interpretation(user: int, target: int):
        if not state.valid_item(target):
            raise HTTPException(status_code=404,
                                detail={"error": "unknown item", "item": target})
        items = state.profile_items(user)
        if not items:
            raise HTTPException(status_code=400,
                                detail={"error": "profile is empty", "cold_start": True})
        if target in items:
            raise HTTPException(
                status_code=400,
                detail={"error": "target is already in the profile", "item": target},
            )
        try:
            breakdown = contribution_scores(
                state.params, user, UserHistory(user, items), target, state.hp)
        except EmptyProfileError as exc:
            raise HTTPException(status_code=400, detail={"error": str(exc)}) from exc
        fonts = tagcloud_scale([v for _, v in breakdown.entries],
                               DEFAULT_FONT_MIN, DEFAULT_FONT_MAX)
        total = breakdown.total()
        return {
            "user": int(user),
            "target": _item_entry(state, target),
            "bias_part": float(breakdown.bias_part),
            "entries": [
                {
                    "item": int(item),
                    "name": state.name_of(item),
                    "contribution": float(v),
                    "font_size": float(f),
                }
                for (item, v), f in zip(breakdown.entries, fonts)
            ],
            "total_score": float(total),
            "probability": float(sigmoid(total)),
            "snapshot_version": state.snapshot_version,
        }

    @app.get("/users/{user}/similar-users")
    def similar_users_endpoint(user: int, k: int = 10):
        if not state.is_known_user(user):
            raise HTTPException(status_code=404, detail={"error": f"unknown user {user}"})
        if user in state.profiles or user >= state.params.num_users:
            # live profile differs from the cached train-time vector: scan
            vec = state.profile_vector(user)
            mat = state._user_matrix
            if vec is None:
                raise HTTPException(status_code=400,
                                    detail={"error": "profile is empty", "cold_start": True})
            sims = np.asarray([
                retrieval.adjusted_cosine(vec, mat[u]) for u in range(mat.shape[0])
            ])
            if user < mat.shape[0]:
                sims[user] = -np.inf
            ids = np.arange(mat.shape[0])
            order = np.lexsort((ids, -sims))
            neighbors = [(int(ids[i]), float(sims[i])) for i in order[:k]]
        else:
            neighbors = retrieval.similar_users(state.cache, user, k).neighbors
        return {
            "user": int(user),
            "neighbors": [
                {
                    "user": int(other),
                    "similarity": float(sim),
                    "history": [
                        _item_entry(state, i)
                        for i in (state.histories.get(other).items
                                  if state.histories.get(other) else [])
                    ],
                }
                for other, sim in neighbors
            ],
            "snapshot_version": state.snapshot_version,
        }

    @app.get("/items/{item}/similar")
    def similar_items_endpoint(item: int, k: int = 10,
                               threshold: float = retrieval.DEFAULT_ITEM_THRESHOLD):
        if not state.valid_item(item):
            raise HTTPException(status_code=404,
                                detail={"error": "unknown item", "item": item})
        result = retrieval.similar_items(state.cache, item, k, threshold)
        body = {
            "item": _item_entry(state, item),
            "threshold": float(threshold),
            "neighbors": [
                {"item": int(j), "name": state.name_of(j), "similarity": float(s)}
                for j, s in result.neighbors
            ],
            "snapshot_version": state.snapshot_version,
        }
        if not result.neighbors:
            body["warning"] = "no items above the similarity threshold"
        return body

    @app.get("/items/search")
    def search_items(q: str = ""):
        query = q.strip().lower()
        suggestions = []
        if query:
            prefix, substring = [], []
            for item in range(state.dataset.num_items):
                name = state.name_of(item)
                lowered = name.lower()
                if lowered.startswith(query):
                    prefix.append((name, item))
                elif query in lowered:
                    substring.append((name, item))
            for name, item in sorted(prefix) + sorted(substring):
                suggestions.append({"item": int(item), "name": name})
                if len(suggestions) >= MAX_SEARCH_SUGGESTIONS:
                    break
        body = {"suggestions": suggestions, "snapshot_version": state.snapshot_version}
        if not suggestions:
            body["warning"] = f"no items match {q!r}"
        return body

    @app.post("/feedback")
    def feedback(body: dict):
        kind = body.get("kind")
        user = body.get("user")
        payload = body.get("payload")
        if kind not in EVENT_KINDS:
            raise HTTPException(status_code=400, detail={"error": f"unknown kind {kind!r}"})
        if not isinstance(user, int):
            raise HTTPException(status_code=400, detail={"error": "user must be an integer"})
        if kind in ITEM_EVENT_KINDS:
            if not isinstance(payload, int) or not state.valid_item(payload):
                raise HTTPException(status_code=400,
                                    detail={"error": "payload must be a known item id",
                                            "item": payload})
        elif kind == "search_query" and not isinstance(payload, str):
            raise HTTPException(status_code=400,
                                detail={"error": "payload must be a query string"})
        elif kind == "follow_user" and (
                not isinstance(payload, int) or not state.is_known_user(payload)):
            raise HTTPException(status_code=400,
                                detail={"error": "payload must be a known user id",
                                        "user": payload})
        event = state.record(user, kind, payload)
        return {
            "ok": True,
            "event": event,
            "snapshot_version": state.snapshot_version,
        }

    return app


def build_app(model_path: str, data_dir: str, log_path: str,
              cache_path: str | None = None) -> FastAPI:
    """Convenience constructor used by the CLI serve command."""
    state = ServiceState.from_files(model_path, data_dir, log_path, cache_path)
    return create_app(state)
