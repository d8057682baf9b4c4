"""Implicit-feedback dataset ingestion, splits, and negative sampling.

Input files are line oriented: ``user<sep>item<sep>rating[<sep>timestamp]``.
Ratings are binarized (any observed rating counts as a positive), raw ids are
remapped to contiguous 0-based integers, and duplicate (user, item) pairs are
dropped. All operations are pure functions of their inputs and seeds.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import EmptyDatasetError, NoNegativesError, ParseError

FORMAT_SEPARATORS = {"movielens_dat": "::", "tsv": "\t", "csv": ","}


@dataclass(frozen=True)
class Interaction:
    """One observed (user, item) positive; negatives are sampled, never stored."""

    user: int
    item: int
    label: int = 1
    timestamp: int | None = None


@dataclass
class InteractionSet:
    """A sparse binary user-item matrix with id-remap tables.

    ``num_users``/``num_items`` are the matrix dimensions. For freshly loaded
    data they equal max id + 1; derived subsets (e.g. the train half of a
    split) inherit the parent's dimensions so embeddings cover every item.
    """

    interactions: list[Interaction]
    num_users: int
    num_items: int
    item_names: dict[int, str] | None = None
    raw_user_ids: list[str] = field(default_factory=list)
    raw_item_ids: list[str] = field(default_factory=list)
    duplicates_dropped: int = 0

    @cached_property
    def user_item_sets(self) -> dict[int, set[int]]:
        """Per-user positive item sets; treat the instance as immutable."""
        sets: dict[int, set[int]] = {}
        for it in self.interactions:
            sets.setdefault(it.user, set()).add(it.item)
        return sets

    def name_of(self, item: int) -> str:
        if self.item_names and item in self.item_names:
            return self.item_names[item]
        if 0 <= item < len(self.raw_item_ids):
            return f"item {self.raw_item_ids[item]}"
        return f"item {item}"


@dataclass
class UserHistory:
    """The items a user has interacted with, in deterministic order."""

    user: int
    items: list[int]


@dataclass
class SplitPair:
    """Leave-one-out split: train set plus one held-out (user, item) per user."""

    train: InteractionSet
    test: list[tuple[int, int]]


def from_pairs(
    pairs,
    num_users: int | None = None,
    num_items: int | None = None,
    item_names: dict[int, str] | None = None,
) -> InteractionSet:
    """Build an InteractionSet from (user, item[, timestamp]) tuples.

    Convenience constructor for tests and synthetic data; applies the same
    de-duplication rule as file ingestion.
    """
    interactions: list[Interaction] = []
    seen: set[tuple[int, int]] = set()
    dropped = 0
    for pair in pairs:
        user, item = int(pair[0]), int(pair[1])
        ts = int(pair[2]) if len(pair) > 2 and pair[2] is not None else None
        if (user, item) in seen:
            dropped += 1
            continue
        seen.add((user, item))
        interactions.append(Interaction(user=user, item=item, timestamp=ts))
    if not interactions:
        raise EmptyDatasetError("no interactions")
    m = max(it.user for it in interactions) + 1
    n = max(it.item for it in interactions) + 1
    m = max(m, num_users or 0)
    n = max(n, num_items or 0)
    return InteractionSet(
        interactions=interactions,
        num_users=m,
        num_items=n,
        item_names=item_names,
        raw_user_ids=[str(u) for u in range(m)],
        raw_item_ids=[str(i) for i in range(n)],
        duplicates_dropped=dropped,
    )


def _parse_line(path: str, line_no: int, line: str, sep: str):
    parts = [p.strip() for p in line.split(sep)]
    if sep == "\t" and len(parts) == 1:
        parts = line.split()  # tolerate space-separated "tsv"
    if len(parts) not in (3, 4) or any(p == "" for p in parts[:3]):
        raise ParseError(path, line_no, f"expected user{sep}item{sep}rating[{sep}timestamp], got {line!r}")
    user, item, rating = parts[0], parts[1], parts[2]
    try:
        float(rating)
    except ValueError:
        raise ParseError(path, line_no, f"rating {rating!r} is not numeric") from None
    ts: int | None = None
    if len(parts) == 4 and parts[3] != "":
        try:
            ts = int(float(parts[3]))
        except ValueError:
            raise ParseError(path, line_no, f"timestamp {parts[3]!r} is not numeric") from None
    return user, item, ts


def load_interactions(path: str, format: str = "movielens_dat") -> InteractionSet:
    """Load an interaction file, remapping ids and binarizing ratings.

    ``format`` is one of movielens_dat (``::``-delimited), tsv, csv. A csv
    header row is tolerated. Malformed lines raise ParseError with the line
    number; an input with no interactions raises EmptyDatasetError.
    """
    if format not in FORMAT_SEPARATORS:
        raise ValueError(f"unknown format {format!r}")
    sep = FORMAT_SEPARATORS[format]

    interactions: list[Interaction] = []
    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    raw_users: list[str] = []
    raw_items: list[str] = []
    seen: set[tuple[int, int]] = set()
    dropped = 0

    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if line == "":
                continue
            if format == "csv" and line_no == 1:
                first = line.split(sep)[0].strip()
                try:
                    float(first)
                except ValueError:
                    continue  # header row
            user_raw, item_raw, ts = _parse_line(path, line_no, line, sep)
            if user_raw not in user_index:
                user_index[user_raw] = len(raw_users)
                raw_users.append(user_raw)
            if item_raw not in item_index:
                item_index[item_raw] = len(raw_items)
                raw_items.append(item_raw)
            u, i = user_index[user_raw], item_index[item_raw]
            if (u, i) in seen:
                dropped += 1
                continue
            seen.add((u, i))
            interactions.append(Interaction(user=u, item=i, timestamp=ts))

    if not interactions:
        raise EmptyDatasetError(f"{path}: empty dataset")
    return InteractionSet(
        interactions=interactions,
        num_users=len(raw_users),
        num_items=len(raw_items),
        raw_user_ids=raw_users,
        raw_item_ids=raw_items,
        duplicates_dropped=dropped,
    )


def load_item_names(path: str, format: str = "movielens_dat") -> dict[str, str]:
    """Load raw item id -> display name from a metadata file.

    Supports the ``::``-delimited movies file (movielens_dat), ``|``-delimited
    (pipe), and tsv/csv. Only the first two columns are used.
    """
    seps = {"movielens_dat": "::", "pipe": "|", "tsv": "\t", "csv": ","}
    if format not in seps:
        raise ValueError(f"unknown format {format!r}")
    sep = seps[format]
    names: dict[str, str] = {}
    with open(path, "r", encoding="latin-1") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if line == "":
                continue
            parts = line.split(sep)
            if len(parts) < 2:
                raise ParseError(path, line_no, f"expected id{sep}name, got {line!r}")
            names[parts[0].strip()] = parts[1].strip()
    return names


def attach_item_names(ds: InteractionSet, raw_names: dict[str, str]) -> None:
    """Attach display names keyed by raw item id to a loaded dataset."""
    ds.item_names = {
        idx: raw_names[raw]
        for idx, raw in enumerate(ds.raw_item_ids)
        if raw in raw_names
    }


def leave_one_out_split(data: InteractionSet) -> SplitPair:
    """Hold out each user's latest interaction (file order breaks ties).

    Users with a single interaction stay entirely in train. Missing
    timestamps sort before present ones, so the file-order fallback applies
    exactly when no timestamps distinguish the candidates.
    """
    best: dict[int, tuple[tuple[int, int], int]] = {}
    counts: dict[int, int] = {}
    for pos, it in enumerate(data.interactions):
        counts[it.user] = counts.get(it.user, 0) + 1
        key = (it.timestamp if it.timestamp is not None else -1, pos)
        if it.user not in best or key > best[it.user][0]:
            best[it.user] = (key, pos)

    held_positions = {
        pos for user, (_, pos) in best.items() if counts[user] >= 2
    }
    train_interactions = [
        it for pos, it in enumerate(data.interactions) if pos not in held_positions
    ]
    test = sorted(
        (data.interactions[pos].user, data.interactions[pos].item)
        for pos in held_positions
    )
    train = InteractionSet(
        interactions=train_interactions,
        num_users=data.num_users,
        num_items=data.num_items,
        item_names=data.item_names,
        raw_user_ids=data.raw_user_ids,
        raw_item_ids=data.raw_item_ids,
    )
    return SplitPair(train=train, test=test)


def sample_negatives(
    train: InteractionSet, user: int, k: int, rng: np.random.Generator
) -> list[int]:
    """Sample k unobserved items for a user, uniformly, retrying on positives.

    Draws are independent (duplicates across the k are possible); each draw
    is retried until it lands outside the user's train positives.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    positives = train.user_item_sets.get(user, set())
    n = train.num_items
    if len(positives) >= n:
        raise NoNegativesError(f"user {user} interacted with all {n} items")
    out: list[int] = []
    while len(out) < k:
        j = int(rng.integers(0, n))
        if j not in positives:
            out.append(j)
    return out


def build_user_histories(train: InteractionSet) -> dict[int, UserHistory]:
    """Group train positives per user, sorted by timestamp then item id."""
    grouped: dict[int, list[Interaction]] = {}
    for it in train.interactions:
        grouped.setdefault(it.user, []).append(it)
    histories: dict[int, UserHistory] = {}
    for user, its in grouped.items():
        its.sort(key=lambda x: (x.timestamp if x.timestamp is not None else -1, x.item))
        histories[user] = UserHistory(user=user, items=[x.item for x in its])
    return histories


def save_dataset(ds: InteractionSet, out_dir: str) -> None:
    """Write the normalized dataset directory (see README for the layout)."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "interactions.tsv"), "w", encoding="utf-8") as fh:
        for it in ds.interactions:
            ts = "" if it.timestamp is None else str(it.timestamp)
            fh.write(f"{it.user}\t{it.item}\t{it.label}\t{ts}\n")
    with open(os.path.join(out_dir, "users.tsv"), "w", encoding="utf-8") as fh:
        for idx, raw in enumerate(ds.raw_user_ids):
            fh.write(f"{idx}\t{raw}\n")
    with open(os.path.join(out_dir, "items.tsv"), "w", encoding="utf-8") as fh:
        for idx, raw in enumerate(ds.raw_item_ids):
            name = ds.item_names.get(idx, "") if ds.item_names else ""
            fh.write(f"{idx}\t{raw}\t{name}\n")


def load_dataset(data_dir: str) -> InteractionSet:
    """Load a normalized dataset directory written by save_dataset."""
    inter_path = os.path.join(data_dir, "interactions.tsv")
    interactions: list[Interaction] = []
    with open(inter_path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if line == "":
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ParseError(inter_path, line_no, f"expected 4 columns, got {line!r}")
            ts = int(parts[3]) if parts[3] != "" else None
            interactions.append(
                Interaction(user=int(parts[0]), item=int(parts[1]), label=int(parts[2]), timestamp=ts)
            )
    if not interactions:
        raise EmptyDatasetError(f"{inter_path}: empty dataset")

    raw_users: list[str] = []
    with open(os.path.join(data_dir, "users.tsv"), "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line:
                raw_users.append(line.split("\t")[1])
    raw_items: list[str] = []
    names: dict[int, str] = {}
    with open(os.path.join(data_dir, "items.tsv"), "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            raw_items.append(parts[1])
            if len(parts) > 2 and parts[2]:
                names[int(parts[0])] = parts[2]
    return InteractionSet(
        interactions=interactions,
        num_users=len(raw_users),
        num_items=len(raw_items),
        item_names=names or None,
        raw_user_ids=raw_users,
        raw_item_ids=raw_items,
    )
