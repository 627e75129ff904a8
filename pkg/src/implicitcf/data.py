"""Rating-log ingestion and dataset assembly.

Pipeline: parse a raw rating log, optionally k-core filter it, assign dense
ids, hold out each user's latest interaction as the test positive, and draw
negative samples for training and evaluation.  The canonical on-disk formats
(``.train.rating`` / ``.test.rating`` / ``.test.negative``) are documented in
the README and round-trip exactly.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

FORMAT_DOUBLE_COLON = "double_colon"
FORMAT_TAB_SEPARATED = "tab_separated"
_SEPARATORS = {FORMAT_DOUBLE_COLON: "::", FORMAT_TAB_SEPARATED: "\t"}


class DataFormatError(ValueError):
    """Malformed input file; the message carries ``path:line``."""


class EmptyDatasetError(ValueError):
    """No records survive ingestion or filtering."""


@dataclass
class RatingLog:
    """Deduplicated rating records: (user token, item token, rating, timestamp).

    Order is first appearance of each (user, item) pair in the source file;
    duplicates keep the latest timestamp (ties: the later line wins).
    """

    records: list[tuple[str, str, float, int]]

    def __len__(self) -> int:
        return len(self.records)


def load_ratings(path: str | os.PathLike, fmt: str) -> RatingLog:
    """Parse one rating per line, collapsing duplicate (user, item) pairs."""
    if fmt not in _SEPARATORS:
        raise ValueError(f"unknown format {fmt!r}; expected one of {sorted(_SEPARATORS)}")
    sep = _SEPARATORS[fmt]
    records: list[tuple[str, str, float, int]] = []
    position: dict[tuple[str, str], int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line:
                continue
            parts = line.split(sep)
            if len(parts) != 4:
                raise DataFormatError(
                    f"{path}:{lineno}: expected 4 fields separated by {sep!r}, "
                    f"got {len(parts)}")
            user, item = parts[0], parts[1]
            try:
                rating = float(parts[2])
                timestamp = int(parts[3])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if timestamp < 0:
                raise DataFormatError(f"{path}:{lineno}: negative timestamp")
            key = (user, item)
            seen = position.get(key)
            if seen is None:
                position[key] = len(records)
                records.append((user, item, rating, timestamp))
            elif timestamp >= records[seen][3]:
                records[seen] = (user, item, rating, timestamp)
    if not records:
        raise EmptyDatasetError(f"{path}: no rating records")
    return RatingLog(records)


def filter_k_core(log: RatingLog, min_user_interactions: int = 20,
                  min_item_interactions: int = 5) -> RatingLog:
    """Iteratively drop light users/items until both thresholds hold."""
    if min_user_interactions < 1 or min_item_interactions < 1:
        raise ValueError("k-core thresholds must be >= 1")
    records = log.records
    while True:
        user_counts: dict[str, int] = {}
        item_counts: dict[str, int] = {}
        for user, item, _, _ in records:
            user_counts[user] = user_counts.get(user, 0) + 1
            item_counts[item] = item_counts.get(item, 0) + 1
        kept = [r for r in records
                if user_counts[r[0]] >= min_user_interactions
                and item_counts[r[1]] >= min_item_interactions]
        if not kept:
            raise EmptyDatasetError(
                f"k-core filter ({min_user_interactions}, {min_item_interactions}) "
                "removed every record")
        if len(kept) == len(records):
            return RatingLog(kept)
        records = kept


@dataclass
class IdMaps:
    """Bijections between external tokens and dense indices."""

    user_index: dict[str, int]
    item_index: dict[str, int]
    users: list[str]
    items: list[str]

    @property
    def num_users(self) -> int:
        return len(self.users)

    @property
    def num_items(self) -> int:
        return len(self.items)


def _build_views(num_rows: int, owners: np.ndarray, members: np.ndarray,
                 values: np.ndarray | None = None):
    """Group ``members`` (and optionally ``values``) by ``owners``, each group
    sorted by member index."""
    order = np.lexsort((members, owners))
    owners_sorted = owners[order]
    members_sorted = members[order]
    starts = np.searchsorted(owners_sorted, np.arange(num_rows), side="left")
    ends = np.searchsorted(owners_sorted, np.arange(num_rows), side="right")
    groups = [members_sorted[s:e] for s, e in zip(starts, ends)]
    if values is None:
        return groups, None
    values_sorted = values[order]
    return groups, [values_sorted[s:e] for s, e in zip(starts, ends)]


@dataclass
class InteractionMatrix:
    """Binary interaction matrix in dual sparse-index form.

    ``user_items[u]`` is the sorted array of item indices user u interacted
    with; ``item_users[i]`` the sorted array of users for item i.  Both views
    encode the identical pair set.
    """

    num_users: int
    num_items: int
    user_items: list[np.ndarray]
    item_users: list[np.ndarray]

    @classmethod
    def from_pairs(cls, num_users: int, num_items: int,
                   users: np.ndarray, items: np.ndarray) -> "InteractionMatrix":
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if users.shape != items.shape:
            raise ValueError("users and items must have the same length")
        if users.size:
            if users.min() < 0 or users.max() >= num_users:
                raise ValueError("user index out of range")
            if items.min() < 0 or items.max() >= num_items:
                raise ValueError("item index out of range")
        user_items, _ = _build_views(num_users, users, items)
        for u, row in enumerate(user_items):
            if row.size and np.any(np.diff(row) == 0):
                raise ValueError(f"duplicate interaction in row {u}")
        item_users, _ = _build_views(num_items, items, users)
        return cls(num_users, num_items, user_items, item_users)

    @property
    def nnz(self) -> int:
        return int(sum(row.size for row in self.user_items))

    def has(self, user: int, item: int) -> bool:
        row = self.user_items[user]
        pos = np.searchsorted(row, item)
        return bool(pos < row.size and row[pos] == item)


def _isin_sorted(sorted_arr: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Membership of ``values`` in a sorted array, vectorized."""
    if sorted_arr.size == 0:
        return np.zeros(values.shape, dtype=bool)
    pos = np.searchsorted(sorted_arr, values)
    pos[pos == sorted_arr.size] = sorted_arr.size - 1
    return sorted_arr[pos] == values


@dataclass
class SplitDataset:
    """Leave-one-out split: per-user latest interaction held out for testing."""

    train: InteractionMatrix
    train_times: list[np.ndarray]      # aligned with train.user_items
    test_items: np.ndarray             # held-out item per user, shape (num_users,)
    test_times: np.ndarray
    dropped_users: int = 0

    @property
    def num_users(self) -> int:
        return self.train.num_users

    @property
    def num_items(self) -> int:
        return self.train.num_items

    @property
    def total_interactions(self) -> int:
        """Train plus held-out interactions (the ingested dataset size)."""
        return self.train.nnz + self.train.num_users

    @property
    def sparsity(self) -> float:
        return 1.0 - self.total_interactions / (self.num_users * self.num_items)


def build_split(log: RatingLog) -> tuple[IdMaps, SplitDataset]:
    """Assign dense ids (first-appearance order) and split leave-one-out.

    Per user the record with the maximum timestamp is held out (timestamp ties
    broken by the larger dense item index); users with a single interaction
    are dropped with a logged count.
    """
    counts: dict[str, int] = {}
    for user, _, _, _ in log.records:
        counts[user] = counts.get(user, 0) + 1
    dropped = sum(1 for c in counts.values() if c < 2)
    if dropped:
        logger.warning("dropping %d user(s) with a single interaction", dropped)

    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    users: list[str] = []
    items: list[str] = []
    per_user: list[list[tuple[int, int]]] = []   # (item_idx, timestamp)
    for user, item, _, ts in log.records:
        if counts[user] < 2:
            continue
        uid = user_index.get(user)
        if uid is None:
            uid = len(users)
            user_index[user] = uid
            users.append(user)
            per_user.append([])
        iid = item_index.get(item)
        if iid is None:
            iid = len(items)
            item_index[item] = iid
            items.append(item)
        per_user[uid].append((iid, ts))
    if not users:
        raise EmptyDatasetError("no user has two or more interactions")

    num_users, num_items = len(users), len(items)
    train_u: list[int] = []
    train_i: list[int] = []
    train_t: list[int] = []
    test_items = np.empty(num_users, dtype=np.int64)
    test_times = np.empty(num_users, dtype=np.int64)
    for uid, entries in enumerate(per_user):
        best = max(range(len(entries)), key=lambda j: (entries[j][1], entries[j][0]))
        test_items[uid] = entries[best][0]
        test_times[uid] = entries[best][1]
        for j, (iid, ts) in enumerate(entries):
            if j != best:
                train_u.append(uid)
                train_i.append(iid)
                train_t.append(ts)

    users_arr = np.asarray(train_u, dtype=np.int64)
    items_arr = np.asarray(train_i, dtype=np.int64)
    times_arr = np.asarray(train_t, dtype=np.int64)
    user_items, user_times = _build_views(num_users, users_arr, items_arr, times_arr)
    item_users, _ = _build_views(num_items, items_arr, users_arr)
    train = InteractionMatrix(num_users, num_items, user_items, item_users)
    split = SplitDataset(train=train, train_times=user_times,
                         test_items=test_items, test_times=test_times,
                         dropped_users=dropped)
    id_maps = IdMaps(user_index=user_index, item_index=item_index,
                     users=users, items=items)
    return id_maps, split


@dataclass
class EpochBatchSet:
    """Training instances for one epoch: positives plus sampled negatives."""

    users: np.ndarray
    items: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.users.size


def sample_negatives_for_user(train: InteractionMatrix, user: int, count: int,
                              rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` items uniformly from the user's unobserved items.

    Rejection sampling against the (sorted) train row; repeats across draws
    are allowed, observed items never appear.
    """
    row = train.user_items[user]
    out = np.empty(count, dtype=np.int64)
    filled = 0
    while filled < count:
        draw = rng.integers(0, train.num_items, size=count - filled)
        accepted = draw[~_isin_sorted(row, draw)]
        out[filled:filled + accepted.size] = accepted
        filled += accepted.size
    return out


def sample_train_negatives(train: InteractionMatrix, ratio: int,
                           rng: np.random.Generator) -> EpochBatchSet:
    """Label-1 instances for every train pair plus ``ratio`` uniform negatives
    per positive.  Instances are grouped per user: positives first (row
    order), then that user's negatives in draw order.
    """
    if ratio < 0:
        raise ValueError("negative ratio must be >= 0")
    users_parts: list[np.ndarray] = []
    items_parts: list[np.ndarray] = []
    labels_parts: list[np.ndarray] = []
    full_rows = 0
    for user in range(train.num_users):
        row = train.user_items[user]
        if row.size == 0:
            continue
        n_neg = row.size * ratio
        if n_neg and row.size >= train.num_items:
            full_rows += 1
            n_neg = 0
        total = row.size + n_neg
        users_parts.append(np.full(total, user, dtype=np.int64))
        labels = np.zeros(total)
        labels[:row.size] = 1.0
        labels_parts.append(labels)
        if n_neg:
            negs = sample_negatives_for_user(train, user, n_neg, rng)
            items_parts.append(np.concatenate([row, negs]))
        else:
            items_parts.append(row.copy())
    if full_rows:
        logger.warning("%d user(s) interact with every item; no negatives drawn",
                       full_rows)
    if not users_parts:
        return EpochBatchSet(np.empty(0, np.int64), np.empty(0, np.int64), np.empty(0))
    return EpochBatchSet(users=np.concatenate(users_parts),
                         items=np.concatenate(items_parts),
                         labels=np.concatenate(labels_parts))


@dataclass
class TestCase:
    """One user's ranking task: the held-out positive and 100 fixed negatives."""

    __test__ = False        # keep pytest from collecting this as a test class

    user: int
    positive_item: int
    negatives: np.ndarray


def sample_test_negatives(split: SplitDataset, count: int = 100,
                          rng: np.random.Generator | None = None) -> list[TestCase]:
    """Draw ``count`` distinct unobserved items per user, disjoint from the
    train row and the held-out positive.  Generated once per experiment and
    persisted so every model ranks the same candidates.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    cases = []
    for user in range(split.num_users):
        mask = np.ones(split.num_items, dtype=bool)
        mask[split.train.user_items[user]] = False
        mask[split.test_items[user]] = False
        pool = np.flatnonzero(mask)
        if pool.size < count:
            raise ValueError(
                f"user {user} has only {pool.size} unobserved items; "
                f"{count} test negatives required")
        negatives = rng.choice(pool, size=count, replace=False)
        cases.append(TestCase(user=user, positive_item=int(split.test_items[user]),
                              negatives=negatives.astype(np.int64)))
    return cases


# ---------------------------------------------------------------------------
# Canonical file formats
# ---------------------------------------------------------------------------

def write_canonical(split: SplitDataset, cases: list[TestCase],
                    directory: str | os.PathLike, name: str) -> dict[str, str]:
    """Write ``<name>.train.rating``, ``<name>.test.rating`` and
    ``<name>.test.negative`` under ``directory``; returns the paths."""
    os.makedirs(directory, exist_ok=True)
    paths = {kind: os.path.join(directory, f"{name}.{kind}")
             for kind in ("train.rating", "test.rating", "test.negative")}
    with open(paths["train.rating"], "w", encoding="utf-8") as fh:
        for user in range(split.num_users):
            row = split.train.user_items[user]
            times = split.train_times[user]
            for item, ts in zip(row, times):
                fh.write(f"{user}\t{item}\t1\t{ts}\n")
    with open(paths["test.rating"], "w", encoding="utf-8") as fh:
        for user in range(split.num_users):
            fh.write(f"{user}\t{split.test_items[user]}\t1\t{split.test_times[user]}\n")
    with open(paths["test.negative"], "w", encoding="utf-8") as fh:
        for case in cases:
            negs = "\t".join(str(i) for i in case.negatives)
            fh.write(f"({case.user},{case.positive_item})\t{negs}\n")
    return paths


def _parse_tsv_ratings(path: str) -> list[tuple[int, int, int]]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataFormatError(
                    f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            try:
                rows.append((int(parts[0]), int(parts[1]), int(float(parts[3]))))
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise EmptyDatasetError(f"{path}: empty file")
    return rows


def read_canonical(directory: str | os.PathLike,
                   name: str) -> tuple[SplitDataset, list[TestCase]]:
    """Read the canonical triple back into a split and its test cases."""
    train_path = os.path.join(directory, f"{name}.train.rating")
    test_path = os.path.join(directory, f"{name}.test.rating")
    neg_path = os.path.join(directory, f"{name}.test.negative")
    for p in (train_path, test_path, neg_path):
        if not os.path.exists(p):
            raise FileNotFoundError(f"canonical dataset file missing: {p}")

    train_rows = _parse_tsv_ratings(train_path)
    test_rows = _parse_tsv_ratings(test_path)

    cases_raw: list[tuple[int, int, np.ndarray]] = []
    with open(neg_path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            head = parts[0]
            if not (head.startswith("(") and head.endswith(")") and "," in head):
                raise DataFormatError(
                    f"{neg_path}:{lineno}: expected '(user,item)' in field 0")
            try:
                user_s, item_s = head[1:-1].split(",")
                user, item = int(user_s), int(item_s)
                negatives = np.asarray([int(p) for p in parts[1:]], dtype=np.int64)
            except ValueError as exc:
                raise DataFormatError(f"{neg_path}:{lineno}: {exc}") from None
            cases_raw.append((user, item, negatives))

    users = np.asarray([r[0] for r in train_rows], dtype=np.int64)
    items = np.asarray([r[1] for r in train_rows], dtype=np.int64)
    times = np.asarray([r[2] for r in train_rows], dtype=np.int64)
    num_users = int(max(users.max(initial=-1), max(r[0] for r in test_rows))) + 1
    max_item = int(max(items.max(initial=-1), max(r[1] for r in test_rows)))
    for _, _, negs in cases_raw:
        if negs.size:
            max_item = max(max_item, int(negs.max()))
    num_items = max_item + 1

    user_items, user_times = _build_views(num_users, users, items, times)
    item_users, _ = _build_views(num_items, items, users)
    train = InteractionMatrix(num_users, num_items, user_items, item_users)

    test_items = np.empty(num_users, dtype=np.int64)
    test_times = np.empty(num_users, dtype=np.int64)
    seen = np.zeros(num_users, dtype=bool)
    for user, item, ts in test_rows:
        if seen[user]:
            raise DataFormatError(f"{test_path}: duplicate test positive for user {user}")
        seen[user] = True
        test_items[user] = item
        test_times[user] = ts
    if not seen.all():
        raise DataFormatError(f"{test_path}: missing test positive for some users")

    split = SplitDataset(train=train, train_times=user_times,
                         test_items=test_items, test_times=test_times)
    cases = [TestCase(user=u, positive_item=i, negatives=n)
             for u, i, n in cases_raw]
    return split, cases
