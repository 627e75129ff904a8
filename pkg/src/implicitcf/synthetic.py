"""Synthetic implicit-feedback logs with planted cluster structure.

Users and items are assigned to latent clusters; each user's interactions
are drawn without replacement from a popularity-skewed distribution boosted
inside the user's own cluster.  The result is learnable by the models here
while remaining cheap enough for tests and demos.
"""

from __future__ import annotations

import os

import numpy as np

from .data import RatingLog


def generate_ratings(num_users: int = 600, num_items: int = 200,
                     min_interactions: int = 8, max_interactions: int = 20,
                     num_clusters: int = 5, affinity: float = 6.0,
                     seed: int = 0) -> RatingLog:
    """Build a deduplicated rating log; tokens are 1-based decimal strings."""
    if num_items <= max_interactions:
        raise ValueError("num_items must exceed max_interactions")
    rng = np.random.default_rng(seed)
    item_cluster = rng.integers(0, num_clusters, size=num_items)
    user_cluster = rng.integers(0, num_clusters, size=num_users)
    popularity = 1.0 / (np.arange(num_items) + 5.0)
    records = []
    for u in range(num_users):
        k = int(rng.integers(min_interactions, max_interactions + 1))
        weights = popularity * np.where(item_cluster == user_cluster[u], affinity, 1.0)
        items = rng.choice(num_items, size=k, replace=False, p=weights / weights.sum())
        for j, i in enumerate(items):
            rating = float(rng.integers(1, 6))
            records.append((str(u + 1), str(int(i) + 1), rating, u * 1000 + j))
    return RatingLog(records)


def write_ratings(path: str | os.PathLike, log: RatingLog,
                  separator: str = "::") -> None:
    """Write a raw rating file, one record per line."""
    with open(path, "w", encoding="utf-8") as fh:
        for user, item, rating, ts in log.records:
            fh.write(f"{user}{separator}{item}{separator}{rating:g}{separator}{ts}\n")
