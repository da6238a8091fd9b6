"""Small explicit-rating corpora with latent structure, for demos and tests.

Users and items live in a few taste clusters; items have Zipf-like
popularity. Ratings are a noisy, discretised function of cluster affinity,
so a recommender that learns the structure beats one that only learns
popularity.
"""

from __future__ import annotations

import numpy as np

from .dataset import RawRating


def synthetic_ratings(
    n_users: int = 300,
    n_items: int = 200,
    n_clusters: int = 5,
    ratings_per_user: tuple[int, int] = (20, 60),
    noise: float = 0.6,
    seed: int = 0,
) -> list[RawRating]:
    rng = np.random.default_rng(seed)
    user_cluster = rng.integers(0, n_clusters, n_users)
    item_cluster = rng.integers(0, n_clusters, n_items)
    popularity = 1.0 / np.arange(1, n_items + 1) ** 0.8
    popularity = popularity[rng.permutation(n_items)]
    ratings = []
    t = 0
    for u in range(n_users):
        k = int(rng.integers(ratings_per_user[0], ratings_per_user[1] + 1))
        # users mostly browse their own cluster, sometimes popular items elsewhere
        affinity = np.where(item_cluster == user_cluster[u], 6.0, 1.0) * popularity
        items = rng.choice(n_items, size=min(k, n_items), replace=False, p=affinity / affinity.sum())
        for i in items:
            match = item_cluster[i] == user_cluster[u]
            score = 2.4 + (1.9 if match else 0.0) + noise * rng.standard_normal()
            rating = float(np.clip(np.rint(score), 1, 5))
            ratings.append(RawRating(u + 1, int(i) + 1, rating, t))
            t += 1
    return ratings


def write_ratings(ratings, path, format: str = "double-colon") -> None:
    sep = {"double-colon": "::", "tab": "\t", "comma": ","}[format]
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for r in ratings:
            rating = int(r.rating) if float(r.rating).is_integer() else r.rating
            fh.write(f"{r.user_id}{sep}{r.item_id}{sep}{rating}{sep}{r.timestamp}\n")
