"""Synthetic two-cluster interaction data for smoke tests and demos.

Items form two disjoint clusters laid out on a ring each. A user belongs to
one cluster and follows one of ``n_profiles`` taste profiles there: a
contiguous window of ``per_user`` items whose starting points are spaced
evenly around the ring. Every item sits in the same number of windows, so
item popularity is flat inside a cluster and a popularity ranker learns
nothing about the held-out items, while the window makes them predictable
from the rest of the user's history. Interactions within a user are in
random temporal order.
"""

from __future__ import annotations

import numpy as np

from .data import RawReview


def two_block_reviews(
    n_users: int = 200,
    n_items: int = 40,
    per_user: int = 12,
    seed: int = 0,
    n_profiles: int | None = 4,
) -> list[RawReview]:
    """Reviews (all rated 5) for the planted two-cluster model.

    ``n_profiles=None`` lets every ring position start a window.
    """
    if n_items % 2:
        raise ValueError("n_items must be even")
    cluster_size = n_items // 2
    if not 1 <= per_user <= cluster_size:
        raise ValueError(f"per_user must lie in [1, {cluster_size}]")
    rng = np.random.Generator(np.random.PCG64(seed))
    reviews = []
    for u in range(n_users):
        base = (u % 2) * cluster_size
        if n_profiles is None:
            start = int(rng.integers(cluster_size))
        else:
            start = int(rng.integers(n_profiles)) * cluster_size // n_profiles
        window = base + (start + np.arange(per_user)) % cluster_size
        times = rng.permutation(per_user)
        for item, ts in zip(window, times):
            reviews.append(RawReview(f"u{u}", f"i{item}", 5, 1_000_000 + 60 * u + int(ts)))
    return reviews


def write_csv(reviews, path) -> None:
    with open(path, "w") as fh:
        fh.write("user,item,rating,timestamp\n")
        for r in reviews:
            fh.write(f"{r.user},{r.item},{'' if r.rating is None else r.rating},{r.timestamp}\n")
