"""Top-K ranking and precision / recall / nDCG / MRR at several cutoffs."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .data import MultiHotMatrix

DEFAULT_KS = (1, 5, 10, 20)
METRIC_NAMES = ("precision", "recall", "ndcg", "mrr")


@dataclass(frozen=True)
class RankedList:
    """Top items per user, best first. Rows shorter than ``k_max`` are padded with -1."""

    items: np.ndarray
    user_ids: np.ndarray
    lengths: np.ndarray

    @property
    def n_truncated(self) -> int:
        return int(np.sum(self.lengths < self.items.shape[1]))

    def top(self, u_row: int) -> np.ndarray:
        return self.items[u_row, : self.lengths[u_row]]


def rank(scores: np.ndarray, exclude: MultiHotMatrix | None, k_max: int, user_ids=None) -> RankedList:
    """Sort items by descending score, ties by ascending item id.

    Items in the user's ``exclude`` row (normally the training history) never
    appear.
    """
    scores = np.asarray(scores, dtype=np.float64)
    B, N = scores.shape
    if np.isnan(scores).any():
        raise ValueError("rank: NaN scores")
    if k_max < 1:
        raise ValueError(f"k_max must be >= 1, got {k_max}")
    user_ids = np.arange(B) if user_ids is None else np.asarray(user_ids)
    if len(user_ids) != B:
        raise ValueError(f"{len(user_ids)} user ids for {B} score rows")
    if exclude is not None and exclude.n_cols != N:
        raise ValueError(f"exclusion matrix has {exclude.n_cols} columns, scores have {N}")
    keys = -scores
    lengths = np.full(B, min(k_max, N), dtype=np.int64)
    if exclude is not None:
        for row, u in enumerate(user_ids):
            seen = exclude.row(u)
            keys[row, seen] = np.inf
            lengths[row] = min(k_max, N - len(seen))
    order = np.argsort(keys, axis=1, kind="stable")[:, :k_max]
    width = order.shape[1]
    pad = np.arange(width)[None, :] >= lengths[:, None]
    items = np.where(pad, -1, order)
    if width < k_max:
        items = np.concatenate([items, np.full((B, k_max - width), -1)], axis=1)
    return RankedList(items=items, user_ids=user_ids, lengths=lengths)


# 1 / log2(rank + 1) for rank = 1, 2, ...
def _discounts(n: int) -> np.ndarray:
    return np.array([1.0 / math.log2(i + 1) for i in range(1, n + 1)])


@dataclass
class MetricsReport:
    ks: tuple[int, ...]
    mean: dict[str, dict[int, float]]
    per_user: dict[str, np.ndarray] = field(repr=False)  # metric -> (n_users, len(ks))
    user_ids: np.ndarray = field(repr=False)
    n_skipped: int = 0
    n_truncated: int = 0

    def to_dict(self, per_user: bool = False) -> dict:
        out = {
            "ks": list(self.ks),
            "metrics": {m: {str(k): v for k, v in self.mean[m].items()} for m in METRIC_NAMES},
            "n_users": int(len(self.user_ids)),
            "n_skipped": self.n_skipped,
            "n_truncated": self.n_truncated,
        }
        if per_user:
            out["per_user"] = {
                "user_ids": self.user_ids.tolist(),
                **{m: self.per_user[m].tolist() for m in METRIC_NAMES},
            }
        return out

    def to_json(self, per_user: bool = False) -> str:
        return json.dumps(self.to_dict(per_user), indent=2, sort_keys=True) + "\n"

    def to_table(self, title: str = "Ours") -> str:
        """Percentages with two decimals, one metric block per K list."""
        label_w = max(len(m) for m in METRIC_NAMES) + 8
        lines = [f"{'Metric':<{label_w}} {title:>10}", "-" * (label_w + 11)]
        for m in METRIC_NAMES:
            for k in self.ks:
                lines.append(f"{m + '@' + str(k):<{label_w}} {100.0 * self.mean[m][k]:>10.2f}")
        lines.append(f"users evaluated: {len(self.user_ids)}  skipped (empty test): {self.n_skipped}")
        return "\n".join(lines) + "\n"


def metrics(ranked: RankedList, test: MultiHotMatrix, ks=DEFAULT_KS) -> MetricsReport:
    """Per-user metrics on binary relevance, then the unweighted user mean."""
    ks = tuple(int(k) for k in ks)
    if not ks:
        raise ValueError("metrics: empty K list")
    if min(ks) < 1 or max(ks) > ranked.items.shape[1]:
        raise ValueError(f"K values {ks} must lie in [1, {ranked.items.shape[1]}]")
    k_max = max(ks)
    disc = _discounts(k_max)
    ideal = np.cumsum(disc)
    kidx = np.array(ks) - 1

    kept_rows, kept_users = [], []
    skipped = 0
    for row, u in enumerate(ranked.user_ids):
        if len(test.row(u)) == 0:
            skipped += 1
        else:
            kept_rows.append(row)
            kept_users.append(u)
    n = len(kept_rows)
    per = {m: np.zeros((n, len(ks))) for m in METRIC_NAMES}
    for out_row, row in enumerate(kept_rows):
        truth = test.row(ranked.user_ids[row])
        top = ranked.items[row, :k_max]
        hit = np.isin(top, truth)
        n_hits = np.cumsum(hit)[kidx]
        dcg = np.cumsum(np.where(hit, disc, 0.0))[kidx]
        idcg = ideal[np.minimum(len(truth), ks) - 1]
        first = int(np.argmax(hit)) + 1 if hit.any() else 0
        per["precision"][out_row] = n_hits / np.array(ks)
        per["recall"][out_row] = n_hits / len(truth)
        per["ndcg"][out_row] = dcg / idcg
        per["mrr"][out_row] = [1.0 / first if 0 < first <= k else 0.0 for k in ks]
    mean = {
        m: {k: (float(np.mean(per[m][:, j])) if n else 0.0) for j, k in enumerate(ks)} for m in METRIC_NAMES
    }
    truncated = int(np.sum(ranked.lengths[kept_rows] < k_max)) if n else 0
    return MetricsReport(ks, mean, per, np.asarray(kept_users, dtype=np.int64), skipped, truncated)


# -- baselines -------------------------------------------------------------------

def popularity_scores(train: MultiHotMatrix, user_ids) -> np.ndarray:
    """Training-set interaction counts, the same for every user."""
    counts = np.asarray(train.csr.sum(axis=0)).ravel()
    return np.tile(counts, (len(user_ids), 1))


def random_scores(n_items: int, user_ids, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.random((len(user_ids), n_items))
