"""Review ingestion, clean/noisy filtering, dense renumbering, temporal splits
and multi-hot encoding.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, DataError

log = logging.getLogger(__name__)

CSV_RATED = "csv_rated"
CSV_UNRATED = "csv_unrated"
FORMATS = (CSV_RATED, CSV_UNRATED)
CLEAN = "clean"
NOISY = "noisy"
MODES = (CLEAN, NOISY)

TRAIN, VALID, TEST = 0, 1, 2
SPLIT_NAMES = {"train": TRAIN, "valid": VALID, "test": TEST}
RATIOS = {"80:20": (80, 20), "70:20:10": (70, 20, 10)}

MAX_MALFORMED_FRACTION = 0.01


class RawReview(NamedTuple):
    user: str
    item: str
    rating: int | None
    timestamp: int


@dataclass(frozen=True)
class InteractionSet:
    """Interactions sorted by (user, time) with dense ids.

    ``split`` is None until ``split()`` has tagged every row with
    TRAIN/VALID/TEST.
    """

    n_users: int
    n_items: int
    users: np.ndarray
    items: np.ndarray
    times: np.ndarray
    split: np.ndarray | None = None
    ratios: str | None = None
    mode: str | None = None
    n_short_users: int = 0

    def __len__(self) -> int:
        return len(self.users)

    def user_bounds(self) -> np.ndarray:
        """Offsets such that user u's rows are ``bounds[u]:bounds[u+1]``."""
        return np.searchsorted(self.users, np.arange(self.n_users + 1))

    def select(self, which) -> np.ndarray:
        """Boolean row mask for one split name or an iterable of names."""
        if self.split is None:
            raise ValueError("interaction set has not been split")
        names = [which] if isinstance(which, str) else list(which)
        codes = [SPLIT_NAMES[n] for n in names]
        return np.isin(self.split, codes)

    def as_reviews(self) -> list[RawReview]:
        return [RawReview(str(u), str(i), None, int(t)) for u, i, t in zip(self.users, self.items, self.times)]


@dataclass(frozen=True)
class MultiHotMatrix:
    csr: sp.csr_matrix = field(repr=False)

    @property
    def n_rows(self) -> int:
        return self.csr.shape[0]

    @property
    def n_cols(self) -> int:
        return self.csr.shape[1]

    def row(self, u: int) -> np.ndarray:
        return self.csr.indices[self.csr.indptr[u]:self.csr.indptr[u + 1]]

    def row_counts(self) -> np.ndarray:
        return np.diff(self.csr.indptr)

    def dense(self, rows=None, dtype=np.float64) -> np.ndarray:
        m = self.csr if rows is None else self.csr[np.asarray(rows)]
        return m.toarray().astype(dtype)


# -- ingestion -----------------------------------------------------------------

def _parse_row(fields: list[str], fmt: str) -> RawReview:
    fields = [f.strip() for f in fields]
    if fmt == CSV_RATED:
        if len(fields) != 4:
            raise ValueError(f"expected 4 fields, got {len(fields)}")
        user, item, rating, ts = fields
        r = int(rating)
        if not 1 <= r <= 5:
            raise ValueError(f"rating {r} outside 1..5")
        rating_val = r
    else:
        if len(fields) != 3:
            raise ValueError(f"expected 3 fields, got {len(fields)}")
        user, item, ts = fields
        rating_val = None
    if not user or not item:
        raise ValueError("empty id")
    return RawReview(user, item, rating_val, int(ts))


def ingest(path, fmt: str = CSV_RATED, delimiter: str = ",") -> tuple[list[RawReview], list[int]]:
    """Parse a review file.

    Returns the parsed reviews and the 1-based line numbers of malformed
    rows. A first line that fails to parse is taken to be a header. More than
    1% malformed rows is a DataError.
    """
    if fmt not in FORMATS:
        raise ConfigError(f"unknown format {fmt!r}, expected one of {FORMATS}")
    if not delimiter:
        raise ConfigError("empty delimiter")
    try:
        fh = open(path, encoding="utf-8", errors="replace")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    reviews: list[RawReview] = []
    malformed: list[int] = []
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            try:
                reviews.append(_parse_row(line.split(delimiter), fmt))
            except ValueError:
                if lineno == 1:
                    continue  # header
                malformed.append(lineno)
    total = len(reviews) + len(malformed)
    if malformed:
        log.warning("%s: %d malformed rows (first at line %d)", path, len(malformed), malformed[0])
    if total and len(malformed) / total > MAX_MALFORMED_FRACTION:
        shown = ", ".join(map(str, malformed[:20]))
        raise DataError(f"{path}: {len(malformed)}/{total} malformed rows (lines {shown}{', ...' if len(malformed) > 20 else ''})")
    return reviews, malformed


# -- preprocessing -------------------------------------------------------------

def preprocess(reviews: Iterable[RawReview], mode: str = CLEAN) -> InteractionSet:
    """Filter, deduplicate, sort and renumber.

    Clean mode drops rated reviews with rating <= 3; unrated reviews are hits
    in both modes. A repeated (user, item) keeps its earliest occurrence.
    Users are numbered by first appearance in the input, items by first
    appearance once rows are sorted by (user, time).
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}, expected one of {MODES}")
    reviews = list(reviews)
    if not reviews:
        raise DataError("no reviews to preprocess")
    kept = [r for r in reviews if mode == NOISY or r.rating is None or r.rating > 3]
    if not kept:
        raise DataError(f"all {len(reviews)} reviews were filtered out in {mode} mode")

    # earliest occurrence per (user, item); ties go to the earlier row
    first: dict[tuple[str, str], int] = {}
    for pos, r in enumerate(kept):
        key = (r.user, r.item)
        prev = first.get(key)
        if prev is None or r.timestamp < kept[prev].timestamp:
            first[key] = pos
    positions = sorted(first.values())

    user_ids: dict[str, int] = {}
    for pos in positions:
        user_ids.setdefault(kept[pos].user, len(user_ids))
    order = sorted(positions, key=lambda p: (user_ids[kept[p].user], kept[p].timestamp, p))

    item_ids: dict[str, int] = {}
    users = np.empty(len(order), dtype=np.int64)
    items = np.empty(len(order), dtype=np.int64)
    times = np.empty(len(order), dtype=np.int64)
    for row, pos in enumerate(order):
        r = kept[pos]
        users[row] = user_ids[r.user]
        items[row] = item_ids.setdefault(r.item, len(item_ids))
        times[row] = r.timestamp
    return InteractionSet(len(user_ids), len(item_ids), users, items, times, mode=mode)


def _segment_sizes(L: int, parts: tuple[int, ...]) -> tuple[int, ...]:
    held_out = len(parts) - 1
    if L <= held_out:
        return (L,) + (0,) * held_out
    total = sum(parts)
    n_train = min(-(-L * parts[0] // total), L - held_out)
    if held_out == 1:
        return n_train, L - n_train
    n_valid = min(max(L * parts[1] // total, 1), L - n_train - 1)
    return n_train, n_valid, L - n_train - n_valid


def split(iset: InteractionSet, ratios: str = "80:20") -> InteractionSet:
    """Per-user temporal split; the test segment is always the latest.

    Train takes ceil(r_train * L) interactions, clamped so every held-out
    segment gets at least one. Users too short to split stay entirely in
    train and are counted in ``n_short_users``.
    """
    if ratios not in RATIOS:
        raise ConfigError(f"unknown split {ratios!r}, expected one of {tuple(RATIOS)}")
    parts = RATIOS[ratios]
    tags = np.empty(len(iset), dtype=np.int8)
    codes = (TRAIN, TEST) if len(parts) == 2 else (TRAIN, VALID, TEST)
    bounds = iset.user_bounds()
    short = 0
    for u in range(iset.n_users):
        lo, hi = bounds[u], bounds[u + 1]
        sizes = _segment_sizes(hi - lo, parts)
        if sizes[0] == hi - lo:
            short += 1
        pos = lo
        for code, n in zip(codes, sizes):
            tags[pos:pos + n] = code
            pos += n
    if short:
        log.warning("%d users had too few interactions for a %s split and stay in train", short, ratios)
    return replace(iset, split=tags, ratios=ratios, n_short_users=short)


def to_multihot(iset: InteractionSet, which="train") -> MultiHotMatrix:
    rows = iset.select(which)
    data = np.ones(int(rows.sum()), dtype=np.float64)
    m = sp.csr_matrix((data, (iset.users[rows], iset.items[rows])), shape=(iset.n_users, iset.n_items))
    m.sum_duplicates()
    m.data[:] = 1.0
    m.sort_indices()
    return MultiHotMatrix(m)


def summary(iset: InteractionSet) -> dict:
    out = {"users": iset.n_users, "items": iset.n_items, "interactions": len(iset), "mode": iset.mode}
    if iset.split is not None:
        out["ratios"] = iset.ratios
        out["short_users"] = iset.n_short_users
        for name, code in SPLIT_NAMES.items():
            out[f"{name}_interactions"] = int(np.sum(iset.split == code))
        held = np.unique(iset.items[iset.split != TRAIN])
        in_train = np.unique(iset.items[iset.split == TRAIN])
        out["items_only_in_heldout"] = int(len(np.setdiff1d(held, in_train)))
    return out


# -- cache ---------------------------------------------------------------------

def file_checksum(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _split_files(iset: InteractionSet) -> list[str]:
    return ["train", "test"] if iset.ratios == "80:20" else ["train", "valid", "test"]


def save_cache(iset: InteractionSet, directory, source_checksum: str | None = None) -> dict:
    """Write ``meta.json`` plus one ``<split>.tsv`` per split.

    The directory is built next to the target and renamed into place, so a
    failed run leaves no partial cache behind. Returns the metadata.
    """
    if iset.split is None:
        raise ValueError("save_cache needs a split interaction set")
    directory = os.fspath(directory)
    tmp = directory + ".partial"
    shutil.rmtree(tmp, ignore_errors=True)
    os.makedirs(tmp)
    digest = hashlib.sha256()
    for name in _split_files(iset):
        rows = iset.select(name)
        lines = "".join(f"{u}\t{i}\t{t}\n" for u, i, t in zip(iset.users[rows], iset.items[rows], iset.times[rows]))
        payload = lines.encode()
        digest.update(name.encode() + b"\0" + payload)
        with open(os.path.join(tmp, f"{name}.tsv"), "wb") as fh:
            fh.write(payload)
    meta = {
        **summary(iset),
        "n_users": iset.n_users,
        "n_items": iset.n_items,
        "source_checksum": source_checksum,
        "fingerprint": digest.hexdigest(),
    }
    with open(os.path.join(tmp, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if os.path.exists(directory):
        shutil.rmtree(directory)
    os.replace(tmp, directory)
    return meta


def load_cache(directory) -> tuple[InteractionSet, dict]:
    directory = os.fspath(directory)
    meta_file = os.path.join(directory, "meta.json")
    try:
        with open(meta_file) as fh:
            meta = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"no usable preprocessed cache at {directory}: {exc}") from exc
    chunks = []
    names = ["train", "test"] if meta["ratios"] == "80:20" else ["train", "valid", "test"]
    for name in names:
        path = os.path.join(directory, f"{name}.tsv")
        try:
            arr = np.loadtxt(path, dtype=np.int64, delimiter="\t", ndmin=2)
        except OSError as exc:
            raise DataError(f"missing split file {path}") from exc
        arr = arr.reshape(-1, 3)
        chunks.append((arr, np.full(len(arr), SPLIT_NAMES[name], dtype=np.int8)))
    rows = np.concatenate([c[0] for c in chunks])
    tags = np.concatenate([c[1] for c in chunks])
    # splits are contiguous per user in time order, so a stable sort on user restores (user, time)
    order = np.argsort(rows[:, 0], kind="stable")
    rows, tags = rows[order], tags[order]
    iset = InteractionSet(
        n_users=meta["n_users"],
        n_items=meta["n_items"],
        users=rows[:, 0].copy(),
        items=rows[:, 1].copy(),
        times=rows[:, 2].copy(),
        split=tags,
        ratios=meta["ratios"],
        mode=meta["mode"],
        n_short_users=meta.get("short_users", 0),
    )
    return iset, meta
