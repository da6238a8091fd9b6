"""Ratings ingestion, implicit-feedback datasets, splits and negative samplers.

The pipeline is ``load_ratings -> binarize -> k_core_filter -> split``.
Interaction order is the order of the input file; it defines the per-user
lists used by leave-one-out and by the coalition machinery downstream.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

DELIMITERS = {"double-colon": "::", "tab": "\t", "comma": ","}

LEAVE_ONE_OUT = "leave-one-out"
COLD_START = "cold-start"
SPLIT_MODES = (LEAVE_ONE_OUT, COLD_START)


class ParseError(ValueError):
    """Malformed line in a ratings file."""

    def __init__(self, lineno: int, line: str, reason: str):
        super().__init__(f"line {lineno}: {reason}: {line!r}")
        self.lineno = lineno


class SplitError(ValueError):
    pass


class SamplingError(ValueError):
    pass


@dataclass(frozen=True, slots=True)
class RawRating:
    user_id: int
    item_id: int
    rating: float
    timestamp: int


def load_ratings(path: str | os.PathLike, format: str = "double-colon") -> list[RawRating]:
    """Parse a ``user<sep>item<sep>rating<sep>timestamp`` file.

    Blank lines are skipped. Any other line that does not split into four
    well-formed fields raises :class:`ParseError` carrying the 1-based line
    number.
    """
    try:
        sep = DELIMITERS[format]
    except KeyError:
        raise ValueError(f"unknown ratings format {format!r}; expected one of {sorted(DELIMITERS)}")

    ratings = []
    with open(path, encoding="latin-1") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            fields = line.split(sep)
            if len(fields) != 4:
                raise ParseError(lineno, line, f"expected 4 fields, got {len(fields)}")
            try:
                user, item = int(fields[0]), int(fields[1])
                rating = float(fields[2])
                timestamp = int(fields[3])
            except ValueError:
                raise ParseError(lineno, line, "non-numeric field") from None
            if user < 0 or item < 0:
                raise ParseError(lineno, line, "negative id")
            if not 1.0 <= rating <= 5.0:
                raise ParseError(lineno, line, "rating outside [1, 5]")
            ratings.append(RawRating(user, item, rating, timestamp))
    return ratings


class InteractionDataset:
    """Binary user-item interactions with dense indices.

    ``users[t], items[t]`` is the t-th interaction in input order. Per-user and
    per-item lists preserve that order.

    Attributes:
        num_users, num_items: sizes of the index ranges ``[0, N)`` and ``[0, M)``.
        user_ids, item_ids: original ids for each dense index (may be ``None``).
    """

    def __init__(self, num_users: int, num_items: int, users, items, user_ids=None, item_ids=None):
        self.num_users = int(num_users)
        self.num_items = int(num_items)
        self.users = np.asarray(users, dtype=np.int64)
        self.items = np.asarray(items, dtype=np.int64)
        if self.users.shape != self.items.shape or self.users.ndim != 1:
            raise ValueError("users and items must be 1-D arrays of equal length")
        if len(self.users):
            if self.users.min() < 0 or self.users.max() >= self.num_users:
                raise ValueError("user index out of range")
            if self.items.min() < 0 or self.items.max() >= self.num_items:
                raise ValueError("item index out of range")
        codes = self.users * max(self.num_items, 1) + self.items
        if len(np.unique(codes)) != len(codes):
            raise ValueError("duplicate (user, item) interaction")
        self._codes = np.sort(codes)
        self.user_ids = None if user_ids is None else np.asarray(user_ids, dtype=np.int64)
        self.item_ids = None if item_ids is None else np.asarray(item_ids, dtype=np.int64)
        self.user_lists = _group(self.users, self.items, self.num_users)
        self.item_lists = _group(self.items, self.users, self.num_items)
        self.item_popularity = np.bincount(self.items, minlength=self.num_items)
        self.user_degree = np.bincount(self.users, minlength=self.num_users)

    def __len__(self) -> int:
        return len(self.users)

    def __repr__(self) -> str:
        return f"InteractionDataset(N={self.num_users}, M={self.num_items}, |I|={len(self)})"

    @property
    def interactions(self) -> set[tuple[int, int]]:
        return set(zip(self.users.tolist(), self.items.tolist()))

    def contains(self, users, items) -> np.ndarray:
        """Vectorised membership test for ``(users[k], items[k])`` pairs."""
        codes = np.asarray(users, dtype=np.int64) * max(self.num_items, 1) + np.asarray(items, dtype=np.int64)
        pos = np.searchsorted(self._codes, codes)
        pos = np.minimum(pos, max(len(self._codes) - 1, 0))
        if not len(self._codes):
            return np.zeros(codes.shape, dtype=bool)
        return self._codes[pos] == codes

    def stats(self) -> dict:
        n, m, i = self.num_users, self.num_items, len(self)
        return {
            "users": n,
            "items": m,
            "interactions": i,
            "sparsity": 1.0 - i / (n * m) if n and m else 0.0,
            "avg_per_user": i / n if n else 0.0,
        }


def _group(keys: np.ndarray, values: np.ndarray, size: int) -> list[np.ndarray]:
    order = np.argsort(keys, kind="stable")
    bounds = np.searchsorted(keys[order], np.arange(size + 1))
    grouped = values[order]
    return [grouped[bounds[k]:bounds[k + 1]] for k in range(size)]


def _reindex(users: np.ndarray, items: np.ndarray, user_ids: np.ndarray, item_ids: np.ndarray) -> InteractionDataset:
    """Densify surviving indices, keeping relative order of the old indices."""
    kept_u, new_u = np.unique(users, return_inverse=True)
    kept_i, new_i = np.unique(items, return_inverse=True)
    return InteractionDataset(len(kept_u), len(kept_i), new_u, new_i, user_ids[kept_u], item_ids[kept_i])


def binarize(ratings: Iterable[RawRating], threshold: float = 3.5) -> InteractionDataset:
    """Keep ratings strictly above ``threshold`` as implicit interactions.

    Repeated ``(user, item)`` pairs keep their first occurrence. Dense indices
    follow ascending original id.
    """
    if not 1.0 < threshold < 5.0:
        raise ValueError("threshold must lie in (1, 5)")
    ratings = list(ratings)
    if not ratings:
        return InteractionDataset(0, 0, [], [], [], [])
    raw = np.array([(r.user_id, r.item_id) for r in ratings], dtype=np.int64)
    score = np.array([r.rating for r in ratings])
    raw = raw[score > threshold]
    if not len(raw):
        return InteractionDataset(0, 0, [], [], [], [])
    _, first = np.unique(raw, axis=0, return_index=True)
    raw = raw[np.sort(first)]
    user_ids, users = np.unique(raw[:, 0], return_inverse=True)
    item_ids, items = np.unique(raw[:, 1], return_inverse=True)
    return InteractionDataset(len(user_ids), len(item_ids), users, items, user_ids, item_ids)


def k_core_filter(ds: InteractionDataset, k: int) -> InteractionDataset:
    """Iteratively drop users and items with fewer than ``k`` interactions."""
    if k < 1:
        raise ValueError("k must be >= 1")
    users, items = ds.users, ds.items
    user_ids = ds.user_ids if ds.user_ids is not None else np.arange(ds.num_users)
    item_ids = ds.item_ids if ds.item_ids is not None else np.arange(ds.num_items)
    while True:
        u_deg = np.bincount(users, minlength=ds.num_users)
        i_deg = np.bincount(items, minlength=ds.num_items)
        keep = (u_deg[users] >= k) & (i_deg[items] >= k)
        if keep.all():
            break
        users, items = users[keep], items[keep]
    return _reindex(users, items, user_ids, item_ids)


def subsample_users(ds: InteractionDataset, n_users: int, seed: int) -> InteractionDataset:
    """Keep a uniform random subset of users and every item they touched."""
    rng = np.random.default_rng(seed)
    chosen = np.zeros(ds.num_users, dtype=bool)
    chosen[rng.choice(ds.num_users, size=min(n_users, ds.num_users), replace=False)] = True
    keep = chosen[ds.users]
    user_ids = ds.user_ids if ds.user_ids is not None else np.arange(ds.num_users)
    item_ids = ds.item_ids if ds.item_ids is not None else np.arange(ds.num_items)
    return _reindex(ds.users[keep], ds.items[keep], user_ids, item_ids)


@dataclass
class SplitSet:
    """Train interactions plus one validation and one test item per user.

    ``full`` is the dataset the split was cut from; evaluation negatives are
    drawn outside every positive in it.
    """

    train: InteractionDataset
    validation: np.ndarray
    test: np.ndarray
    mode: str
    full: InteractionDataset


def split(ds: InteractionDataset, mode: str = LEAVE_ONE_OUT, seed: int = 0) -> SplitSet:
    if mode not in SPLIT_MODES:
        raise ValueError(f"unknown split mode {mode!r}")
    rng = np.random.default_rng(seed)
    validation = np.empty(ds.num_users, dtype=np.int64)
    test = np.empty(ds.num_users, dtype=np.int64)
    held = np.zeros(len(ds), dtype=bool)
    # positions of each user's interactions inside ds.users, in list order
    order = np.argsort(ds.users, kind="stable")
    bounds = np.searchsorted(ds.users[order], np.arange(ds.num_users + 1))
    keep_train = np.ones(len(ds), dtype=bool)
    for u in range(ds.num_users):
        rows = order[bounds[u]:bounds[u + 1]]
        if len(rows) < 3:
            raise SplitError(f"user {u} has {len(rows)} interactions; {mode} needs at least 3")
        if mode == LEAVE_ONE_OUT:
            val_row, test_row = rows[-2], rows[-1]
        else:
            tr, val_row, test_row = rng.choice(rows, size=3, replace=False)
            keep_train[rows] = False
            keep_train[tr] = True
        validation[u] = ds.items[val_row]
        test[u] = ds.items[test_row]
        held[[val_row, test_row]] = True
    keep = keep_train & ~held
    train = InteractionDataset(ds.num_users, ds.num_items, ds.users[keep], ds.items[keep], ds.user_ids, ds.item_ids)
    return SplitSet(train, validation, test, mode, ds)


def sample_train_negatives(ds: InteractionDataset, user: int, n: int = 20, seed=None) -> np.ndarray:
    """Popularity-proportional negatives for one user, with replacement."""
    weights = ds.item_popularity.astype(np.float64)
    weights[ds.user_lists[user]] = 0.0
    total = weights.sum()
    if total <= 0:
        raise SamplingError(f"user {user} has no sampleable negative item")
    cdf = np.cumsum(weights)
    rng = np.random.default_rng(seed)
    draws = rng.random(n) * total
    return np.minimum(np.searchsorted(cdf, draws, side="right"), ds.num_items - 1)


def sample_eval_negatives(ds: InteractionDataset, user: int, n: int = 99, seed=None) -> np.ndarray:
    """Uniform negatives without replacement, excluding all of ``user``'s positives in ``ds``.

    If fewer than ``n`` candidates exist, all of them are returned.
    """
    mask = np.ones(ds.num_items, dtype=bool)
    mask[ds.user_lists[user]] = False
    candidates = np.flatnonzero(mask)
    if len(candidates) <= n:
        return candidates
    rng = np.random.default_rng(seed)
    return rng.choice(candidates, size=n, replace=False)


class NegativeSampler:
    """Batched samplers used by the training loop.

    Popularity negatives are drawn from a cumulative table over ``ds`` and
    rejected (then redrawn) when they hit one of the user's interactions.
    """

    def __init__(self, ds: InteractionDataset, max_rounds: int = 64):
        self.ds = ds
        self.max_rounds = max_rounds
        self._cdf = np.cumsum(ds.item_popularity.astype(np.float64))

    def popularity(self, users: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        users = np.repeat(np.asarray(users)[:, None], n, axis=1)
        total = self._cdf[-1]
        out = np.searchsorted(self._cdf, rng.random(users.shape) * total, side="right")
        redraw = lambda k: np.searchsorted(self._cdf, rng.random(k) * total, side="right")  # noqa: E731
        return self._reject(users, out, rng, redraw, lambda u: sample_train_negatives(self.ds, u, 1, seed=rng)[0])

    def uniform(self, users: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        users = np.asarray(users)
        out = rng.integers(0, self.ds.num_items, size=users.shape)
        return self._reject(users, out, rng, lambda k: rng.integers(0, self.ds.num_items, size=k), self._exact_uniform(rng))

    def _exact_uniform(self, rng):
        def draw(u):
            mask = np.ones(self.ds.num_items, dtype=bool)
            mask[self.ds.user_lists[u]] = False
            candidates = np.flatnonzero(mask)
            if not len(candidates):
                raise SamplingError(f"user {u} has no sampleable negative item")
            return rng.choice(candidates)

        return draw

    def _reject(self, users, out, rng, redraw, exact):
        out = np.minimum(out, self.ds.num_items - 1)
        for _ in range(self.max_rounds):
            bad = self.ds.contains(users, out)
            if not bad.any():
                return out
            out[bad] = np.minimum(redraw(int(bad.sum())), self.ds.num_items - 1)
        # users whose catalogue is almost fully consumed: fall back to exact sampling
        bad = self.ds.contains(users, out)
        for idx in zip(*np.nonzero(bad)):
            out[idx] = exact(int(users[idx]))
        return out


# --- snapshot files -------------------------------------------------------

def write_snapshot(ds: InteractionDataset, path: str | os.PathLike, seed: int) -> None:
    """Write ``N M |I| seed`` then one ``u i`` line per interaction, in order."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(f"{ds.num_users} {ds.num_items} {len(ds)} {seed}\n")
        for u, i in zip(ds.users.tolist(), ds.items.tolist()):
            fh.write(f"{u} {i}\n")


def read_snapshot(path: str | os.PathLike) -> tuple[InteractionDataset, int]:
    with open(path, encoding="ascii") as fh:
        header = fh.readline().split()
        if len(header) != 4:
            raise ParseError(1, " ".join(header), "snapshot header must be 'N M |I| seed'")
        n, m, count, seed = map(int, header)
        pairs = np.loadtxt(fh, dtype=np.int64, ndmin=2) if count else np.empty((0, 2), dtype=np.int64)
    if len(pairs) != count:
        raise ParseError(1, " ".join(header), f"header promises {count} pairs, found {len(pairs)}")
    return InteractionDataset(n, m, pairs[:, 0], pairs[:, 1]), seed


def prepare(ratings: Sequence[RawRating], threshold: float = 3.5, k: int = 5) -> InteractionDataset:
    ds = k_core_filter(binarize(ratings, threshold), k)
    logger.info("prepared %r", ds)
    return ds
