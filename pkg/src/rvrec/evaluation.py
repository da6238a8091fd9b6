"""Sampled ranking metrics and counterfactual explanation metrics.

Ranking follows the leave-one-out protocol: each user's held-out item is
ranked against ``n`` uniformly sampled items the user never interacted with.
Ranks order by descending score and break ties by ascending item index.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np

from .dataset import SplitSet, sample_eval_negatives
from .msvr import Explanation


@dataclass
class RankedList:
    user: int
    items: np.ndarray
    scores: np.ndarray
    positive: int

    def __post_init__(self):
        self.items = np.asarray(self.items, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if len(np.unique(self.items)) != len(self.items):
            raise ValueError("candidates must be distinct")
        if np.count_nonzero(self.items == self.positive) != 1:
            raise ValueError("positive must appear exactly once")

    def rank(self) -> int:
        """1-based rank of the positive."""
        s0 = self.scores[self.items == self.positive][0]
        ahead = (self.scores > s0) | ((self.scores == s0) & (self.items < self.positive))
        return 1 + int(ahead.sum())

    def top(self, k: int) -> np.ndarray:
        order = np.lexsort((self.items, -self.scores))
        return self.items[order[:k]]


def hr_at_k(ranked: RankedList, k: int) -> int:
    return int(ranked.rank() <= k)


def ndcg_at_k(ranked: RankedList, k: int) -> float:
    r = ranked.rank()
    return 1.0 / math.log2(r + 1) if r <= k else 0.0


def f_ns(pn: float, ps: float) -> float:
    if pn + ps == 0:
        return 0.0
    return 2 * pn * ps / (pn + ps)


@dataclass
class MetricsReport:
    hr: dict[int, float] = field(default_factory=dict)
    ndcg: dict[int, float] = field(default_factory=dict)
    pn: dict[int, float | None] = field(default_factory=dict)
    ps: dict[int, float | None] = field(default_factory=dict)
    n_users: int = 0

    @property
    def fns(self) -> dict[int, float | None]:
        out = {}
        for k in self.pn:
            a, b = self.pn[k], self.ps.get(k)
            out[k] = None if a is None or b is None else f_ns(a, b)
        return out

    def as_dict(self) -> dict[str, float | None]:
        out = {}
        for k in sorted(self.hr):
            out[f"hr@{k}"] = self.hr[k]
        for k in sorted(self.ndcg):
            out[f"ndcg@{k}"] = self.ndcg[k]
        fns = self.fns
        for k in sorted(self.pn):
            out[f"pn@{k}"] = self.pn[k]
            out[f"ps@{k}"] = self.ps[k]
            out[f"fns@{k}"] = fns[k]
        return out

    def lines(self) -> list[str]:
        return [f"{k}\t{_fmt(v)}" for k, v in self.as_dict().items()]

    def summary(self) -> str:
        return " ".join(f"{k}={_fmt(v)}" for k, v in self.as_dict().items())


def _fmt(v):
    return "absent" if v is None else f"{v:.6f}"


@dataclass
class CandidatePools:
    """Per-user candidate matrix; column 0 holds the positive, ``-1`` pads short rows."""

    users: np.ndarray
    items: np.ndarray
    positives: np.ndarray


def build_pools(split: SplitSet, n_neg: int = 99, seed: int = 0, which: str = "test") -> CandidatePools:
    positives = split.test if which == "test" else split.validation
    users = np.arange(split.full.num_users)
    rows = []
    for u in users:
        rng = np.random.default_rng([seed, 11, int(u)])
        negs = sample_eval_negatives(split.full, int(u), n_neg, seed=rng)
        rows.append(np.concatenate([[positives[u]], negs]))
    width = max([len(r) for r in rows] + [1])
    items = np.full((len(rows), width), -1, dtype=np.int64)
    for k, r in enumerate(rows):
        items[k, : len(r)] = r
    return CandidatePools(users, items, positives.copy())


def _score_pools(rec, user_vecs, items):
    valid = items >= 0
    scores = rec.score(user_vecs, np.where(valid, items, 0))
    return np.where(valid, scores, -np.inf), valid


def ranks_from_scores(scores: np.ndarray, items: np.ndarray, valid: np.ndarray) -> np.ndarray:
    """1-based rank of column 0 in every row, with the documented tie-break."""
    s0 = scores[:, :1]
    i0 = items[:, :1]
    ahead = ((scores > s0) | ((scores == s0) & (items < i0))) & valid
    return 1 + ahead.sum(axis=1)


def evaluate_ranking(rec, split: SplitSet, ks=(5, 10), seed: int = 0, n_neg: int = 99, which: str = "test", pools=None):
    """HR@K and NDCG@K averaged over all users.

    Returns ``(report, pools)``; the pools are reused for explanation metrics.
    """
    if pools is None:
        pools = build_pools(split, n_neg, seed, which)
    scores, valid = _score_pools(rec, rec.user_vectors()[pools.users], pools.items)
    ranks = ranks_from_scores(scores, pools.items, valid)
    report = MetricsReport(n_users=len(pools.users))
    for k in ks:
        hit = ranks <= k
        report.hr[k] = float(hit.mean()) if len(ranks) else 0.0
        report.ndcg[k] = float(np.where(hit, 1.0 / np.log2(ranks + 1), 0.0).mean()) if len(ranks) else 0.0
    return report, pools


def _top_k(scores_row, items_row, k):
    valid = items_row >= 0
    order = np.lexsort((items_row[valid], -scores_row[valid]))
    return items_row[valid][order[:k]]


def counterfactual_metrics(rec, pools: CandidatePools, explanations: dict[int, Explanation], k: int):
    """Probability of necessity and sufficiency at cutoff ``k``.

    For every explained user the explanation's members form the removal set
    ``E``. Necessity re-ranks after deleting ``E`` from the user's train list;
    sufficiency re-ranks with the list reduced to ``E`` alone. Nothing is
    retrained: only the user's representation is recomputed. Returns
    ``(pn, ps)``, each ``None`` when no user has a nonempty ``E``.
    """
    hit_pn = hit_ps = denom = 0
    row_of = {int(u): r for r, u in enumerate(pools.users)}
    for user, exp in explanations.items():
        if exp is None or not exp.members:
            continue
        row = row_of[int(user)]
        items = pools.items[row : row + 1]
        base_scores, _ = _score_pools(rec, rec.user_vector(user)[None], items)
        top = _top_k(base_scores[0], items[0], k)

        train_list = rec.train.user_lists[user]
        removal = np.isin(train_list, exp.members)
        necessity_vec = rec.user_vector(user, items=train_list[~removal])
        sufficiency_vec = rec.user_vector(user, items=train_list[removal])
        s_star, _ = _score_pools(rec, necessity_vec[None], items)
        s_prime, _ = _score_pools(rec, sufficiency_vec[None], items)
        top_star = _top_k(s_star[0], items[0], k)
        top_prime = _top_k(s_prime[0], items[0], k)

        hit_pn += int(np.isin(top, top_star, invert=True).sum())
        hit_ps += int(np.isin(top, top_prime).sum())
        denom += len(top)
    if denom == 0:
        return None, None
    return hit_pn / denom, hit_ps / denom


def pn(rec, pools, explanations, k):
    return counterfactual_metrics(rec, pools, explanations, k)[0]


def ps(rec, pools, explanations, k):
    return counterfactual_metrics(rec, pools, explanations, k)[1]


def explain_users(rec, users) -> dict[int, Explanation]:
    return {int(u): rec.explain_user(int(u))[0] for u in users}


# --- explanation dump -----------------------------------------------------

def write_explanations(path: str | os.PathLike, records: list[Explanation]) -> None:
    """One tab-separated line per record: ``user item rank coalition_ids phi``."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for r in records:
            ids = ",".join(str(m) for m in r.members)
            fh.write(f"{r.owner}\t{r.item}\t{r.rank}\t{ids}\t{r.phi!r}\n")


def read_explanations(path: str | os.PathLike) -> list[Explanation]:
    out = []
    with open(path, encoding="ascii") as fh:
        for line in fh:
            if not line.strip():
                continue
            user, item, rank, ids, phi = line.rstrip("\n").split("\t")
            members = [int(x) for x in ids.split(",") if x]
            out.append(Explanation(int(user), members, [], float(phi), item=int(item), rank=int(rank)))
    return out
