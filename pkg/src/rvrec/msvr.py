"""Coalition valuation over interaction lists.

Players are the positions of an entity's interaction list (a user's items, or
an item's users). The set function is the total absolute prediction error
``v(S) = sum_{j in S} |mu_owner . mu_j - 1(owner, j)|``. Deleting a subset
``c`` is valued by a single weighted marginal

    nu(c) = (|c| - 1)! (n - |c|)! / n! * [v(R) - v(R \\ c)]

and an adjacent pair ``c = (k, k+1)`` gets the multivariate value

    phi(c) = nu(c) * |c| / 2 + nu(k) + nu(k+1).

Which pairs are formed is decided by Bernoulli gates whose probabilities are
the clamped cosine similarities of neighbouring members. Gates are scanned
left to right and a formed pair claims both of its positions, so the result
is always a partition of the list into pairs and singletons.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MSVR_MODES = ("off", "u", "i", "ui")
PAIR = 2


class CoalitionDomainError(ValueError):
    pass


def per_item_error(mu_owner, mu_member, interacted: bool = True) -> float:
    return abs(float(np.dot(mu_owner, mu_member)) - (1.0 if interacted else 0.0))


def shapley_coefficient(n: int, size: int) -> float:
    """``(size - 1)! (n - size)! / n!`` evaluated with exact integers."""
    return math.factorial(size - 1) * math.factorial(n - size) / math.factorial(n)


class ShapleyGame:
    """Set function over cached per-position errors.

    ``v(R \\ c)`` is always obtained by subtracting from the cached total, so
    valuing a whole partition costs O(n). ``reads`` counts how many cached
    errors have been touched, which lets callers audit that cost.
    """

    def __init__(self, errors):
        self.errors = np.asarray(errors, dtype=np.float64)
        if self.errors.ndim != 1:
            raise ValueError("errors must be a 1-D array")
        self.n = len(self.errors)
        self.total = float(self.errors.sum())
        self.reads = self.n

    def set_value(self, positions) -> float:
        positions = np.asarray(positions, dtype=np.int64)
        self.reads += len(positions)
        return float(self.errors[positions].sum())

    def value_without(self, positions) -> float:
        return self.total - self.set_value(positions)

    def nu(self, positions) -> float:
        positions = tuple(sorted(set(int(p) for p in np.atleast_1d(positions))))
        size = len(positions)
        if size == 0:
            raise CoalitionDomainError("coalition must be nonempty")
        if size >= self.n:
            raise CoalitionDomainError(f"coalition of size {size} needs a list longer than {self.n}")
        return shapley_coefficient(self.n, size) * (self.total - self.value_without(positions))

    def shapley_item(self, k: int) -> float:
        return self.nu((k,))

    def multivariate_shapley(self, k: int) -> float:
        """Value of the pair starting at position ``k``."""
        pair = (k, k + 1)
        return self.nu(pair) * PAIR / 2 + self.nu((k,)) + self.nu((k + 1,))

    def member_value(self, k: int, j: int) -> float:
        """Share of position ``j`` in the pair starting at ``k``."""
        if j not in (k, k + 1):
            raise ValueError(f"position {j} is not in the pair starting at {k}")
        return self.nu((k, k + 1)) / 2 + self.nu((j,)) / 2

    def partition_value(self, partition: "CoalitionPartition") -> float:
        return sum(self.multivariate_shapley(k) for k in partition.coalitions) + sum(
            self.shapley_item(j) for j in partition.singletons
        )


def coalition_probs(mu_members) -> np.ndarray:
    """Clamped cosine similarity of each neighbouring pair; zero vectors give 0.

    Lists of two get probability 0: their only pair is the whole list, which
    has no valuation.
    """
    mu = np.asarray(mu_members, dtype=np.float64)
    return _adjacent_cos(mu[None], np.ones((1, len(mu)), dtype=bool))[0]


def _adjacent_cos(mu: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Batched version: ``mu`` is ``(U, L, d)``, result ``(U, L - 1)``, zero where padded or ``n < 3``."""
    a, b = mu[:, :-1], mu[:, 1:]
    num = np.einsum("uld,uld->ul", a, b)
    norms = np.sqrt(np.einsum("uld,uld->ul", mu, mu))
    den = norms[:, :-1] * norms[:, 1:]
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    valid = mask[:, :-1] & mask[:, 1:] & (mask.sum(axis=1) >= 3)[:, None]
    return np.where(valid, np.clip(cos, 0.0, 1.0), 0.0)


def greedy_starts(draws: np.ndarray) -> np.ndarray:
    """Left-to-right non-overlap rule on gate draws of shape ``(..., L - 1)``.

    A pair starting at ``k`` forms iff its draw succeeded and position ``k``
    was not already claimed by the pair starting at ``k - 1``.
    """
    draws = np.asarray(draws, dtype=bool)
    starts = np.zeros_like(draws)
    prev = np.zeros(draws.shape[:-1], dtype=bool)
    for k in range(draws.shape[-1]):
        cur = draws[..., k] & ~prev
        starts[..., k] = cur
        prev = cur
    return starts


@dataclass
class CoalitionPartition:
    """Sampled gates and the disjoint cover they induce.

    ``gates[k]`` is 1 iff the pair ``(k, k+1)`` formed; ``coalitions`` lists
    the start positions of formed pairs and ``singletons`` the positions left
    alone.
    """

    probs: np.ndarray
    gates: np.ndarray
    coalitions: list[int] = field(default_factory=list)
    singletons: list[int] = field(default_factory=list)

    @classmethod
    def from_starts(cls, probs, starts) -> "CoalitionPartition":
        starts = np.asarray(starts, dtype=bool)
        n = len(starts) + 1
        covered = np.zeros(n, dtype=bool)
        covered[:-1] |= starts
        covered[1:] |= starts
        return cls(
            np.asarray(probs, dtype=np.float64),
            starts.astype(np.int8),
            np.flatnonzero(starts).tolist(),
            np.flatnonzero(~covered).tolist(),
        )

    @property
    def size(self) -> int:
        return len(self.gates) + 1

    def blocks(self) -> list[tuple[int, ...]]:
        out = [(k, k + 1) for k in self.coalitions] + [(j,) for j in self.singletons]
        return sorted(out)


def sample_partition(p, seed=None) -> CoalitionPartition:
    p = np.asarray(p, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    draws = rng.random(len(p)) < p
    return CoalitionPartition.from_starts(p, greedy_starts(draws))


def ms_loss_side(mu_owner, mu_members, seed=None, interacted=None, partition=None) -> float:
    """One Monte-Carlo sample of ``-sum_{blocks} phi(block)`` for a single entity.

    Lists shorter than two contribute 0.
    """
    mu_members = np.asarray(mu_members, dtype=np.float64)
    n = len(mu_members)
    if n < 2:
        return 0.0
    targets = np.ones(n) if interacted is None else np.asarray(interacted, dtype=np.float64)
    errors = np.abs(mu_members @ np.asarray(mu_owner, dtype=np.float64) - targets)
    if partition is None:
        partition = sample_partition(coalition_probs(mu_members), seed)
    return -ShapleyGame(errors).partition_value(partition)


def ms_side_rows(mu_owner, mu_members, mask, starts, targets=None):
    """Batched side loss with frozen gates, averaged over owners.

    Args:
        mu_owner: ``(U, d)`` owner means.
        mu_members: ``(U, L, d)`` member means, padded.
        mask: ``(U, L)`` true on real positions; real positions come first.
        starts: ``(U, L - 1)`` formed-pair indicators (output of :func:`greedy_starts`).
        targets: ``(U, L)`` indicator of interaction; defaults to all ones.

    Returns:
        ``(loss, g_owner, g_members)``.
    """
    U, L = mask.shape
    n = mask.sum(axis=1).astype(np.float64)
    if targets is None:
        targets = np.ones((U, L))
    dots = np.einsum("ud,uld->ul", mu_owner, mu_members)
    resid = dots - targets
    errors = np.abs(resid)
    in_pair = np.zeros((U, L), dtype=bool)
    if L > 1:
        s = starts & mask[:, :-1] & mask[:, 1:] & (n >= 3)[:, None]
        in_pair[:, :-1] |= s
        in_pair[:, 1:] |= s
    safe_n = np.maximum(n, 2.0)
    single = 1.0 / safe_n
    pair_extra = 1.0 / (safe_n * (safe_n - 1.0))  # shapley_coefficient(n, 2) * |c| / 2
    w = np.where(in_pair, (single + pair_extra)[:, None], single[:, None])
    w = np.where(mask & (n >= 2)[:, None], w, 0.0)
    loss = -float((w * errors).sum()) / U
    g_dots = -w * np.sign(resid) / U
    g_owner = np.einsum("ul,uld->ud", g_dots, mu_members)
    g_members = g_dots[..., None] * mu_owner[:, None, :]
    return loss, g_owner, g_members


@dataclass
class Explanation:
    """Best coalition of an entity's list.

    ``members`` are the entity indices forming the coalition (item indices for
    a user), ``positions`` their list positions, and ``phi`` the coalition's
    value. ``degenerate`` marks a fallback to a single member.
    """

    owner: int
    members: list[int]
    positions: list[int]
    phi: float
    degenerate: bool = False
    item: int | None = None
    rank: int | None = None

    @property
    def removal_set(self) -> list[int]:
        return list(self.members)


def best_coalition(owner: int, errors, partition: CoalitionPartition, member_ids=None) -> Explanation:
    """Arg-max of ``phi`` over formed pairs; ties go to the lowest position.

    With no formed pair the singleton with the largest value is returned and
    flagged degenerate. A one-element list yields that element with value
    equal to its error (the coefficient ``0! 0! / 1!`` is 1).
    """
    errors = np.asarray(errors, dtype=np.float64)
    ids = np.arange(len(errors)) if member_ids is None else np.asarray(member_ids)
    if len(errors) == 0:
        raise CoalitionDomainError("empty interaction list")
    if len(errors) == 1:
        return Explanation(owner, [int(ids[0])], [0], float(errors[0]), degenerate=True)
    game = ShapleyGame(errors)
    if partition.coalitions:
        values = [game.multivariate_shapley(k) for k in partition.coalitions]
        best = int(np.argmax(values))  # argmax returns the first maximum
        k = partition.coalitions[best]
        return Explanation(owner, [int(ids[k]), int(ids[k + 1])], [k, k + 1], values[best])
    values = [game.shapley_item(j) for j in range(game.n)]
    j = int(np.argmax(values))
    return Explanation(owner, [int(ids[j])], [j], values[j], degenerate=True)


def enhance_embedding(mu_owner, mu_members) -> np.ndarray:
    """Average of the owner mean and the coalition members' means."""
    stack = np.vstack([np.atleast_2d(mu_owner), np.atleast_2d(mu_members)])
    return stack.mean(axis=0)


def explain_list(owner: int, mu_owner, mu_list, member_ids, seed, targets=None) -> tuple[Explanation, np.ndarray]:
    """Sample a partition of one list, pick its best coalition and the enhanced vector.

    Returns the explanation and ``AGG_average(mu_owner, members)``. An empty
    list leaves the owner vector unchanged and returns ``None`` for the
    explanation.
    """
    mu_list = np.asarray(mu_list, dtype=np.float64)
    if len(mu_list) == 0:
        return None, np.asarray(mu_owner, dtype=np.float64).copy()
    t = np.ones(len(mu_list)) if targets is None else np.asarray(targets, dtype=np.float64)
    errors = np.abs(mu_list @ mu_owner - t)
    if len(mu_list) == 1:
        partition = CoalitionPartition.from_starts(np.zeros(0), np.zeros(0, dtype=bool))
    else:
        partition = sample_partition(coalition_probs(mu_list), seed)
    exp = best_coalition(owner, errors, partition, member_ids)
    return exp, enhance_embedding(mu_owner, mu_list[exp.positions])
