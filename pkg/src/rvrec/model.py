"""Composite training loss and inference-time representations.

The training objective on one batch is

    L = L_rec + lambda1 * L_peo + lambda2 * (L_ms_user + L_ms_item)

with hand-derived gradients for every parameter. ``batch_loss`` is the only
place that wires the pieces together; the trainer and the gradient checker
both call it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from . import msvr
from .backbone import get_backbone, rec_loss
from .dataset import InteractionDataset
from .engine import HEAD_NAMES, ParamStore, head_name, init_store
from .peo import heads_backward, heads_forward, peo_loss_rows

USER, ITEM = "user", "item"
_SIDE_CODE = {USER: 0, ITEM: 1}


def new_store(num_users: int, num_items: int, cfg) -> ParamStore:
    return init_store(num_users, num_items, cfg.d, cfg.seed, heads=cfg.peo, towers=cfg.backbone == "twotower")


def side_heads(store: ParamStore, side: str) -> dict:
    return {h: store[head_name(side, h)] for h in HEAD_NAMES}


@dataclass
class Batch:
    """Index arrays for one optimisation step.

    ``*_members`` are padded ``(owners, L)`` index matrices with boolean
    ``*_mask``; an owner's real members come first and keep list order.
    """

    users: np.ndarray
    pos: np.ndarray
    negs: np.ndarray
    peo_negs: np.ndarray
    user_owners: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    user_members: np.ndarray = field(default_factory=lambda: np.zeros((0, 1), dtype=np.int64))
    user_mask: np.ndarray = field(default_factory=lambda: np.zeros((0, 1), dtype=bool))
    item_owners: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    item_members: np.ndarray = field(default_factory=lambda: np.zeros((0, 1), dtype=np.int64))
    item_mask: np.ndarray = field(default_factory=lambda: np.zeros((0, 1), dtype=bool))


def scatter_add(target: np.ndarray, rows: np.ndarray, values: np.ndarray) -> None:
    """``target[rows] += values`` with repeated rows accumulated; a faster ``np.add.at``."""
    if len(rows) == 0:
        return
    n = len(rows)
    sel = sparse.csr_matrix((np.ones(n), (rows, np.arange(n))), shape=(target.shape[0], n))
    target += sel @ values


def gather_lists(lists, owners, cap: int, rng: np.random.Generator | None):
    """Pad the owners' lists into a matrix, subsampling lists longer than ``cap``.

    Subsampling is uniform without replacement and keeps list order.
    """
    rows = []
    for o in owners:
        lst = lists[int(o)]
        if len(lst) > cap:
            if rng is None:
                raise ValueError("rng required to subsample long lists")
            lst = lst[np.sort(rng.choice(len(lst), size=cap, replace=False))]
        rows.append(lst)
    width = max([len(r) for r in rows] + [1])
    members = np.zeros((len(rows), width), dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for k, r in enumerate(rows):
        members[k, : len(r)] = r
        mask[k, : len(r)] = True
    return members, mask


class _Side:
    """Means (and sigmas) for the unique rows of one side touched by a batch."""

    def __init__(self, store: ParamStore, side: str, needed: np.ndarray, cfg):
        self.side = side
        self.table = f"{side}_table"
        self.index = np.unique(needed)
        self._lookup = np.zeros(store[self.table].shape[0], dtype=np.int64)  # padded slots map to row 0, masked later
        self._lookup[self.index] = np.arange(len(self.index))
        x = store[self.table][self.index]
        self.peo = cfg.peo
        if cfg.peo:
            self.heads = side_heads(store, side)
            self.cache = heads_forward(x, self.heads, bias=cfg.peo_bias)
            self.mu, self.sigma = self.cache.mu, self.cache.sigma
        else:
            self.mu, self.sigma = x, None
        self.g_mu = np.zeros_like(self.mu)
        self.g_sigma = np.zeros_like(self.mu) if cfg.peo else None

    def rows(self, idx):
        return self._lookup[idx]

    def add(self, rows, g_mu=None, g_sigma=None):
        d = self.mu.shape[1]
        rows = np.asarray(rows).ravel()
        if g_mu is not None:
            scatter_add(self.g_mu, rows, g_mu.reshape(-1, d))
        if g_sigma is not None:
            scatter_add(self.g_sigma, rows, g_sigma.reshape(-1, d))

    def backward(self, store: ParamStore, grads: dict):
        if self.peo:
            g_x, head_grads = heads_backward(self.cache, self.heads, self.g_mu, self.g_sigma)
            for h, g in head_grads.items():
                grads[head_name(self.side, h)] += g
        else:
            g_x = self.g_mu
        grads[self.table][self.index] += g_x  # index is unique


def sample_starts(mu_members: np.ndarray, mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Draw Bernoulli gates from clamped neighbour cosines and apply the non-overlap rule."""
    if mask.shape[1] < 2:
        return np.zeros((mask.shape[0], 0), dtype=bool)
    p = msvr._adjacent_cos(mu_members, mask)
    draws = rng.random(p.shape) < p
    return msvr.greedy_starts(draws)


def batch_loss(store: ParamStore, batch: Batch, cfg, starts=None, rng=None):
    """Loss components, total loss and gradients for one batch.

    ``starts`` freezes the coalition gates as ``{"user": ..., "item": ...}``;
    when absent they are sampled from ``rng``. The gates actually used are
    returned so a caller can replay the exact same objective.

    Returns:
        ``(parts, total, grads, starts)``
    """
    bb = get_backbone(cfg.backbone)
    use_peo = cfg.peo and cfg.lambda1 > 0
    use_ms_u = cfg.user_side and cfg.lambda2 > 0 and len(batch.user_owners) > 0
    use_ms_i = cfg.item_side and cfg.lambda2 > 0 and len(batch.item_owners) > 0

    need_u = [batch.users]
    need_i = [batch.pos, batch.negs.ravel()]
    if use_peo:
        need_i.append(batch.peo_negs)
    if use_ms_u:
        need_u.append(batch.user_owners)
        need_i.append(batch.user_members[batch.user_mask])
    if use_ms_i:
        need_i.append(batch.item_owners)
        need_u.append(batch.item_members[batch.item_mask])
    us = _Side(store, USER, np.concatenate(need_u), cfg)
    its = _Side(store, ITEM, np.concatenate(need_i), cfg)

    grads = store.zeros_like()
    parts = {"rec": 0.0, "peo": 0.0, "ms": 0.0, "ms_user": 0.0, "ms_item": 0.0}
    starts = dict(starts or {})

    # recommendation loss
    ru, rp, rn = us.rows(batch.users), its.rows(batch.pos), its.rows(batch.negs)
    U = us.mu[ru]
    Vp = its.mu[rp]
    Vn = its.mu[rn]
    Urep = np.broadcast_to(U[:, None, :], Vn.shape).copy()
    s_pos = bb.scores(store, U, Vp)
    s_neg = bb.scores(store, Urep, Vn)
    parts["rec"], g_pos, g_neg = rec_loss(s_pos, s_neg)
    gU, gVp, gbb = bb.backward(store, U, Vp, g_pos)
    gUr, gVn, gbb2 = bb.backward(store, Urep, Vn, g_neg)
    for name, g in list(gbb.items()) + list(gbb2.items()):
        grads[name] += g
    us.add(ru, gU + gUr.sum(axis=1))
    its.add(rp, gVp)
    its.add(rn, gVn)

    if use_peo:
        rk = its.rows(batch.peo_negs)
        loss, (gmu_u, gsig_u, gmu_p, gsig_p, gmu_n, gsig_n) = peo_loss_rows(
            us.mu[ru], us.sigma[ru], its.mu[rp], its.sigma[rp], its.mu[rk], its.sigma[rk]
        )
        parts["peo"] = loss
        lam = cfg.lambda1
        us.add(ru, lam * gmu_u, lam * gsig_u)
        its.add(rp, lam * gmu_p, lam * gsig_p)
        its.add(rk, lam * gmu_n, lam * gsig_n)

    # ms_side_rows returns the printed estimator -E[sum phi]; "minimize" drives sum phi towards 0 instead
    ms_sign = 1.0 if getattr(cfg, "ms_objective", "minimize") == "maximize" else -1.0
    lam2 = cfg.lambda2
    for enabled, key, owner_side, member_side, owners, members, mask in (
        (use_ms_u, USER, us, its, batch.user_owners, batch.user_members, batch.user_mask),
        (use_ms_i, ITEM, its, us, batch.item_owners, batch.item_members, batch.item_mask),
    ):
        if not enabled:
            continue
        ro = owner_side.rows(owners)
        rm = member_side.rows(members)
        mu_o = owner_side.mu[ro]
        mu_m = member_side.mu[rm] * mask[..., None]
        if key not in starts:
            starts[key] = sample_starts(mu_m, mask, rng)
        loss, g_o, g_m = msvr.ms_side_rows(mu_o, mu_m, mask, starts[key])
        parts[f"ms_{key}"] = ms_sign * loss
        owner_side.add(ro, ms_sign * lam2 * g_o)
        member_side.add(rm[mask], ms_sign * lam2 * g_m[mask])
    parts["ms"] = parts["ms_user"] + parts["ms_item"]

    us.backward(store, grads)
    its.backward(store, grads)
    total = parts["rec"] + (cfg.lambda1 * parts["peo"] if use_peo else 0.0) + lam2 * parts["ms"]
    return parts, total, grads, starts


# --- inference ------------------------------------------------------------

def entity_rng(seed: int, side: str, entity: int) -> np.random.Generator:
    return np.random.default_rng([seed, 7, _SIDE_CODE[side], int(entity)])


class Recommender:
    """Read-only scoring snapshot over a trained store.

    Means come from the Gaussian heads when PEO is on, otherwise straight
    from the tables. With ``enhance = replace`` the sides selected by
    ``msvr_mode`` are replaced by their best-coalition averages.
    """

    def __init__(self, store: ParamStore, cfg, train: InteractionDataset):
        self.store = store
        self.cfg = cfg
        self.train = train
        self.backbone = get_backbone(cfg.backbone)
        self.mu_user = self._means(USER)
        self.mu_item = self._means(ITEM)
        self._user_vecs = None
        self._item_vecs = None

    def _means(self, side):
        x = self.store[f"{side}_table"]
        if not self.cfg.peo:
            return x.copy()
        return heads_forward(x, side_heads(self.store, side), bias=self.cfg.peo_bias).mu

    def _capped(self, side, entity, lst):
        rng = entity_rng(self.cfg.seed, side, entity)
        if len(lst) > self.cfg.coalition_cap:
            lst = lst[np.sort(rng.choice(len(lst), size=self.cfg.coalition_cap, replace=False))]
        return lst, rng

    def explain_user(self, user: int, items=None):
        """Best coalition of ``user``'s train list (or of ``items`` if given) and the enhanced vector."""
        lst = self.train.user_lists[user] if items is None else np.asarray(items, dtype=np.int64)
        lst, rng = self._capped(USER, user, lst)
        return msvr.explain_list(user, self.mu_user[user], self.mu_item[lst], lst, rng)

    def explain_item(self, item: int):
        lst, rng = self._capped(ITEM, item, self.train.item_lists[item])
        return msvr.explain_list(item, self.mu_item[item], self.mu_user[lst], lst, rng)

    @property
    def enhance_users(self) -> bool:
        return self.cfg.enhance == "replace" and self.cfg.user_side

    @property
    def enhance_items(self) -> bool:
        return self.cfg.enhance == "replace" and self.cfg.item_side

    def user_vector(self, user: int, items=None) -> np.ndarray:
        if not self.enhance_users:
            return self.mu_user[user]
        return self.explain_user(user, items)[1]

    def user_vectors(self) -> np.ndarray:
        if self._user_vecs is None:
            if self.enhance_users:
                self._user_vecs = np.array([self.user_vector(u) for u in range(self.train.num_users)])
            else:
                self._user_vecs = self.mu_user
        return self._user_vecs

    def item_vectors(self) -> np.ndarray:
        if self._item_vecs is None:
            if self.enhance_items:
                self._item_vecs = np.array([self.explain_item(i)[1] for i in range(self.train.num_items)])
            else:
                self._item_vecs = self.mu_item
        return self._item_vecs

    def score(self, user_vecs: np.ndarray, items: np.ndarray) -> np.ndarray:
        """Scores of ``(B, d)`` user vectors against ``(B, C)`` candidate items."""
        V = self.item_vectors()[items]
        U = np.broadcast_to(np.atleast_2d(user_vecs)[:, None, :], V.shape)
        return self.backbone.scores(self.store, U, V)
