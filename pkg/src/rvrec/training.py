"""Epoch loop: batching, negative sampling, gate sampling and Adam updates."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dataset import InteractionDataset, NegativeSampler
from .engine import NumericFault, OptimConfig, ParamStore, adam_step, check_finite
from .model import Batch, batch_loss, gather_lists, new_store

logger = logging.getLogger(__name__)


@dataclass
class EpochLog:
    epoch: int
    total: float
    rec: float
    peo: float
    ms: float

    def as_dict(self) -> dict:
        return {"epoch": self.epoch, "total": self.total, "rec": self.rec, "peo": self.peo, "ms": self.ms}


def optim_config(cfg) -> OptimConfig:
    return OptimConfig(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon, cfg.batch_size, cfg.epochs, cfg.seed)


def make_batch(train: InteractionDataset, sampler: NegativeSampler, rows: np.ndarray, cfg, data_rng, gate_rng) -> Batch:
    users = train.users[rows]
    pos = train.items[rows]
    negs = sampler.popularity(users, cfg.train_negatives, data_rng)
    peo_negs = sampler.uniform(users, data_rng)
    batch = Batch(users, pos, negs, peo_negs)
    if cfg.lambda2 > 0 and cfg.user_side:
        batch.user_owners = np.unique(users)
        batch.user_members, batch.user_mask = gather_lists(train.user_lists, batch.user_owners, cfg.coalition_cap, gate_rng)
    if cfg.lambda2 > 0 and cfg.item_side:
        batch.item_owners = np.unique(pos)
        batch.item_members, batch.item_mask = gather_lists(train.item_lists, batch.item_owners, cfg.coalition_cap, gate_rng)
    return batch


def train(train_ds: InteractionDataset, cfg, store: ParamStore | None = None, epochs: int | None = None, on_epoch=None):
    """Fit a store on ``train_ds`` and return ``(store, history)``.

    Shuffling and negatives come from one random stream and gate sampling
    from another, both keyed on ``(seed, epoch)``. Switching the coalition
    terms on or off therefore never perturbs the data order.
    """
    if store is None:
        store = new_store(train_ds.num_users, train_ds.num_items, cfg)
    opt = optim_config(cfg)
    sampler = NegativeSampler(train_ds)
    history = []
    n = len(train_ds)
    for epoch in range(cfg.epochs if epochs is None else epochs):
        data_rng = np.random.default_rng([cfg.seed, 1, epoch])
        gate_rng = np.random.default_rng([cfg.seed, 2, epoch])
        order = data_rng.permutation(n)
        sums = np.zeros(4)
        n_batches = 0
        for b, start in enumerate(range(0, n, opt.batch_size)):
            rows = order[start : start + opt.batch_size]
            batch = make_batch(train_ds, sampler, rows, cfg, data_rng, gate_rng)
            parts, total, grads, _ = batch_loss(store, batch, cfg, rng=gate_rng)
            where = f"epoch {epoch} batch {b}"
            if not np.isfinite(total):
                raise NumericFault("loss", where)
            check_finite(grads, where)
            adam_step(store, grads, opt)
            check_finite(store.params, where)
            sums += (total, parts["rec"], parts["peo"], parts["ms"])
            n_batches += 1
        means = sums / max(n_batches, 1)
        log = EpochLog(epoch, *map(float, means))
        history.append(log)
        logger.info("epoch %d total=%.5f rec=%.5f peo=%.5f ms=%.5f", epoch, *means)
        if on_epoch is not None:
            on_epoch(log, store)
    return store, history
