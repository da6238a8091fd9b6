"""End-to-end runs: data preparation, training, evaluation and run manifests."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

from . import dataset as D
from .config import ExperimentConfig
from .engine import ParamStore
from .evaluation import MetricsReport, counterfactual_metrics, evaluate_ranking, explain_users
from .model import Recommender
from .training import train

logger = logging.getLogger(__name__)

EXPLAIN_KS = (1, 5)


def prepare_dataset(cfg: ExperimentConfig) -> D.InteractionDataset:
    """Ratings file to filtered dataset; without a ratings file, read ``cfg.snapshot``."""
    if not cfg.ratings:
        if not cfg.snapshot:
            raise FileNotFoundError("no ratings file or snapshot configured")
        return D.read_snapshot(cfg.snapshot)[0]
    ratings = D.load_ratings(cfg.ratings, cfg.format)
    ds = D.prepare(ratings, cfg.threshold, cfg.k_core)
    if cfg.max_users and cfg.max_users < ds.num_users:
        # the subsample can leave users or items below k; filter again
        ds = D.k_core_filter(D.subsample_users(ds, cfg.max_users, cfg.seed), cfg.k_core)
    return ds


@dataclass
class RunManifest:
    config: dict
    dataset: dict
    epochs: list[dict] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    checkpoint: str = ""

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_json() + "\n")

    @classmethod
    def read(cls, path) -> "RunManifest":
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))


@dataclass
class RunResult:
    store: ParamStore
    split: D.SplitSet
    history: list
    report: MetricsReport
    recommender: Recommender


def evaluate(store: ParamStore, cfg: ExperimentConfig, split: D.SplitSet, explain: bool = False) -> tuple[MetricsReport, Recommender]:
    rec = Recommender(store, cfg, split.train)
    report, pools = evaluate_ranking(rec, split, ks=(5, 10), seed=cfg.seed, n_neg=cfg.eval_negatives)
    if explain:
        explanations = explain_users(rec, pools.users)
        for k in EXPLAIN_KS:
            report.pn[k], report.ps[k] = counterfactual_metrics(rec, pools, explanations, k)
    return report, rec


def run(cfg: ExperimentConfig, ds: D.InteractionDataset | None = None, explain: bool = False, on_epoch=None) -> RunResult:
    """Prepare (unless ``ds`` is given), split, train and evaluate on the test items."""
    if ds is None:
        ds = prepare_dataset(cfg)
    sp = D.split(ds, cfg.split, cfg.seed)
    store, history = train(sp.train, cfg, on_epoch=on_epoch)
    report, rec = evaluate(store, cfg, sp, explain)
    return RunResult(store, sp, history, report, rec)


def manifest_for(cfg: ExperimentConfig, result: RunResult, checkpoint: str = "") -> RunManifest:
    return RunManifest(
        config=cfg.to_dict(),
        dataset=result.split.full.stats(),
        epochs=[h.as_dict() for h in result.history],
        metrics=result.report.as_dict(),
        checkpoint=str(checkpoint),
    )
