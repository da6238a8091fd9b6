"""Command-line entry point: ``rvrec {prepare,train,evaluate,explain,dump-embeddings}``.

Every config key is also a flag (``--lambda1 0.1``, ``--msvr-mode u``);
flags override the ``--config`` file. Failures print a single line
``error: <category>: <message>`` to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import dataset as D
from .config import ConfigError, ExperimentConfig, load_config
from .engine import CheckpointError, NumericFault, load_checkpoint, save_checkpoint
from .evaluation import write_explanations
from .model import Recommender
from .pipeline import RunManifest, RunResult, evaluate, manifest_for, prepare_dataset
from .training import train

logger = logging.getLogger("rvrec")

EXIT_CODES = {"usage": 2, "config": 2, "io": 3, "parse": 4, "validation": 5, "numeric": 6}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def _config_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key = value file")
    parser.add_argument("--manifest", help="take the config from a previous run manifest")
    group = parser.add_argument_group("config keys (override the file)")
    for f in fields(ExperimentConfig):
        group.add_argument("--" + f.name.replace("_", "-"), dest=f"cfg_{f.name}", metavar="VALUE")


def _resolve_config(args) -> ExperimentConfig:
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_") and v is not None}
    if args.manifest:
        base = {k: str(v) if not isinstance(v, bool) else ("on" if v else "off") for k, v in RunManifest.read(args.manifest).config.items()}
        base.update(overrides)
        overrides = base
    return load_config(args.config, overrides)


def _split(cfg: ExperimentConfig) -> D.SplitSet:
    ds = prepare_dataset(cfg)
    try:
        return D.split(ds, cfg.split, cfg.seed)
    except D.SplitError as exc:
        raise CliError("validation", str(exc)) from None


def _load_matching(path, cfg: ExperimentConfig, sp: D.SplitSet):
    store = load_checkpoint(path)
    want = (cfg.d, sp.full.num_users, sp.full.num_items)
    have = (store.dim, store.num_users, store.num_items)
    if want != have:
        raise CliError("validation", f"checkpoint has d, N, M = {have} but config and data give {want}")
    if cfg.peo and "user_W1" not in store:
        raise CliError("validation", "config has peo on but checkpoint has no Gaussian heads")
    if cfg.backbone == "twotower" and "tower_user" not in store:
        raise CliError("validation", "config asks for the two-tower backbone but checkpoint has no towers")
    return store


def cmd_prepare(args) -> int:
    cfg = _resolve_config(args)
    ds = prepare_dataset(cfg)
    stats = ds.stats()
    if len(ds) == 0:
        print("warning: no interactions survived filtering", file=sys.stderr)
    out = args.out or cfg.snapshot
    if out:
        D.write_snapshot(ds, out, cfg.seed)
    for key in ("users", "items", "interactions", "sparsity", "avg_per_user"):
        print(f"{key}\t{stats[key]}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    sp = _split(cfg)

    def log_epoch(log, _store):
        print(f"epoch {log.epoch}\ttotal {log.total:.6f}\trec {log.rec:.6f}\tpeo {log.peo:.6f}\tms {log.ms:.6f}", flush=True)

    store, history = train(sp.train, cfg, on_epoch=log_epoch)
    report, _ = evaluate(store, cfg, sp, explain=args.explain)
    ckpt = out / "checkpoint.txt"
    save_checkpoint(store, ckpt)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    manifest = manifest_for(cfg, RunResult(store, sp, history, report, None), ckpt)
    manifest.write(out / "manifest.json")
    print("\n".join(report.lines()))
    return 0


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    sp = _split(cfg)
    store = _load_matching(args.checkpoint, cfg, sp)
    report, _ = evaluate(store, cfg, sp, explain=args.explain)
    print("\n".join(report.lines()))
    return 0


def _parse_ids(raw: str, limit: int, what: str) -> list[int]:
    try:
        ids = [int(x) for x in raw.split(",") if x.strip()]
    except ValueError:
        raise CliError("usage", f"{what} ids must be comma-separated integers") from None
    bad = [x for x in ids if not 0 <= x < limit]
    if bad:
        raise CliError("validation", f"unknown {what} id(s): {','.join(map(str, bad))}")
    return ids


def cmd_explain(args) -> int:
    cfg = _resolve_config(args)
    sp = _split(cfg)
    store = _load_matching(args.checkpoint, cfg, sp)
    rec = Recommender(store, cfg, sp.train)
    users = _parse_ids(args.users, sp.train.num_users, "user")
    records = []
    all_items = np.arange(sp.train.num_items)
    for u in users:
        exp, vec = rec.explain_user(u)
        if exp is None:
            continue
        candidates = np.setdiff1d(all_items, sp.train.user_lists[u])
        scores = rec.score(rec.user_vector(u)[None], candidates[None])[0]
        order = np.lexsort((candidates, -scores))[: args.top_k]
        for rank, j in enumerate(candidates[order], start=1):
            rec_exp = type(exp)(u, exp.members, exp.positions, exp.phi, exp.degenerate, int(j), rank)
            records.append(rec_exp)
            if exp.degenerate:
                logger.info("user %d: degenerate single-member explanation", u)
    if args.out:
        write_explanations(args.out, records)
    else:
        for r in records:
            flag = "\tdegenerate" if r.degenerate else ""
            print(f"{r.owner}\t{r.item}\t{r.rank}\t{','.join(map(str, r.members))}\t{r.phi!r}{flag}")
    return 0


def write_embeddings(path, mu_user: np.ndarray, mu_item: np.ndarray) -> None:
    """One line per entity: ``kind id v1 ... vd`` with kind ``U`` or ``I``."""
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        for kind, table in (("U", mu_user), ("I", mu_item)):
            for k, row in enumerate(table):
                fh.write(f"{kind} {k} " + " ".join(format(x, ".17g") for x in row.tolist()) + "\n")


def read_embeddings(path) -> dict[str, dict[int, np.ndarray]]:
    out = {"U": {}, "I": {}}
    with open(path, encoding="ascii") as fh:
        for line in fh:
            kind, idx, *vals = line.split()
            out[kind][int(idx)] = np.array([float(v) for v in vals])
    return out


def cmd_dump_embeddings(args) -> int:
    cfg = _resolve_config(args)
    store = load_checkpoint(args.checkpoint)
    if store.dim != cfg.d:
        raise CliError("validation", f"checkpoint has d = {store.dim} but config has d = {cfg.d}")
    rec = Recommender(store, cfg, None)
    write_embeddings(args.out, rec.mu_user, rec.mu_item)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rvrec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="filter a ratings file and write a snapshot")
    _config_args(p)
    p.add_argument("--out", help="snapshot path (defaults to the snapshot key)")
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train, evaluate and write checkpoint plus manifest")
    _config_args(p)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--explain", action="store_true", help="also report PN/PS/F_NS")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="HR and NDCG of a checkpoint on the test items")
    _config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--explain", action="store_true", help="also report PN/PS/F_NS at 1 and 5")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("explain", help="best-coalition explanations for users' top recommendations")
    _config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--users", required=True, help="comma-separated dense user indices")
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--out", help="write the dump here instead of stdout")
    p.set_defaults(func=cmd_explain)

    p = sub.add_parser("dump-embeddings", help="write user and item means")
    _config_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_embeddings)
    return parser


def _category(exc: BaseException) -> str:
    if isinstance(exc, CliError):
        return exc.category
    if isinstance(exc, (D.ParseError, CheckpointError)):
        return "parse"
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, NumericFault):
        return "numeric"
    if isinstance(exc, OSError):
        return "io"
    return "validation"


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except (CliError, OSError, ValueError, FloatingPointError) as exc:
        msg = " ".join(str(exc).split())
        category = _category(exc)
        print(f"error: {category}: {msg}", file=sys.stderr)
        return EXIT_CODES.get(category, 1)


if __name__ == "__main__":
    sys.exit(main())
