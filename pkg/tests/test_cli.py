import json

import numpy as np
import pytest

from rvrec import dataset as D
from rvrec.cli import main, read_embeddings
from rvrec.evaluation import read_explanations
from rvrec.msvr import ShapleyGame
from rvrec.synthetic import synthetic_ratings, write_ratings

FAST = ["--d", "6", "--epochs", "2", "--learning-rate", "0.01", "--batch-size", "128", "--train-negatives", "4"]


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    write_ratings(synthetic_ratings(n_users=70, n_items=60, ratings_per_user=(12, 30), seed=2), root / "ratings.dat")
    return root


@pytest.fixture(scope="module")
def trained(workdir):
    snap = workdir / "snap.txt"
    assert main(["prepare", "--ratings", str(workdir / "ratings.dat"), "--out", str(snap)]) == 0
    assert main(["train", "--snapshot", str(snap), "--out", str(workdir / "run"), *FAST]) == 0
    return workdir


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_prepare_stats_and_determinism(workdir, capsys):
    a, b = workdir / "a.txt", workdir / "b.txt"
    code, out, _ = run(["prepare", "--ratings", str(workdir / "ratings.dat"), "--out", str(a)], capsys)
    assert code == 0
    keys = [line.split("\t")[0] for line in out.splitlines()]
    assert keys == ["users", "items", "interactions", "sparsity", "avg_per_user"]
    run(["prepare", "--ratings", str(workdir / "ratings.dat"), "--out", str(b)], capsys)
    assert a.read_bytes() == b.read_bytes()


def test_prepare_empty_input(tmp_path, capsys):
    (tmp_path / "empty.dat").write_text("")
    code, out, err = run(["prepare", "--ratings", str(tmp_path / "empty.dat"), "--out", str(tmp_path / "s.txt")], capsys)
    assert code == 0
    assert all(float(line.split("\t")[1]) == 0 for line in out.splitlines())
    assert "no interactions" in err


def test_train_manifest(trained):
    manifest = json.loads((trained / "run" / "manifest.json").read_text())
    assert set(manifest) == {"config", "dataset", "epochs", "metrics", "checkpoint"}
    assert manifest["config"]["d"] == 6 and len(manifest["epochs"]) == 2
    assert list(manifest["metrics"]) == ["hr@5", "hr@10", "ndcg@5", "ndcg@10"]
    assert all(e["rec"] > 0 and e["peo"] > 0 and e["ms"] != 0 for e in manifest["epochs"])
    assert (trained / "run" / "config.txt").exists()


def test_evaluate_reproduces_manifest(trained, capsys):
    run_dir = trained / "run"
    code, out, _ = run(["evaluate", "--manifest", str(run_dir / "manifest.json"), "--checkpoint", str(run_dir / "checkpoint.txt")], capsys)
    assert code == 0
    metrics = dict(line.split("\t") for line in out.splitlines())
    manifest = json.loads((run_dir / "manifest.json").read_text())
    assert {k: float(v) for k, v in metrics.items()} == pytest.approx(manifest["metrics"], abs=5e-7)


def test_evaluate_explain_keys(trained, capsys):
    run_dir = trained / "run"
    code, out, _ = run(["evaluate", "--manifest", str(run_dir / "manifest.json"), "--checkpoint", str(run_dir / "checkpoint.txt"), "--explain"], capsys)
    keys = [line.split("\t")[0] for line in out.splitlines()]
    assert keys == ["hr@5", "hr@10", "ndcg@5", "ndcg@10", "pn@1", "ps@1", "fns@1", "pn@5", "ps@5", "fns@5"]


def test_rerun_is_identical(trained, capsys):
    again = trained / "again"
    run(["train", "--manifest", str(trained / "run" / "manifest.json"), "--out", str(again)], capsys)
    a = json.loads((trained / "run" / "manifest.json").read_text())
    b = json.loads((again / "manifest.json").read_text())
    assert a["metrics"] == b["metrics"] and a["epochs"] == b["epochs"]


def test_explain_dump(trained, capsys):
    run_dir = trained / "run"
    dump = trained / "exp.tsv"
    code, _, _ = run(["explain", "--manifest", str(run_dir / "manifest.json"), "--checkpoint", str(run_dir / "checkpoint.txt"),
                      "--users", "0,1,2", "--top-k", "3", "--out", str(dump)], capsys)
    assert code == 0
    records = read_explanations(dump)
    assert len(records) == 9 and [r.rank for r in records[:3]] == [1, 2, 3]
    ds, _ = D.read_snapshot(trained / "snap.txt")
    sp = D.split(ds, D.LEAVE_ONE_OUT, 0)
    for r in records:
        assert set(r.members) <= set(sp.train.user_lists[r.owner].tolist())
        assert r.item not in sp.train.user_lists[r.owner]
    # phi is the recomputed value of the emitted coalition
    from rvrec.config import load_config
    from rvrec.engine import load_checkpoint
    from rvrec.model import Recommender

    cfg = load_config(None, {k: str(v) if not isinstance(v, bool) else ("on" if v else "off")
                             for k, v in json.loads((run_dir / "manifest.json").read_text())["config"].items()})
    rec = Recommender(load_checkpoint(run_dir / "checkpoint.txt"), cfg, sp.train)
    for r in records:
        lst = sp.train.user_lists[r.owner]
        errors = np.abs(rec.mu_item[lst] @ rec.mu_user[r.owner] - 1)
        pos = [int(np.flatnonzero(lst == m)[0]) for m in r.members]
        game = ShapleyGame(errors)
        value = game.multivariate_shapley(pos[0]) if len(pos) == 2 else game.shapley_item(pos[0])
        assert abs(value - r.phi) < 1e-9


def test_explain_degenerate_flag(tmp_path, capsys):
    # user 0 keeps a single train item under cold-start, so the explanation is degenerate
    ratings = synthetic_ratings(n_users=30, n_items=40, ratings_per_user=(10, 20), seed=5)
    write_ratings(ratings, tmp_path / "r.dat")
    args = ["--ratings", str(tmp_path / "r.dat"), "--split", "cold-start", *FAST]
    assert main(["train", *args, "--out", str(tmp_path / "run")]) == 0
    capsys.readouterr()
    code, out, _ = run(["explain", *args, "--checkpoint", str(tmp_path / "run" / "checkpoint.txt"), "--users", "0", "--top-k", "1"], capsys)
    assert code == 0 and out.rstrip().endswith("degenerate")


def test_dump_embeddings(trained, capsys):
    run_dir = trained / "run"
    out_path = trained / "emb.txt"
    code, _, _ = run(["dump-embeddings", "--manifest", str(run_dir / "manifest.json"), "--checkpoint", str(run_dir / "checkpoint.txt"), "--out", str(out_path)], capsys)
    assert code == 0
    lines = out_path.read_text().splitlines()
    ds, _ = D.read_snapshot(trained / "snap.txt")
    assert len(lines) == ds.num_users + ds.num_items
    assert {line.split()[0] for line in lines} == {"U", "I"}
    parsed = read_embeddings(out_path)
    from rvrec.engine import load_checkpoint
    from rvrec.model import side_heads
    from rvrec.peo import heads_forward

    store = load_checkpoint(run_dir / "checkpoint.txt")
    mu = heads_forward(store["user_table"], side_heads(store, "user")).mu
    assert all(np.array_equal(parsed["U"][k], mu[k]) for k in range(len(mu)))


@pytest.mark.parametrize("argv, category, code", [
    (["evaluate", "--checkpoint", "missing.txt", "--snapshot", "missing.txt"], "io", 3),
    (["train"], "usage", 2),
    (["frobnicate"], "usage", 2),
    (["prepare", "--ratings", "x", "--lambda1", "-1"], "config", 2),
])
def test_error_lines(argv, category, code, capsys):
    got, out, err = run(argv, capsys)
    assert got == code
    lines = err.strip().splitlines()
    assert len(lines) == 1 and lines[0].startswith(f"error: {category}: ")


def test_parse_error_category(tmp_path, capsys):
    (tmp_path / "bad.dat").write_text("1::2::x::0\n")
    code, _, err = run(["prepare", "--ratings", str(tmp_path / "bad.dat")], capsys)
    assert code == 4 and err.startswith("error: parse: line 1")


def test_checkpoint_mismatch(trained, capsys):
    run_dir = trained / "run"
    code, _, err = run(["evaluate", "--snapshot", str(trained / "snap.txt"), "--checkpoint", str(run_dir / "checkpoint.txt"), "--d", "5"], capsys)
    assert code == 5 and err.startswith("error: validation:")


def test_unknown_user(trained, capsys):
    run_dir = trained / "run"
    code, _, err = run(["explain", "--manifest", str(run_dir / "manifest.json"), "--checkpoint", str(run_dir / "checkpoint.txt"), "--users", "100000"], capsys)
    assert code == 5 and "unknown user" in err
