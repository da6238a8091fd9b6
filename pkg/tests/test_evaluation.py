import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rvrec import dataset as D
from rvrec.config import ExperimentConfig
from rvrec.evaluation import (
    MetricsReport,
    RankedList,
    build_pools,
    counterfactual_metrics,
    evaluate_ranking,
    explain_users,
    f_ns,
    hr_at_k,
    ndcg_at_k,
    ranks_from_scores,
    read_explanations,
    write_explanations,
)
from rvrec.model import Recommender, new_store
from rvrec.msvr import Explanation
from rvrec.synthetic import synthetic_ratings

import oracles


def ranked_at(position, n=20):
    """List whose positive (item 0) sits at the given 1-based rank."""
    scores = np.arange(n, 0, -1, dtype=float)
    items = np.arange(1, n + 1)
    items[position - 1] = 0
    return RankedList(0, items, scores, positive=0)


class TestRankMetrics:
    def test_hr(self):
        assert hr_at_k(ranked_at(1), 5) == 1
        assert hr_at_k(ranked_at(6), 5) == 0
        assert hr_at_k(ranked_at(6), 10) == 1

    def test_ndcg(self):
        assert ndcg_at_k(ranked_at(1), 10) == 1.0
        assert ndcg_at_k(ranked_at(3), 10) == pytest.approx(0.5)
        assert ndcg_at_k(ranked_at(11), 10) == 0.0

    def test_tie_break_by_item(self):
        ranked = RankedList(0, [9, 4, 2], [1.0, 1.0, 1.0], positive=4)
        assert ranked.rank() == 2
        assert ranked.top(3).tolist() == [2, 4, 9]

    def test_validation(self):
        with pytest.raises(ValueError):
            RankedList(0, [1, 1], [0.0, 0.0], positive=1)
        with pytest.raises(ValueError):
            RankedList(0, [1, 2], [0.0, 0.0], positive=3)

    def test_brute_force_agreement(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(2, 101))
            items = rng.choice(1000, size=n, replace=False)
            scores = rng.integers(0, 6, size=n).astype(float)  # coarse scores force ties
            ranked = RankedList(0, items, scores, positive=int(items[0]))
            for k in (1, 5, 10):
                assert hr_at_k(ranked, k) == oracles.brute_hr(scores, items, k)
                assert ndcg_at_k(ranked, k) == oracles.brute_ndcg(scores, items, k)
            batched = ranks_from_scores(scores[None], items[None], np.ones((1, n), dtype=bool))[0]
            assert batched == oracles.brute_rank(scores, items)

    @given(st.lists(st.floats(-5, 5), min_size=2, max_size=30, unique=True))
    def test_monotone_and_ndcg_below_hr(self, scores):
        items = np.arange(len(scores))
        ranked = RankedList(0, items, scores, positive=0)
        hrs = [hr_at_k(ranked, k) for k in range(1, len(scores) + 1)]
        ndcgs = [ndcg_at_k(ranked, k) for k in range(1, len(scores) + 1)]
        assert hrs == sorted(hrs) and ndcgs == sorted(ndcgs)
        assert all(n <= h for n, h in zip(ndcgs, hrs))


class TestFns:
    def test_examples(self):
        assert f_ns(1, 1) == 1
        assert f_ns(1, 0) == 0
        assert f_ns(0.5, 0.5) == 0.5
        assert f_ns(0, 0) == 0

    @given(st.floats(0, 1), st.floats(0, 1))
    def test_bounded(self, a, b):
        if a + b > 0:
            assert min(a, b) - 1e-12 <= f_ns(a, b) <= max(a, b) + 1e-12

    def test_report_keys(self):
        r = MetricsReport(hr={5: 0.1, 10: 0.2}, ndcg={5: 0.05, 10: 0.08})
        assert list(r.as_dict()) == ["hr@5", "hr@10", "ndcg@5", "ndcg@10"]
        r.pn[1], r.ps[1] = 0.5, None
        assert list(r.as_dict())[4:] == ["pn@1", "ps@1", "fns@1"]
        assert "fns@1\tabsent" in r.lines()


@pytest.fixture(scope="module")
def big_split():
    ds = D.prepare(synthetic_ratings(n_users=600, n_items=300, ratings_per_user=(10, 25), seed=8), 3.5, 5)
    return D.split(ds, D.LEAVE_ONE_OUT, seed=0)


class TestEvaluateRanking:
    def test_null_model(self, big_split):
        assert big_split.train.num_users >= 500
        cfg = ExperimentConfig(d=16, peo=False, msvr_mode="off", seed=5)
        rec = Recommender(new_store(big_split.train.num_users, big_split.train.num_items, cfg), cfg, big_split.train)
        report, _ = evaluate_ranking(rec, big_split, seed=1)
        assert abs(report.hr[10] - 0.10) <= 0.02

    def test_oracle_model(self, big_split):
        class Oracle:
            def user_vectors(self):
                return np.arange(big_split.full.num_users)[:, None].astype(float)

            def score(self, user_vecs, items):
                users = user_vecs[:, 0].astype(int)
                return (items == big_split.test[users][:, None]).astype(float)

        report, _ = evaluate_ranking(Oracle(), big_split, seed=1)
        assert report.hr[5] == report.hr[10] == report.ndcg[5] == report.ndcg[10] == 1.0

    def test_pools_exclude_positives(self, big_split):
        pools = build_pools(big_split, 99, seed=2)
        for row, u in enumerate(pools.users[:50]):
            cand = pools.items[row][pools.items[row] >= 0]
            assert cand[0] == big_split.test[u]
            assert not set(cand[1:].tolist()) & set(big_split.full.user_lists[u].tolist())
            assert len(cand) == len(set(cand.tolist())) == min(100, big_split.full.num_items - len(big_split.full.user_lists[u]) + 1)

    def test_deterministic(self, big_split):
        cfg = ExperimentConfig(d=8, msvr_mode="ui", seed=2)
        store = new_store(big_split.train.num_users, big_split.train.num_items, cfg)
        a, _ = evaluate_ranking(Recommender(store, cfg, big_split.train), big_split, seed=3)
        b, _ = evaluate_ranking(Recommender(store, cfg, big_split.train), big_split, seed=3)
        assert a.as_dict() == b.as_dict()


class TestCounterfactual:
    def test_toy_necessity_and_sufficiency(self):
        rec, pools, table = oracles.toy_recommender()
        exps = explain_users(rec, [0])
        assert exps[0].members == [0, 1]
        pn, ps = counterfactual_metrics(rec, pools, exps, k=1)
        assert pn == 1.0 and ps == 1.0
        # brute force: rescore by hand
        cands = [3, 4, 5]
        base = table[[0, 1]].sum(0) / 3
        without = table[2] / 2  # list [c] alone: mean of zero owner and c
        only = table[0] / 2  # list [a, b] has no pair, best single member is a
        top = lambda v: oracles.brute_top_k([table[j] @ v for j in cands], cands, 1)  # noqa: E731
        assert top(base) == [3]
        assert top(without) != top(base)
        assert top(only) == top(base)

    def test_empty_explanations_absent(self):
        rec, pools, _ = oracles.toy_recommender()
        assert counterfactual_metrics(rec, pools, {0: None}, k=1) == (None, None)
        assert counterfactual_metrics(rec, pools, {0: Explanation(0, [], [], 0.0)}, k=1) == (None, None)

    def test_full_list_is_sufficient(self):
        rec, pools, _ = oracles.toy_recommender()
        exp = Explanation(0, [0, 1, 2], [0, 1, 2], 0.0)
        _, ps = counterfactual_metrics(rec, pools, {0: exp}, k=2)
        assert ps == 1.0

    def test_ranges_on_trained_like_store(self, big_split):
        cfg = ExperimentConfig(d=8, msvr_mode="ui", seed=4)
        rec = Recommender(new_store(big_split.train.num_users, big_split.train.num_items, cfg), cfg, big_split.train)
        _, pools = evaluate_ranking(rec, big_split, seed=0)
        exps = explain_users(rec, pools.users[:80])
        for k in (1, 5):
            pn, ps = counterfactual_metrics(rec, pools, exps, k)
            assert 0 <= pn <= 1 and 0 <= ps <= 1
            if pn + ps > 0:
                assert min(pn, ps) <= f_ns(pn, ps) <= max(pn, ps)


def test_explanation_dump_round_trip(tmp_path):
    records = [Explanation(3, [7, 8], [0, 1], 0.1 + 0.2, item=11, rank=1), Explanation(4, [2], [0], 1 / 3, True, item=5, rank=2)]
    path = tmp_path / "exp.tsv"
    write_explanations(path, records)
    lines = path.read_text().splitlines()
    assert lines[0].split("\t")[:4] == ["3", "11", "1", "7,8"]
    back = read_explanations(path)
    assert [(r.owner, r.item, r.rank, r.members, r.phi) for r in back] == [(r.owner, r.item, r.rank, r.members, r.phi) for r in records]
