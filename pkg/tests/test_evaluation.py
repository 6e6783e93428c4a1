import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dsparse.evaluation import AggregateReport, EvalReport, ProtocolError, evaluate, filtered_rank, mrr_hits
from dsparse.kgdata import generate_toy_kg

from oracles import brute_evaluate, brute_metrics, random_kg, sort_rank, table_scorer


def test_rank_without_ties():
    assert filtered_rank([0.9, 0.5, 0.7], 2, {2}) == 2


def test_filter_removes_known_true():
    assert filtered_rank([0.9, 0.5, 0.7], 2, {0, 2}) == 1


def test_all_ties_take_the_middle():
    assert filtered_rank([0.5] * 5, 0, {0}) == 3
    assert filtered_rank([0.5] * 4, 0, {0}) == 2


def test_gold_must_be_in_filter():
    with pytest.raises(ProtocolError):
        filtered_rank([0.1, 0.2], 0, {1})


def test_metric_values():
    m = mrr_hits([1, 2, 4, 20])
    assert m["mrr"] == pytest.approx((1 + 0.5 + 0.25 + 0.05) / 4, abs=1e-15)
    assert m["hits1"] == 0.25 and m["hits3"] == 0.5 and m["hits10"] == 0.75


def test_metrics_reject_empty_and_zero():
    with pytest.raises(ValueError):
        mrr_hits([])
    with pytest.raises(ValueError):
        mrr_hits([0, 1])


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.integers(0, 4), min_size=2, max_size=25).flatmap(
        lambda s: st.tuples(st.just(s), st.integers(0, len(s) - 1), st.sets(st.integers(0, len(s) - 1)))
    )
)
def test_rank_matches_sort_oracle(case):
    scores, gold, extra = case
    filt = extra | {gold}
    assert filtered_rank(np.array(scores, float), gold, filt) == sort_rank(scores, gold, filt)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(-50, 50), min_size=2, max_size=20), st.data())
def test_strictly_monotone_transform_keeps_rank(scores, data):
    # integer inputs keep the cubic exact, so ties survive the transform
    gold = data.draw(st.integers(0, len(scores) - 1))
    x = np.array(scores, float)
    assert filtered_rank(x, gold, {gold}) == filtered_rank(x**3 + 2 * x - 7, gold, {gold})


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=3, max_size=20), st.data())
def test_growing_filter_never_worsens_rank(scores, data):
    n = len(scores)
    gold = data.draw(st.integers(0, n - 1))
    small = data.draw(st.sets(st.integers(0, n - 1))) | {gold}
    big = small | data.draw(st.sets(st.integers(0, n - 1)))
    x = np.array(scores, float)
    assert filtered_rank(x, gold, big) <= filtered_rank(x, gold, small)


def test_rank_invariant_to_entity_permutation():
    rng = np.random.default_rng(0)
    scores = rng.integers(0, 4, 30).astype(float)
    perm = rng.permutation(30)
    inv = np.argsort(perm)
    for gold in range(30):
        filt = {gold, (gold + 3) % 30}
        assert filtered_rank(scores, gold, filt) == filtered_rank(scores[perm], int(inv[gold]), {int(inv[e]) for e in filt})


@pytest.mark.parametrize("seed", range(10))
def test_evaluate_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    kg = random_kg(rng, int(rng.integers(20, 51)))
    scorer, table = table_scorer(rng, kg, levels=int(rng.integers(2, 6)))
    report = evaluate(scorer, kg, "test", batch_size=7)
    ranks = brute_evaluate(table, kg, "test")
    assert report.ranks == ranks
    assert report.metrics() == pytest.approx(brute_metrics(ranks), abs=1e-12)


def test_perfect_scorer_gets_rank_one():
    kg = generate_toy_kg(30, 0)
    table = np.zeros((kg.n_entities, kg.n_relations, kg.n_entities))
    for (s, r), objs in kg.truth.items():
        table[s, r, objs] = 1.0
    report = evaluate(lambda s, r: table[s, r], kg, "test")
    assert report.mrr == 1.0 and report.hits1 == 1.0


def test_report_counts_both_directions():
    kg = generate_toy_kg(30, 0)
    report = evaluate(lambda s, r: np.zeros((len(s), kg.n_entities)), kg, "valid")
    assert report.n_queries == 2 * len(kg.valid)


def test_report_serialization():
    rep = EvalReport.from_ranks([1, 3, 11], "test", {"seed": 1})
    d = json.loads(rep.to_json())
    assert d["ranks"] == [1, 3, 11] and d["n_queries"] == 3 and d["hits3"] == pytest.approx(2 / 3)
    assert "mrr = " in rep.to_text()


def test_aggregate_uses_sample_std():
    runs = [EvalReport.from_ranks([r], "test") for r in (1, 2, 4)]
    agg = AggregateReport("test", runs)
    assert agg.mean("mrr") == pytest.approx(7 / 12)
    assert agg.std("mrr") == pytest.approx(np.std([1, 0.5, 0.25], ddof=1))
    assert AggregateReport("test", runs[:1]).std("mrr") == 0.0
