import json
import math

import pytest
from hypothesis import given, strategies as st

from fusionqa.linker import (
    EntityLinker, LinkResult, UnknownSegment, baseline_queries, build_title_index, eval_linking,
    link_segment, load_augmented_queries,
)
from fusionqa.corpus import ParseError

from builders import psg, seg

PASSAGES = [
    psg("psu_football", "Penn State Nittany Lions football", "The football team. It plays at Beaver Stadium."),
    psg("psu", "Pennsylvania State University", "A public university."),
    psg("sugar", "Sugar Bowl", "An annual college football bowl game."),
    psg("lakers", "Los Angeles Lakers", "A basketball team."),
]


@pytest.fixture(scope="module")
def titles():
    return build_title_index(PASSAGES)


def test_baseline_queries():
    assert baseline_queries(seg("t#0", ["Penn State", ""])) == ["Penn State"]
    assert baseline_queries(seg("t#0", ["", " "])) == []
    assert baseline_queries(seg("t#0", ["a", "b", "c"])) == ["a", "b", "c"]


def test_load_augmented_queries(tmp_path):
    path = tmp_path / "aug.jsonl"
    path.write_text("")
    assert load_augmented_queries(path) == {}
    path.write_text(json.dumps({"segment_id": "t1#0", "queries": ["Penn State Nittany Lions football"]}) + "\n")
    assert load_augmented_queries(path, {"t1#0"}) == {"t1#0": ["Penn State Nittany Lions football"]}
    with pytest.raises(UnknownSegment):
        load_augmented_queries(path, {"t2#0"})
    path.write_text('{"segment_id": "t1#0", "queries": "oops"}\n')
    with pytest.raises(ParseError):
        load_augmented_queries(path)


def test_link_segment_examples(titles):
    s = seg("t#0", ["x"])
    assert link_segment(s, [], titles).linked == ()
    exact = link_segment(s, ["Sugar Bowl"], titles)
    assert exact.passage_ids[0] == "sugar"
    assert link_segment(s, ["Sugar Bowl"], titles, threshold=math.inf).linked == ()
    with pytest.raises(ValueError):
        link_segment(s, ["Sugar Bowl"], titles, per_query_k=0)


def test_augmented_query_links_named_entity(titles):
    s = seg("t#0", ["Penn State"])
    aug = link_segment(s, ["Penn State Nittany Lions football"], titles)
    assert aug.passage_ids == ("psu_football",)


def test_union_keeps_max_score_and_sorts(titles):
    s = seg("t#0", ["x"])
    queries = ["football", "Sugar Bowl", "Lakers"]
    res = link_segment(s, queries, titles, per_query_k=2)
    assert len(res.passage_ids) == len(set(res.passage_ids))
    assert res.linked == tuple(sorted(res.linked, key=lambda kv: (-kv[1], kv[0])))
    best = {}
    for q in queries:
        for pid, sc in link_segment(s, [q], titles, per_query_k=2).linked:
            best[pid] = max(sc, best.get(pid, -math.inf))
    assert dict(res.linked) == best


@given(st.permutations(["football", "Sugar Bowl", "Lakers", "Penn State", "university"]))
def test_link_is_query_order_invariant(order):
    titles = build_title_index(PASSAGES)
    s = seg("t#0", ["x"])
    assert link_segment(s, list(order), titles, per_query_k=2) == \
        link_segment(s, ["football", "Sugar Bowl", "Lakers", "Penn State", "university"], titles, per_query_k=2)


def test_eval_linking_examples():
    gold = {"s1": ("a", "b"), "s2": ("c",)}
    assert eval_linking({"s1": ["a", "b"], "s2": ["c"]}, gold).f1 == 1.0
    r = eval_linking({"x": ["a", "b"]}, {"x": ("b", "c")})
    assert (r.precision, r.recall, r.f1) == (0.5, 0.5, 0.5)
    r = eval_linking({"x": []}, {"x": ()})
    assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)
    r = eval_linking({}, {"x": ("a",)})
    assert (r.precision, r.recall, r.f1) == (0.0, 0.0, 0.0)
    lr = LinkResult("x", (("b", 2.0), ("a", 1.0)))
    assert eval_linking({"x": lr}, {"x": ("b", "c")}).f1 == 0.5


def test_macro_average():
    r = eval_linking({"s1": ["a"], "s2": ["z"]}, {"s1": ("a",), "s2": ("c",)})
    assert r.f1 == 0.5
    assert r.to_dict()["segments"] == 2


ids = st.sets(st.sampled_from("abcdef"), max_size=5)


@given(ids, ids)
def test_f1_symmetric(p, g):
    assert eval_linking({"x": p}, {"x": tuple(g)}).f1 == pytest.approx(eval_linking({"x": g}, {"x": tuple(p)}).f1)


@given(ids, ids, st.sampled_from("abcdefgh"))
def test_adding_passages_moves_metrics_the_right_way(p, g, extra):
    before = eval_linking({"x": p}, {"x": tuple(g)}).per_segment["x"]
    after = eval_linking({"x": p | {extra}}, {"x": tuple(g)}).per_segment["x"]
    if extra in g:
        assert after.recall >= before.recall
    else:
        assert after.precision <= before.precision
    for v in (after.precision, after.recall, after.f1):
        assert 0.0 <= v <= 1.0


def test_entity_linker_estimator():
    from sklearn.base import clone

    linker = EntityLinker(n_jobs=4).fit(PASSAGES)
    segs = [seg("t#0", ["Sugar Bowl", "Penn State"]), seg("t#1", ["Lakers", ""])]
    pred = linker.predict(segs)
    assert pred["t#0"].passage_ids[0] == "sugar"
    assert pred["t#1"].passage_ids == ("lakers",)
    assert pred == EntityLinker(n_jobs=1).fit(PASSAGES).predict(segs)
    aug = linker.predict(segs, {"t#0": ["Penn State Nittany Lions football"]})
    assert aug["t#0"].passage_ids == ("psu_football",) and aug["t#1"].linked == ()
    assert clone(linker).get_params()["n_jobs"] == 4
    assert 0.0 <= linker.score(segs, {"t#0": ("sugar",), "t#1": ("lakers",)}) <= 1.0
