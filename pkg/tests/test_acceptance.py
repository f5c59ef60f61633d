"""Acceptance suite: one test per criterion, each reported as PASS/FAIL in the
terminal summary (see conftest.py)."""
import json
import math
import random
import time
from collections import Counter
from fractions import Fraction

import numpy as np
import pytest

from fusionqa.attn import (
    ALL, OWN, SparseAttentionConfig, build_mask, dense_masked_attention, edge_count, reachability,
    select_span_cross_block, select_span_single_block, sparse_attention,
)
from fusionqa.dense import in_batch_loss
from fusionqa.corpus import FusedBlock
from fusionqa.fusion import build_fused_pool, droppable_words, generate_ict_dataset, make_ict_pair
from fusionqa.index import ScoredBlock, build_index
from fusionqa.metrics import em, f1, hits_at_budget
from fusionqa.retrieve import IterSparseConfig, fusion_retrieve, iter_sparse, sparse_retrieve
from fusionqa.textproc import tokenize

from builders import pool_of, psg, seg
from oracles import ref_in_batch_loss, ref_mask, ref_masked_attention, ref_ranking, ref_reach
from pipeline import run_pipeline
from test_dense import finite_diff
from test_metrics import golden_cases


@pytest.mark.acceptance(1, "BM25 matches brute-force reference on 200 random corpora")
def test_bm25_oracle_equivalence():
    rng = random.Random(2024)
    start = time.perf_counter()
    for _ in range(200):
        vocab = [f"w{i}" for i in range(rng.randint(2, 60))]
        docs = {f"d{i:03d}": [rng.choice(vocab) for _ in range(rng.randint(1, 30))]
                for i in range(rng.randint(1, 100))}
        query = [rng.choice(vocab) for _ in range(rng.randint(1, 8))]
        idx = build_index([(bid, toks) for bid, toks in docs.items()])
        got = idx.top_k(query, len(docs))
        want = ref_ranking(docs, query)
        assert [g.block_id for g in got] == [w[0] for w in want]
        assert all(abs(g.score - w[1]) <= 1e-9 for g, w in zip(got, want))
    assert time.perf_counter() - start < 10.0


@pytest.mark.acceptance(2, "sparse attention matches dense masked attention on 100 configs")
def test_sparse_attention_oracle_equivalence():
    rng = np.random.default_rng(7)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        k = int(rng.integers(1, 17))
        sizes = rng.integers(1, (256 - k) // k + 1, size=k).tolist()
        cfg = SparseAttentionConfig.from_lengths(sizes, int(rng.integers(0, 40)), OWN if rng.random() < 0.5 else ALL)
        assert cfg.N + cfg.K <= 256
        mask = build_mask(cfg)
        d = int(rng.integers(1, 33))
        Q, K, V = (rng.normal(size=(mask.n_nodes, d)) for _ in range(3))
        out = sparse_attention(Q, K, V, mask)
        worst = max(worst, float(np.max(np.abs(out - dense_masked_attention(Q, K, V, mask)))))
        A = ref_mask(cfg.block_bounds, cfg.radius, cfg.local_to_global)
        assert np.array_equal(mask.to_dense(), A)
    assert worst <= 1e-9
    # the loop oracle is slow; spot-check it on a few small configs
    for seed in range(5):
        r = np.random.default_rng(seed)
        cfg = SparseAttentionConfig.from_lengths(r.integers(1, 20, size=3).tolist(), 3, ALL)
        mask = build_mask(cfg)
        Q, K, V = (r.normal(size=(mask.n_nodes, 8)) for _ in range(3))
        A = ref_mask(cfg.block_bounds, cfg.radius, cfg.local_to_global)
        assert np.max(np.abs(sparse_attention(Q, K, V, mask) - ref_masked_attention(Q, K, V, A))) <= 1e-9
    assert time.perf_counter() - start < 30.0


@pytest.mark.acceptance(3, "edge count per token is flat in N (linear cost)")
def test_edge_count_linear():
    per_token = {}
    for n in (512, 1024, 2048, 4096):
        cfg = SparseAttentionConfig.uniform(n, 84, 84, OWN)
        per_token[n] = edge_count(build_mask(cfg))["total"] / n
    lo, hi = min(per_token.values()), max(per_token.values())
    assert (hi - lo) / lo < 0.10, per_token


@pytest.mark.acceptance(4, "reachability: OWN needs 3 layers across blocks, ALL needs 2")
def test_reachability_layers():
    for sizes in ([3, 4], [5, 2, 6], [1, 1, 1, 1]):
        own = SparseAttentionConfig.from_lengths(sizes, 0, OWN)
        mask = build_mask(own)
        A = ref_mask(own.block_bounds, 0, OWN)
        n = own.N
        cross = np.ones((n, n), dtype=bool)
        for s, e in own.block_bounds:
            cross[s:e, s:e] = False
        two, three = reachability(mask, 2), reachability(mask, 3)
        assert np.array_equal(two, ref_reach(A, 2)[:n, :n])
        assert np.array_equal(three, ref_reach(A, 3)[:n, :n])
        assert not two[cross].any()
        assert three.all()
        alls = SparseAttentionConfig.from_lengths(sizes, 0, ALL)
        got = reachability(build_mask(alls), 2)
        assert np.array_equal(got, ref_reach(ref_mask(alls.block_bounds, 0, ALL), 2)[:n, :n])
        assert got.all()


@pytest.mark.acceptance(5, "in-batch loss value and gradients")
def test_in_batch_loss():
    assert abs(in_batch_loss(np.eye(2), np.eye(2)).loss - (-math.log(math.e / (math.e + 1)))) <= 1e-12
    rng = np.random.default_rng(5)
    for _ in range(50):
        B, d = int(rng.integers(1, 7)), int(rng.integers(1, 9))
        Q, P = rng.normal(size=(B, d)), rng.normal(size=(B, d))
        res = in_batch_loss(Q, P)
        f = lambda: ref_in_batch_loss(Q, P)  # noqa: E731
        for got, X in ((res.grad_q, Q), (res.grad_b, P)):
            want = finite_diff(f, X)
            assert np.all(np.abs(got - want) <= 1e-6 * np.maximum(np.abs(want), 1.0))


@pytest.mark.acceptance(6, "ICT drops floor(w/2) words, fair survival, reproducible")
def test_ict_generator():
    words = "alpha bravo charlie delta echo foxtrot golf hotel".split()
    f = FusedBlock(seg("t#0", [" ".join(words[:4]), " ".join(words[4:])]), ())
    assert droppable_words(f.segment) == words
    w = len(words)
    survived = Counter()
    n = 10_000
    for seed in range(n):
        kept = make_ict_pair(f, seed).pseudo_query.split()
        assert len(kept) == w - w // 2
        survived.update(kept)
    for word in words:
        assert abs(survived[word] / n - 0.5) <= 0.02, (word, survived[word])

    segs = pool_of(*(seg(f"t#{i}", [f"cell {i} x y z", "a b"], page_title=f"Page {i}") for i in range(20)))
    pas = pool_of(psg("p1", "One", "First sentence. Second sentence."), psg("p2", "Two", "Only one."))
    pool = build_fused_pool(segs, pas, {"t#0": ("p1",), "t#3": ("p1", "p2")})
    data = generate_ict_dataset(pool, 3, base_seed=11)
    for pair in data:
        block = pool[pair.target_block_id]
        wb = len(droppable_words(block.segment))
        tail = next((s for p in block.passages for s in p.sentences if pair.pseudo_query.endswith(s)), "")
        kept = pair.pseudo_query[: len(pair.pseudo_query) - len(tail)].split()
        assert len(kept) == wb - wb // 2

    def dump(pairs):
        return "\n".join(json.dumps(p.to_record(), sort_keys=True) for p in pairs).encode()

    assert dump(data) == dump(generate_ict_dataset(pool, 3, base_seed=11))


def early_fusion_corpus(n_questions=50):
    """200 blocks: per question a matching segment and its linked answer
    passage (zero token overlap with the question), plus distractors."""
    segs, pas, links, questions = [], [], {}, []
    for i in range(n_questions):
        sid, pid = f"t{i:02d}#0", f"ent{i:02d}"
        segs.append(seg(sid, [f"Entity{i:02d}", f"{1900 + i}"], header=["Name", "Year"],
                        page_title=f"Roster{i:02d} season", section_title=f"Team{i:02d} members"))
        pas.append(psg(pid, f"Entity{i:02d}", f"Native of Town{i:02d}. Signed with Club{i:02d}."))
        links[sid] = (pid,)
        questions.append((f"Where is the hometown for the roster{i:02d} team{i:02d} player?", pid))
    for j in range(n_questions):
        segs.append(seg(f"x{j:02d}#0", [f"Other{j:02d}", "season"], header=["Name", "Note"], page_title=f"Misc{j:02d}"))
        pas.append(psg(f"d{j:02d}", f"Filler{j:02d}", f"Member of Guild{j:02d}. Lives nearby."))
    segments, passages = pool_of(*segs), pool_of(*pas)
    assert len(segments) + len(passages) == 200
    for q, pid in questions:
        assert not set(tokenize(q).tokens) & set(passages[pid].flat.tokens)
    return segments, passages, links, questions


@pytest.mark.acceptance(7, "early fusion and 2-step retrieval beat 1-step sparse")
def test_early_fusion_directional():
    start = time.perf_counter()
    segments, passages, links, questions = early_fusion_corpus()
    pool = {**segments, **passages}
    idx = build_index(pool.values())
    fused = build_fused_pool(segments, passages, links)
    fidx = build_index(fused.values())
    budget = 4096
    hits = Counter()
    for q, gold in questions:
        hits["sparse"] += hits_at_budget(sparse_retrieve(q, idx, pool, budget=budget), {gold}, budget)
        hits["iter"] += hits_at_budget(iter_sparse(q, idx, pool, IterSparseConfig(budget_tokens=budget)), {gold}, budget)
        hits["fusion"] += hits_at_budget(fusion_retrieve(q, fidx, fused, 15, budget), {gold}, budget)
    assert hits["fusion"] > hits["sparse"], hits
    assert hits["iter"] > hits["sparse"], hits
    assert time.perf_counter() - start < 5.0


@pytest.mark.acceptance(8, "cross-block reader finds the span single-block reading misses")
def test_cross_block_reader():
    question = "Which team won the 1983 Sugar Bowl?"
    texts = {"title": tokenize("Winners of the 1983 Sugar Bowl"), "row": tokenize("Penn State"),
             "other": tokenize("Georgia won the conference title.")}
    order = ["title", "row", "other"]
    ranked = [ScoredBlock(b, s) for b, s in zip(order, (0.9, 0.6, 0.5))]
    cross = select_span_cross_block(question, order, texts)
    single = select_span_single_block(question, ranked, texts)
    assert (cross.answer, cross.block_id) == ("Penn State", "row")
    assert single.answer != "Penn State"


@pytest.mark.acceptance(9, "EM/F1 golden file passes exactly")
def test_em_f1_golden():
    cases = golden_cases()
    assert len(cases) == 20
    for c in cases:
        assert em(c["pred"], c["golds"]) == c["em"], c
        assert Fraction(f1(c["pred"], c["golds"])).limit_denominator(1000) == Fraction(c["f1"]), c


@pytest.mark.acceptance(10, "end-to-end pipeline is byte-identical across runs and thread counts")
def test_end_to_end_determinism(tmp_path):
    reports = [run_pipeline(tmp_path / name, threads=t).read_bytes()
               for name, t in (("a", 1), ("b", 1), ("c", 8))]
    assert reports[0] == reports[1] == reports[2]
    assert json.loads(reports[0])["n_questions"] == 6
