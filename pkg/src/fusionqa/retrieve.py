"""Retrieval pipelines over the block pool.

* iterative sparse (LxM): question -> L/2 segments + L/2 passages, then each
  hit is expanded with a second BM25 round;
* iterative dense: beam of re-encoded ``[q; path]`` queries, one fanout per step;
* fusion: one retrieval over fused blocks, split back into units that
  inherit the fused score.

Every pipeline sums a block's scores over all rounds, ranks by
(score desc, id asc) and keeps the longest whole-block prefix that fits the
token budget.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import PASSAGE, SEGMENT, Block, FusedBlock
from .dense import DimMismatch, EmbeddingStore, HashedBowEncoder, dense_top_k
from .index import Bm25Index, ScoredBlock, rank_key
from .textproc import concat, tokenize

DEFAULT_BUDGET = 4096
MODES = ("iter-sparse", "iter-dense", "fusion-sparse", "fusion-dense")


@dataclass(frozen=True)
class IterSparseConfig:
    L: int = 20
    M: int = 5
    budget_tokens: Optional[int] = DEFAULT_BUDGET

    def __post_init__(self):
        if self.L < 2 or self.L % 2:
            raise ValueError("L must be an even integer >= 2")
        if self.M < 1:
            raise ValueError("M must be >= 1")
        _check_budget(self.budget_tokens)


@dataclass(frozen=True)
class IterDenseConfig:
    fanouts: Tuple[int, ...] = (8, 4, 2)
    budget_tokens: Optional[int] = DEFAULT_BUDGET

    def __post_init__(self):
        object.__setattr__(self, "fanouts", tuple(int(f) for f in self.fanouts))
        if not self.fanouts or any(f < 1 for f in self.fanouts):
            raise ValueError("fanouts must be a non-empty list of integers >= 1")
        _check_budget(self.budget_tokens)


def _check_budget(budget):
    if budget is not None and budget < 0:
        raise ValueError("budget must be >= 0")


@dataclass
class RetrievalResult:
    ranked: List[ScoredBlock] = field(default_factory=list)
    truncated_ids: List[str] = field(default_factory=list)
    trace: List[dict] = field(default_factory=list)
    budget: Optional[int] = None

    def to_record(self, qid: str) -> dict:
        return {
            "qid": qid,
            "ranked": [{"block_id": s.block_id, "score": s.score} for s in self.ranked],
            "truncated_ids": list(self.truncated_ids),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "RetrievalResult":
        ranked = [ScoredBlock(r["block_id"], float(r["score"])) for r in rec.get("ranked", [])]
        return cls(ranked, list(rec.get("truncated_ids", [])))


def merge_scores(hits: Iterable[ScoredBlock]) -> List[ScoredBlock]:
    """Sum scores per unique block (exactly rounded, so order-independent) and rank."""
    parts: Dict[str, List[float]] = {}
    for h in hits:
        parts.setdefault(h.block_id, []).append(h.score)
    merged = [ScoredBlock(bid, math.fsum(v)) for bid, v in parts.items()]
    merged.sort(key=rank_key)
    return merged


def truncate(ranked: Sequence[ScoredBlock], lengths: Mapping[str, int], budget: Optional[int]) -> List[str]:
    """Longest prefix of whole blocks whose token total stays within ``budget``."""
    if budget is None:
        return [s.block_id for s in ranked]
    out: List[str] = []
    used = 0
    for s in ranked:
        used += lengths[s.block_id]
        if used > budget:
            break
        out.append(s.block_id)
    return out


def _finish(hits: List[ScoredBlock], trace: List[dict], lengths: Mapping[str, int], budget) -> RetrievalResult:
    ranked = merge_scores(hits)
    return RetrievalResult(ranked, truncate(ranked, lengths, budget), trace, budget)


def _record(trace: List[dict], round_: int, source: str, hits: Iterable[ScoredBlock]) -> List[ScoredBlock]:
    hits = list(hits)
    trace.extend({"round": round_, "source": source, "block_id": h.block_id, "score": h.score} for h in hits)
    return hits


def block_lengths(pool: Mapping[str, Block]) -> Dict[str, int]:
    return {bid: len(b.flat) for bid, b in pool.items()}


# ------------------------------------------------------------------ sparse


def sparse_retrieve(question: str, idx: Bm25Index, pool: Mapping[str, Block], k: Optional[int] = None, budget=DEFAULT_BUDGET) -> RetrievalResult:
    """Single-round BM25 over the full pool (the non-iterative baseline)."""
    trace: List[dict] = []
    hits = _record(trace, 1, "q", idx.top_k(tokenize(question), k if k is not None else idx.n_docs_))
    return _finish(hits, trace, block_lengths(pool), budget)


def iter_sparse(question: str, idx: Bm25Index, pool: Mapping[str, Block], cfg: IterSparseConfig = IterSparseConfig()) -> RetrievalResult:
    q = tokenize(question)
    half = cfg.L // 2
    trace: List[dict] = []
    segs = _record(trace, 1, "q", idx.top_k(q, half, SEGMENT))
    pas = _record(trace, 1, "q", idx.top_k(q, half, PASSAGE))
    hits = segs + pas
    for s in segs:
        query = concat([q, pool[s.block_id].flat])
        hits += _record(trace, 2, s.block_id, idx.top_k(query, cfg.M, PASSAGE))
    for p in pas:
        query = concat([q, tokenize(pool[p.block_id].title)])
        hits += _record(trace, 2, p.block_id, idx.top_k(query, cfg.M, SEGMENT))
    return _finish(hits, trace, block_lengths(pool), cfg.budget_tokens)


# ------------------------------------------------------------------- dense


def iter_dense(
    question: str,
    store: EmbeddingStore,
    encoder: Callable[[str], object],
    texts: Mapping[str, str],
    cfg: IterDenseConfig = IterDenseConfig(),
    lengths: Optional[Mapping[str, int]] = None,
    q_vec=None,
) -> RetrievalResult:
    """Beam retrieval; step ``j`` re-encodes ``question + " " + path texts``.

    Every beam path is expanded (no pruning), and a path never revisits a
    block it already holds, so at most L + LM + LMN unique blocks result.
    """
    trace: List[dict] = []
    hits: List[ScoredBlock] = []
    paths: List[Tuple[str, ...]] = [()]
    for step, fanout in enumerate(cfg.fanouts, 1):
        nxt: List[Tuple[str, ...]] = []
        for path in paths:
            if not path and q_vec is not None:
                vec = q_vec
            else:
                vec = encoder(" ".join([question] + [texts[b] for b in path]))
            found = dense_top_k(store, vec, fanout, (lambda b, seen=frozenset(path): b not in seen) if path else None)
            hits += _record(trace, step, path[-1] if path else "q", found)
            nxt.extend(path + (h.block_id,) for h in found)
        paths = nxt
    if lengths is None:
        lengths = {bid: len(tokenize(t)) for bid, t in texts.items()}
    return _finish(hits, trace, lengths, cfg.budget_tokens)


# ------------------------------------------------------------------ fusion


def split_fused(first_stage: Sequence[ScoredBlock], pool: Mapping[str, FusedBlock]) -> List[ScoredBlock]:
    """Each fused hit becomes its segment and passages, all with the fused score."""
    units: List[ScoredBlock] = []
    for hit in first_stage:
        f = pool[hit.block_id]
        units.append(ScoredBlock(f.segment.id, hit.score))
        units.extend(ScoredBlock(p.id, hit.score) for p in f.passages)
    return units


def unit_lengths(pool: Mapping[str, FusedBlock]) -> Dict[str, int]:
    out: Dict[str, int] = {}
    for f in pool.values():
        out[f.segment.id] = len(f.segment.flat)
        for p in f.passages:
            out[p.id] = len(p.flat)
    return out


def _fusion_post(first: List[ScoredBlock], pool, budget) -> RetrievalResult:
    trace: List[dict] = []
    _record(trace, 1, "q", first)
    return _finish(split_fused(first, pool), trace, unit_lengths(pool), budget)


def fusion_retrieve(question: str, idx: Bm25Index, pool: Mapping[str, FusedBlock], top_fused: int = 15, budget=DEFAULT_BUDGET) -> RetrievalResult:
    return _fusion_post(idx.top_k(tokenize(question), top_fused), pool, budget)


def fusion_retrieve_dense(q_vec, store: EmbeddingStore, pool: Mapping[str, FusedBlock], top_fused: int = 15, budget=DEFAULT_BUDGET) -> RetrievalResult:
    return _fusion_post(dense_top_k(store, q_vec, top_fused), pool, budget)


# -------------------------------------------------------------- estimators


class _Retriever(BaseEstimator):
    def predict(self, questions: Iterable[str]) -> List[RetrievalResult]:
        check_is_fitted(self, "lengths_")
        questions = list(questions)
        n = max(1, int(getattr(self, "n_jobs", 1) or 1))
        if n == 1:
            return [self.retrieve(q) for q in questions]
        with ThreadPoolExecutor(n) as ex:
            return list(ex.map(self.retrieve, questions))


def _as_pool(pool) -> Dict[str, Block]:
    return dict(pool) if isinstance(pool, Mapping) else {b.id: b for b in pool}


class SparseRetriever(_Retriever):
    """One BM25 round over segments and passages."""

    def __init__(self, k: Optional[int] = None, budget_tokens: Optional[int] = DEFAULT_BUDGET, k1=1.2, b=0.75, n_jobs=1):
        self.k = k
        self.budget_tokens = budget_tokens
        self.k1 = k1
        self.b = b
        self.n_jobs = n_jobs

    def fit(self, pool, y=None):
        self.pool_ = _as_pool(pool)
        self.index_ = Bm25Index(self.k1, self.b, self.n_jobs).fit(self.pool_.values())
        self.lengths_ = block_lengths(self.pool_)
        return self

    def retrieve(self, question: str) -> RetrievalResult:
        return sparse_retrieve(question, self.index_, self.pool_, self.k, self.budget_tokens)


class IterativeSparseRetriever(SparseRetriever):
    def __init__(self, L: int = 20, M: int = 5, budget_tokens: Optional[int] = DEFAULT_BUDGET, k1=1.2, b=0.75, n_jobs=1):
        self.L = L
        self.M = M
        self.budget_tokens = budget_tokens
        self.k1 = k1
        self.b = b
        self.n_jobs = n_jobs

    def retrieve(self, question: str) -> RetrievalResult:
        return iter_sparse(question, self.index_, self.pool_, IterSparseConfig(self.L, self.M, self.budget_tokens))


class IterativeDenseRetriever(_Retriever):
    def __init__(self, fanouts=(8, 4, 2), budget_tokens: Optional[int] = DEFAULT_BUDGET, encoder=None, dim=256, seed=0, n_jobs=1):
        self.fanouts = fanouts
        self.budget_tokens = budget_tokens
        self.encoder = encoder
        self.dim = dim
        self.seed = seed
        self.n_jobs = n_jobs

    def fit(self, pool, y=None, store: Optional[EmbeddingStore] = None):
        self.pool_ = _as_pool(pool)
        self.encoder_ = self.encoder if self.encoder is not None else HashedBowEncoder(self.dim, self.seed)
        self.texts_ = {bid: b.flat.text for bid, b in self.pool_.items()}
        if store is None:
            ids = list(self.pool_)
            store = EmbeddingStore(ids, self.encoder_.transform([self.texts_[i] for i in ids]).reshape(len(ids), -1), self.encoder_.tag)
        self.store_ = store
        self.lengths_ = block_lengths(self.pool_)
        return self

    def retrieve(self, question: str) -> RetrievalResult:
        cfg = IterDenseConfig(tuple(self.fanouts), self.budget_tokens)
        return iter_dense(question, self.store_, self.encoder_.encode, self.texts_, cfg, self.lengths_)


class FusionRetriever(_Retriever):
    """Retrieve fused blocks once, then split and merge their units.

    ``dense=False`` scores fused blocks with BM25 over their flattened text;
    ``dense=True`` uses dot products of encoded fused blocks.
    """

    def __init__(self, top_fused: int = 15, budget_tokens: Optional[int] = DEFAULT_BUDGET, dense: bool = False,
                 encoder=None, dim=256, seed=0, k1=1.2, b=0.75, n_jobs=1):
        self.top_fused = top_fused
        self.budget_tokens = budget_tokens
        self.dense = dense
        self.encoder = encoder
        self.dim = dim
        self.seed = seed
        self.k1 = k1
        self.b = b
        self.n_jobs = n_jobs

    def fit(self, fused_pool, y=None, store: Optional[EmbeddingStore] = None):
        self.pool_ = _as_pool(fused_pool)
        if self.dense:
            self.encoder_ = self.encoder if self.encoder is not None else HashedBowEncoder(self.dim, self.seed)
            if store is None:
                ids = list(self.pool_)
                vecs = self.encoder_.transform([self.pool_[i].flat.text for i in ids]).reshape(len(ids), -1)
                store = EmbeddingStore(ids, vecs, self.encoder_.tag)
            self.store_ = store
        else:
            self.index_ = Bm25Index(self.k1, self.b, self.n_jobs).fit(self.pool_.values())
        self.lengths_ = unit_lengths(self.pool_)
        return self

    def retrieve(self, question: str) -> RetrievalResult:
        if self.dense:
            return fusion_retrieve_dense(self.encoder_.encode(question), self.store_, self.pool_, self.top_fused, self.budget_tokens)
        return fusion_retrieve(question, self.index_, self.pool_, self.top_fused, self.budget_tokens)
