"""Table segment to passage entity linking over a title-only BM25 index."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import GoldLinks, Passage, TableSegment, read_jsonl, ParseError, CorpusError
from .index import Bm25Index
from .textproc import tokenize

AugmentedQueries = Dict[str, List[str]]


class UnknownSegment(CorpusError):
    def __init__(self, segment_id: str):
        self.segment_id = segment_id
        super().__init__(f"unknown segment {segment_id!r}")


@dataclass(frozen=True)
class LinkResult:
    segment_id: str
    linked: Tuple[Tuple[str, float], ...] = ()

    @property
    def passage_ids(self) -> Tuple[str, ...]:
        return tuple(pid for pid, _ in self.linked)


@dataclass(frozen=True)
class SegmentScore:
    precision: float
    recall: float
    f1: float


@dataclass
class LinkEvalReport:
    per_segment: Dict[str, SegmentScore] = field(default_factory=dict)
    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "segments": len(self.per_segment),
            "per_segment": {k: vars(v) for k, v in sorted(self.per_segment.items())},
        }


def baseline_queries(s: TableSegment) -> List[str]:
    """Raw non-empty cell strings, in column order."""
    return [c for c in s.cells if c.strip()]


def load_augmented_queries(path, segment_ids: Optional[Iterable[str]] = None) -> AugmentedQueries:
    known = set(segment_ids) if segment_ids is not None else None
    out: AugmentedQueries = {}
    for lineno, obj in read_jsonl(path):
        sid = obj.get("segment_id")
        queries = obj.get("queries")
        if not isinstance(sid, str):
            raise ParseError(lineno, "missing or non-string 'segment_id'", str(path))
        if not isinstance(queries, list) or not all(isinstance(q, str) for q in queries):
            raise ParseError(lineno, "'queries' must be a list of strings", str(path))
        if known is not None and sid not in known:
            raise UnknownSegment(sid)
        out.setdefault(sid, []).extend(queries)
    return out


def build_title_index(passages: Iterable[Passage], n_jobs: int = 1, **bm25) -> Bm25Index:
    return Bm25Index(n_jobs=n_jobs, **bm25).fit((p.id, tokenize(p.title), "passage") for p in passages)


def link_segment(
    s: TableSegment,
    queries: Sequence[str],
    title_index: Bm25Index,
    per_query_k: int = 1,
    threshold: float = 0.0,
) -> LinkResult:
    if per_query_k < 1:
        raise ValueError("per_query_k must be >= 1")
    best: Dict[str, float] = {}
    for q in queries:
        for hit in title_index.top_k(q, per_query_k):
            if hit.score >= threshold and hit.score > best.get(hit.block_id, -math.inf):
                best[hit.block_id] = hit.score
    linked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
    return LinkResult(s.id, tuple(linked))


def _prf(pred: set, gold: set) -> SegmentScore:
    hit = len(pred & gold)
    if pred:
        p = hit / len(pred)
    else:
        p = 1.0 if not gold else 0.0
    r = hit / len(gold) if gold else 1.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return SegmentScore(p, r, f)


def eval_linking(pred: Mapping[str, object], gold: GoldLinks) -> LinkEvalReport:
    """Per-segment P/R/F1 over the gold segments, macro-averaged.

    ``pred`` values may be :class:`LinkResult` objects or plain id iterables.
    Segments absent from ``pred`` count as empty predictions.
    """
    report = LinkEvalReport()
    for sid in sorted(gold):
        got = pred.get(sid, ())
        ids = set(got.passage_ids if isinstance(got, LinkResult) else got)
        report.per_segment[sid] = _prf(ids, set(gold[sid]))
    n = len(report.per_segment)
    if n:
        scores = list(report.per_segment.values())
        report.precision = math.fsum(s.precision for s in scores) / n
        report.recall = math.fsum(s.recall for s in scores) / n
        report.f1 = math.fsum(s.f1 for s in scores) / n
    return report


class EntityLinker(BaseEstimator):
    """Link each table segment to passages whose titles match its queries.

    ``fit`` indexes passage titles; ``predict`` links segments using either
    the raw cell values or externally supplied augmented queries.
    """

    def __init__(self, per_query_k: int = 1, threshold: float = 0.0, k1: float = 1.2, b: float = 0.75, n_jobs: int = 1):
        self.per_query_k = per_query_k
        self.threshold = threshold
        self.k1 = k1
        self.b = b
        self.n_jobs = n_jobs

    def fit(self, passages: Iterable[Passage], y=None):
        self.title_index_ = build_title_index(passages, n_jobs=self.n_jobs, k1=self.k1, b=self.b)
        return self

    def predict(self, segments: Iterable[TableSegment], queries: Optional[AugmentedQueries] = None) -> Dict[str, LinkResult]:
        check_is_fitted(self, "title_index_")
        segments = list(segments)

        def one(s: TableSegment) -> LinkResult:
            qs = queries.get(s.id, []) if queries is not None else baseline_queries(s)
            return link_segment(s, qs, self.title_index_, self.per_query_k, self.threshold)

        with ThreadPoolExecutor(max(1, self.n_jobs)) as ex:
            results = list(ex.map(one, segments))
        return {r.segment_id: r for r in results}

    def score(self, segments, gold: GoldLinks, queries: Optional[AugmentedQueries] = None) -> float:
        return eval_linking(self.predict(segments, queries), gold).f1
