"""Unigram inverted index with Okapi BM25 scoring.

``Bm25Index`` follows the scikit-learn estimator protocol: hyperparameters
go to ``__init__``, ``fit`` consumes a pool of blocks and freezes the
postings, and everything learned lives in trailing-underscore attributes.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import DuplicateId
from .textproc import TokenSeq, tokenize

SNAPSHOT_HEADER = "FBIDX v1"

BlockFilter = Union[None, str, Iterable[str], Callable[[str], bool]]


class UnknownBlock(KeyError):
    pass


class SnapshotError(ValueError):
    pass


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        if not (self.k1 >= 0 and math.isfinite(self.k1)):
            raise ValueError(f"k1 must be a finite non-negative number, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must lie in [0, 1], got {self.b}")


@dataclass(frozen=True)
class ScoredBlock:
    block_id: str
    score: float


def rank_key(sb: ScoredBlock):
    return (-sb.score, sb.block_id)


def as_entry(item) -> Tuple[str, TokenSeq, str]:
    """Normalize a pool item to ``(id, tokens, kind)``.

    Accepts corpus blocks (anything with ``id``, ``flat`` and ``kind``) or
    explicit ``(id, TokenSeq | str | token list[, kind])`` tuples.
    """
    if isinstance(item, tuple):
        bid, toks = item[0], item[1]
        kind = item[2] if len(item) > 2 else "block"
        if isinstance(toks, str):
            toks = tokenize(toks)
        elif not isinstance(toks, TokenSeq):
            toks = TokenSeq(tuple(toks), tuple((i, i + 1) for i in range(len(toks))))
        return bid, toks, kind
    return item.id, item.flat, item.kind


def _count(entries: Sequence[Tuple[str, TokenSeq, str]]) -> List[Counter]:
    return [Counter(e[1].tokens) for e in entries]


class Bm25Index(BaseEstimator):
    """Frozen BM25 index over a block pool.

    Parameters
    ----------
    k1, b : float
        Okapi BM25 term-saturation and length-normalization parameters.
    n_jobs : int
        Worker threads for term counting during ``fit``. The merge is done
        in pool order, so the result does not depend on this value.
    """

    def __init__(self, k1: float = 1.2, b: float = 0.75, n_jobs: int = 1):
        self.k1 = k1
        self.b = b
        self.n_jobs = n_jobs

    @property
    def params(self) -> Bm25Params:
        return Bm25Params(self.k1, self.b)

    def fit(self, pool, y=None):
        Bm25Params(self.k1, self.b)
        entries = [as_entry(x) for x in pool]
        seen = set()
        for bid, _, _ in entries:
            if bid in seen:
                raise DuplicateId(bid)
            seen.add(bid)

        n_jobs = max(1, int(self.n_jobs or 1))
        if n_jobs > 1 and len(entries) > n_jobs:
            size = -(-len(entries) // n_jobs)
            chunks = [entries[i:i + size] for i in range(0, len(entries), size)]
            with ThreadPoolExecutor(n_jobs) as ex:
                counts = [c for part in ex.map(_count, chunks) for c in part]
        else:
            counts = _count(entries)

        postings: Dict[str, List[Tuple[str, int]]] = {}
        doc_len: Dict[str, int] = {}
        kinds: Dict[str, str] = {}
        for (bid, toks, kind), tf in zip(entries, counts):
            doc_len[bid] = len(toks)
            kinds[bid] = kind
            for term, n in tf.items():
                postings.setdefault(term, []).append((bid, n))
        self._set_state(postings, doc_len, kinds)
        return self

    def _set_state(self, postings, doc_len, kinds):
        self.postings_ = postings
        self.doc_len_ = doc_len
        self.kinds_ = kinds
        self.n_docs_ = len(doc_len)
        self.avg_doc_len_ = (sum(doc_len.values()) / self.n_docs_) if self.n_docs_ else 0.0
        self.df_ = {t: len(p) for t, p in postings.items()}
        self.tf_ = {t: dict(p) for t, p in postings.items()}

    # ----------------------------------------------------------- scoring

    def idf(self, term: str) -> float:
        df = self.df_.get(term, 0)
        return math.log(1.0 + (self.n_docs_ - df + 0.5) / (df + 0.5))

    def _term_weight(self, tf: int, dl: int, idf: float) -> float:
        k1, b = self.k1, self.b
        norm = 1.0 - b + (b * dl / self.avg_doc_len_ if self.avg_doc_len_ > 0 else 0.0)
        return idf * tf * (k1 + 1.0) / (tf + k1 * norm)

    def score(self, query, block_id: str) -> float:
        """BM25 score of one block; repeated query terms count once."""
        check_is_fitted(self, "postings_")
        if block_id not in self.doc_len_:
            raise UnknownBlock(block_id)
        dl = self.doc_len_[block_id]
        parts = []
        for term in _query_terms(query):
            tf = self.tf_.get(term, {}).get(block_id, 0)
            if tf:
                parts.append(self._term_weight(tf, dl, self.idf(term)))
        return math.fsum(parts)

    def top_k(self, query, k: int, filter: BlockFilter = None) -> List[ScoredBlock]:
        """Top ``k`` blocks by score, ties by ascending id; zero scores dropped."""
        check_is_fitted(self, "postings_")
        if k < 0:
            raise ValueError("k must be non-negative")
        if k == 0:
            return []
        keep = self._predicate(filter)
        contrib: Dict[str, List[float]] = {}
        for term in _query_terms(query):
            plist = self.postings_.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for bid, tf in plist:
                if keep is not None and not keep(bid):
                    continue
                contrib.setdefault(bid, []).append(self._term_weight(tf, self.doc_len_[bid], idf))
        scored = [ScoredBlock(bid, math.fsum(c)) for bid, c in contrib.items()]
        scored = [s for s in scored if s.score > 0.0]
        scored.sort(key=rank_key)
        return scored[:k]

    def _predicate(self, filter: BlockFilter) -> Optional[Callable[[str], bool]]:
        if filter is None:
            return None
        if callable(filter):
            return filter
        kinds = {filter} if isinstance(filter, str) else set(filter)
        return lambda bid: self.kinds_.get(bid) in kinds

    # ---------------------------------------------------------- snapshot

    def to_snapshot(self) -> str:
        check_is_fitted(self, "postings_")
        body = {
            "params": {"k1": self.k1, "b": self.b},
            "N_docs": self.n_docs_,
            "avg_doc_len": self.avg_doc_len_,
            "doc_len": self.doc_len_,
            "kinds": self.kinds_,
            "postings": {t: [[bid, tf] for bid, tf in p] for t, p in self.postings_.items()},
        }
        return SNAPSHOT_HEADER + "\n" + json.dumps(body, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def from_snapshot(cls, data: str) -> "Bm25Index":
        header, _, body = data.partition("\n")
        if header.strip() != SNAPSHOT_HEADER:
            raise SnapshotError(f"unsupported index snapshot header {header.strip()!r}")
        try:
            obj = json.loads(body)
            idx = cls(k1=float(obj["params"]["k1"]), b=float(obj["params"]["b"]))
            postings = {t: [(bid, int(tf)) for bid, tf in p] for t, p in obj["postings"].items()}
            doc_len = {k: int(v) for k, v in obj["doc_len"].items()}
            kinds = obj.get("kinds") or {k: "block" for k in doc_len}
        except (ValueError, KeyError, TypeError) as exc:
            raise SnapshotError(f"corrupt index snapshot: {exc}") from None
        Bm25Params(idx.k1, idx.b)
        idx._set_state(postings, doc_len, kinds)
        if idx.n_docs_ != obj["N_docs"]:
            raise SnapshotError("N_docs does not match doc_len map")
        return idx

    def save(self, path) -> None:
        Path(path).write_text(self.to_snapshot(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Bm25Index":
        return cls.from_snapshot(Path(path).read_text(encoding="utf-8"))


def _query_terms(query) -> List[str]:
    if isinstance(query, str):
        query = tokenize(query)
    toks = query.tokens if isinstance(query, TokenSeq) else tuple(query)
    return list(dict.fromkeys(toks))


# Functional surface ------------------------------------------------------


def build_index(pool, params: Bm25Params = Bm25Params(), n_jobs: int = 1) -> Bm25Index:
    return Bm25Index(k1=params.k1, b=params.b, n_jobs=n_jobs).fit(pool)


def bm25_score(idx: Bm25Index, query, block_id: str) -> float:
    return idx.score(query, block_id)


def top_k(idx: Bm25Index, query, k: int, filter: BlockFilter = None) -> List[ScoredBlock]:
    return idx.top_k(query, k, filter)
