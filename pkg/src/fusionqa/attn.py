"""Global-local sparse attention for a sequence of concatenated blocks.

Node layout: local tokens are nodes ``0 .. N-1``; block ``b`` owns one global
node ``N + b``. Edges are directed (row ``i`` attends column ``j``):

* local -> local:   same block and ``|i - j| <= radius``
* local -> global:  own global (``"own"``) or every global (``"all"``)
* global -> local:  every token of its own block
* global -> global: every global

The mask is stored in CSR form (``indptr``/``indices``, sorted per row) and
the kernel only touches stored pairs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .textproc import tokenize

OWN, ALL = "own", "all"


class InvalidPartition(ValueError):
    pass


class ShapeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class SparseAttentionConfig:
    N: int
    block_bounds: Tuple[Tuple[int, int], ...]
    radius: int
    local_to_global: str = ALL

    def __post_init__(self):
        object.__setattr__(self, "block_bounds", tuple((int(s), int(e)) for s, e in self.block_bounds))
        if self.radius < 0:
            raise InvalidPartition("radius must be >= 0")
        if self.local_to_global not in (OWN, ALL):
            raise InvalidPartition(f"local_to_global must be 'own' or 'all', got {self.local_to_global!r}")
        pos = 0
        for s, e in self.block_bounds:
            if s != pos or e <= s:
                raise InvalidPartition(f"block ({s}, {e}) breaks the partition at {pos}")
            pos = e
        if pos != self.N:
            raise InvalidPartition(f"blocks cover [0, {pos}) but N = {self.N}")

    @property
    def K(self) -> int:
        return len(self.block_bounds)

    @classmethod
    def from_lengths(cls, lengths: Sequence[int], radius: int, local_to_global: str = ALL) -> "SparseAttentionConfig":
        bounds, pos = [], 0
        for n in lengths:
            bounds.append((pos, pos + n))
            pos += n
        return cls(pos, tuple(bounds), radius, local_to_global)

    @classmethod
    def uniform(cls, n: int, block_size: int, radius: int, local_to_global: str = ALL) -> "SparseAttentionConfig":
        """Blocks of ``block_size`` tokens; the last block takes the remainder."""
        if block_size < 1:
            raise InvalidPartition("block_size must be >= 1")
        sizes = [block_size] * (n // block_size)
        if n % block_size:
            sizes.append(n % block_size)
        return cls.from_lengths(sizes, radius, local_to_global)


@dataclass(frozen=True, eq=False)
class AttentionMask:
    n_local: int
    n_global: int
    indptr: np.ndarray
    indices: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.n_local + self.n_global

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def to_sparse(self) -> sp.csr_matrix:
        data = np.ones(len(self.indices), dtype=np.float32)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n_nodes, self.n_nodes))

    def to_dense(self) -> np.ndarray:
        return self.to_sparse().toarray() > 0


def build_mask(cfg: SparseAttentionConfig) -> AttentionMask:
    N, K, R = cfg.N, cfg.K, cfg.radius
    all_globals = np.arange(N, N + K)
    rows: List[np.ndarray] = [None] * (N + K)  # type: ignore[list-item]
    for b, (s, e) in enumerate(cfg.block_bounds):
        g = np.array([N + b]) if cfg.local_to_global == OWN else all_globals
        for i in range(s, e):
            rows[i] = np.concatenate([np.arange(max(s, i - R), min(e, i + R + 1)), g])
        rows[N + b] = np.concatenate([np.arange(s, e), all_globals])
    lens = np.fromiter((len(r) for r in rows), dtype=np.int64, count=N + K)
    indptr = np.zeros(N + K + 1, dtype=np.int64)
    np.cumsum(lens, out=indptr[1:])
    indices = np.concatenate(rows).astype(np.int64) if rows else np.zeros(0, dtype=np.int64)
    return AttentionMask(N, K, indptr, indices)


def edge_count(mask: AttentionMask) -> Dict[str, int]:
    N = mask.n_local
    row = np.repeat(np.arange(mask.n_nodes), np.diff(mask.indptr))
    col_local = mask.indices < N
    row_local = row < N
    counts = {
        "local_local": int(np.sum(row_local & col_local)),
        "local_global": int(np.sum(row_local & ~col_local)),
        "global_local": int(np.sum(~row_local & col_local)),
        "global_global": int(np.sum(~row_local & ~col_local)),
    }
    counts["total"] = sum(counts.values())
    return counts


def _check_io(Q, K, V, mask: AttentionMask):
    Q, K, V = (np.asarray(x, dtype=np.float64) for x in (Q, K, V))
    n = mask.n_nodes
    if Q.ndim != 2 or Q.shape[0] != n or K.shape != Q.shape or V.shape[0] != n or V.ndim != 2:
        raise ShapeMismatch(f"Q {Q.shape}, K {K.shape}, V {V.shape} do not fit a {n}-node mask")
    if Q.shape[1] < 1:
        raise ShapeMismatch("feature dim must be >= 1")
    return Q, K, V


def sparse_attention(Q, K, V, mask: AttentionMask, chunk_edges: int = 1 << 16) -> np.ndarray:
    """Scaled softmax attention restricted to the mask's stored pairs."""
    Q, K, V = _check_io(Q, K, V, mask)
    n, d = Q.shape
    out = np.zeros((n, V.shape[1]), dtype=np.float64)
    scale = 1.0 / math.sqrt(d)
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and mask.indptr[stop + 1] - mask.indptr[start] <= chunk_edges:
            stop += 1
        lo, hi = mask.indptr[start], mask.indptr[stop]
        cols = mask.indices[lo:hi]
        counts = np.diff(mask.indptr[start:stop + 1])
        rows = np.repeat(np.arange(start, stop), counts)
        offsets = mask.indptr[start:stop] - lo
        logits = np.einsum("ij,ij->i", Q[rows], K[cols]) * scale
        peak = np.maximum.reduceat(logits, offsets)
        w = np.exp(logits - np.repeat(peak, counts))
        w /= np.repeat(np.add.reduceat(w, offsets), counts)
        out[start:stop] = np.add.reduceat(w[:, None] * V[cols], offsets, axis=0)
        start = stop
    return out


def dense_masked_attention(Q, K, V, mask: AttentionMask) -> np.ndarray:
    """Reference O(n^2) attention: full logits with disallowed pairs at -inf."""
    Q, K, V = _check_io(Q, K, V, mask)
    logits = (Q @ K.T) / math.sqrt(Q.shape[1])
    logits = np.where(mask.to_dense(), logits, -np.inf)
    logits -= logits.max(axis=1, keepdims=True)
    w = np.exp(logits)
    w /= w.sum(axis=1, keepdims=True)
    return w @ V


def reachability(mask: AttentionMask, layers: int) -> np.ndarray:
    """Boolean (N, N): entry (i, j) is True iff token j reaches token i
    within ``layers`` stacked attention applications (paths may pass
    through global nodes)."""
    if layers < 1:
        raise ValueError("layers must be >= 1")
    A = mask.to_sparse()
    reach = A.toarray() > 0
    for _ in range(layers - 1):
        reach = (A @ reach.astype(np.float32)) > 0
    N = mask.n_local
    return reach[:N, :N]


def reach_thresholds(mask: AttentionMask, block_bounds, max_layers: int = 6) -> Dict[str, Optional[int]]:
    """Smallest layer count giving any / full cross-block reachability."""
    N = mask.n_local
    block_of = np.zeros(N, dtype=np.int64)
    for b, (s, e) in enumerate(block_bounds):
        block_of[s:e] = b
    cross = block_of[:, None] != block_of[None, :]
    first_any = first_all = None
    for L in range(1, max_layers + 1):
        R = reachability(mask, L)
        if first_any is None and np.any(R & cross):
            first_any = L
        if R.all():
            first_all = L
            break
    return {"first_cross_block": first_any, "all_pairs": first_all}


# ------------------------------------------------------------ span readers


class EmptyRanking(ValueError):
    pass


class BudgetExceeded(ValueError):
    pass


class ReaderAnswer(NamedTuple):
    answer: str
    block_id: Optional[str]
    confidence: float


MARKERS = frozenset({"[sep]", "[max]", "[min]"})
STOPWORDS = frozenset(
    "a an the of in on at by for to from with and or nor but is was are were be been being "
    "as that which who whom whose what when where why how it its he she they them his her "
    "their this these those not no into than then there".split()
)


class LexicalSpanScorer:
    """Built-in span scorer used when no trained reader is plugged in.

    A candidate span (at most ``max_span`` tokens, no question or marker
    tokens, not crossing a field or punctuation break, not starting or
    ending on a stopword) scores the idf-weighted share of question terms found within
    ``window`` tokens of it, each discounted linearly by its distance.
    Scores lie in [0, 1]. Call :meth:`fit` on the candidate blocks so
    single- and cross-block reading share one idf table.
    """

    def __init__(self, max_span: int = 10, window: int = 20):
        self.max_span = max_span
        self.window = window
        self.idf_: Dict[str, float] = {}
        self.n_: int = 0

    def fit(self, contexts: Sequence[Sequence[str]]) -> "LexicalSpanScorer":
        df: Dict[str, int] = {}
        for toks in contexts:
            for t in set(toks):
                df[t] = df.get(t, 0) + 1
        self.n_ = len(contexts)
        self.idf_ = {t: math.log(1.0 + (self.n_ - c + 0.5) / (c + 0.5)) for t, c in df.items()}
        return self

    def best_span(self, question: Sequence[str], context: Sequence[str], start: int = 0, stop: Optional[int] = None,
                  breaks: Optional[Sequence[bool]] = None) -> Tuple[float, int, int]:
        """Best ``(score, s, e)`` with ``start <= s < e <= stop``; ties prefer
        shorter, then earlier spans. Returns ``(0.0, start, start)`` if none scores."""
        stop = len(context) if stop is None else stop
        weights = {t: self.idf_[t] for t in dict.fromkeys(question) if t in self.idf_}
        total = math.fsum(weights.values())
        best = (0.0, start, start)
        if total <= 0:
            return best
        W = self.window
        positions: Dict[str, List[int]] = {}
        for p in range(max(0, start - W), min(len(context), stop + W)):
            if context[p] in weights:
                positions.setdefault(context[p], []).append(p)
        blocked = [t in weights or t in MARKERS for t in context]
        for s in range(start, stop):
            if context[s] in STOPWORDS:
                continue
            for e in range(s + 1, min(stop, s + self.max_span) + 1):
                if blocked[e - 1] or (breaks is not None and e - 1 > s and breaks[e - 1]):
                    break
                if context[e - 1] in STOPWORDS:
                    continue
                acc = []
                for t, ps in positions.items():
                    dist = min((s - p) if p < s else (p - e + 1) for p in ps)
                    if dist <= W:
                        acc.append(weights[t] * (1.0 - dist / (W + 1)))
                score = math.fsum(acc) / total
                if score > best[0] or (score == best[0] > 0 and e - s < best[2] - best[1]):
                    best = (score, s, e)
        return best


def _fitted_scorer(scorer, contexts):
    if scorer is None:
        scorer = LexicalSpanScorer()
    if not getattr(scorer, "idf_", None):
        scorer.fit(contexts)
    return scorer


def select_span_single_block(question, ranked, texts, scorer: Optional[LexicalSpanScorer] = None) -> ReaderAnswer:
    """Read each block alone; confidence = retrieval score times the block's
    best span score. Retrieval scores already within [0, 1] are used as-is;
    unbounded ones (BM25) are min-max normalized over the ranking first."""
    if not ranked:
        raise EmptyRanking("no blocks to read")
    q = tokenize(question).tokens if isinstance(question, str) else tuple(question)
    scorer = _fitted_scorer(scorer, [texts[r.block_id].tokens for r in ranked])
    scores = [r.score for r in ranked]
    lo, hi = min(scores), max(scores)
    if 0.0 <= lo and hi <= 1.0:
        lo, hi = 0.0, 1.0  # already probability-like: use as-is
    best = ReaderAnswer("", None, 0.0)
    for r in ranked:
        seq = texts[r.block_id]
        f_read, s, e = scorer.best_span(q, seq.tokens, breaks=seq.breaks())
        retr = (r.score - lo) / (hi - lo) if hi > lo else 1.0
        if f_read <= 0:
            continue
        conf = retr * f_read
        if best.block_id is None or conf > best.confidence:
            best = ReaderAnswer(seq.surface(s, e), r.block_id, conf)
    return best


def select_span_cross_block(question, block_ids: Sequence[str], texts, max_tokens: int = 4096, radius: int = 84,
                            local_to_global: str = ALL, scorer: Optional[LexicalSpanScorer] = None) -> ReaderAnswer:
    """Read the concatenation of the truncated blocks as one sequence.

    Spans stay inside a block, but their scoring context runs across block
    boundaries. The concatenation must fit ``max_tokens``.
    """
    if not block_ids:
        return ReaderAnswer("", None, 0.0)
    q = tokenize(question).tokens if isinstance(question, str) else tuple(question)
    seqs = [texts[b] for b in block_ids]
    cfg = SparseAttentionConfig.from_lengths([max(1, len(s)) for s in seqs], radius, local_to_global)
    if cfg.N > max_tokens:
        raise BudgetExceeded(f"{cfg.N} tokens exceed the {max_tokens}-token reader window")
    scorer = _fitted_scorer(scorer, [s.tokens for s in seqs])
    context: List[str] = []
    breaks: List[bool] = []
    for s in seqs:
        context.extend(s.tokens or ("",))
        breaks.extend(s.breaks() or (True,))
    best = ReaderAnswer("", None, 0.0)
    for bid, seq, (lo, hi) in zip(block_ids, seqs, cfg.block_bounds):
        score, s, e = scorer.best_span(q, context, lo, lo + len(seq), breaks)
        if score > best.confidence:
            best = ReaderAnswer(seq.surface(s - lo, e - lo), bid, score)
    return best
