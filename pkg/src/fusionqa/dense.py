"""Dual-encoder scoring substrate: embedding stores, exact search, in-batch loss.

No trained encoder ships here. Real model outputs can be loaded from the TSV
embedding format; :class:`HashedBowEncoder` is a deterministic stand-in.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .index import ScoredBlock, rank_key
from .textproc import tokenize


class DimMismatch(ValueError):
    pass


class EmbeddingStore:
    """Immutable id -> vector table backed by one float64 matrix."""

    def __init__(self, ids: Sequence[str], vectors, encoder_tag: str = "", dim: Optional[int] = None):
        mat = np.array(vectors, dtype=np.float64)
        if mat.size == 0 and not len(ids):
            mat = np.zeros((0, dim or 0))
        if mat.ndim != 2:
            raise ValueError("vectors must form a 2-D array")
        if dim is not None and mat.shape[1] != dim:
            raise DimMismatch(f"vectors have dim {mat.shape[1]}, expected {dim}")
        if len(ids) != mat.shape[0]:
            raise ValueError("one vector per id required")
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate ids in embedding store")
        if not np.all(np.isfinite(mat)):
            raise ValueError("embedding vectors must be finite")
        mat.setflags(write=False)
        self.ids = tuple(ids)
        self.matrix = mat
        self.dim = mat.shape[1]
        self.encoder_tag = encoder_tag
        self._row = {bid: i for i, bid in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, bid: str) -> bool:
        return bid in self._row

    def vector(self, bid: str) -> np.ndarray:
        return self.matrix[self._row[bid]]

    def save(self, path) -> None:
        with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(f"# dim={self.dim} encoder={self.encoder_tag}\n")
            for bid, row in zip(self.ids, self.matrix):
                fh.write(bid + "\t" + " ".join(repr(float(x)) for x in row) + "\n")

    @classmethod
    def load(cls, path) -> "EmbeddingStore":
        with Path(path).open(encoding="utf-8") as fh:
            header = fh.readline().strip()
            if not header.startswith("#"):
                raise ValueError(f"{path}: missing '# dim=<d> encoder=<tag>' header")
            meta = dict(kv.split("=", 1) for kv in header[1:].split() if "=" in kv)
            dim = int(meta["dim"])
            ids: List[str] = []
            rows: List[List[float]] = []
            for lineno, line in enumerate(fh, 2):
                line = line.rstrip("\n")
                if not line:
                    continue
                bid, _, floats = line.partition("\t")
                row = [float(x) for x in floats.split()]
                if len(row) != dim:
                    raise DimMismatch(f"{path}:{lineno}: {len(row)} values, expected {dim}")
                ids.append(bid)
                rows.append(row)
        return cls(ids, np.array(rows, dtype=np.float64).reshape(len(ids), dim), meta.get("encoder", ""), dim)


def _bucket(token: str, dim: int, seed: int) -> Tuple[int, float]:
    h = hashlib.blake2b(token.encode("utf-8"), digest_size=8, salt=seed.to_bytes(8, "little"))
    v = int.from_bytes(h.digest(), "little")
    return (v >> 1) % dim, (1.0 if v & 1 else -1.0)


def hashed_bow_encode(text: str, dim: int, seed: int = 0) -> np.ndarray:
    """L2-normalized signed bag-of-words counts hashed into ``dim`` buckets."""
    if dim < 1:
        raise ValueError("dim must be >= 1")
    vec = np.zeros(dim, dtype=np.float64)
    for tok in tokenize(text).tokens:
        i, sign = _bucket(tok, dim, seed & ((1 << 64) - 1))
        vec[i] += sign
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else vec


class HashedBowEncoder(TransformerMixin, BaseEstimator):
    """Stateless text -> vector encoder (``transform`` returns an (n, dim) array)."""

    def __init__(self, dim: int = 256, seed: int = 0):
        self.dim = dim
        self.seed = seed

    @property
    def tag(self) -> str:
        return f"hashed-bow:{self.seed}"

    def fit(self, X=None, y=None):
        return self

    def encode(self, text: str) -> np.ndarray:
        return hashed_bow_encode(text, self.dim, self.seed)

    def transform(self, X: Iterable[str]) -> np.ndarray:
        rows = [self.encode(t) for t in X]
        return np.vstack(rows) if rows else np.zeros((0, self.dim))

    def __call__(self, text: str) -> np.ndarray:
        return self.encode(text)


def dense_top_k(store: EmbeddingStore, query_vec, k: int, filter: Optional[Callable[[str], bool]] = None) -> List[ScoredBlock]:
    """Exact dot-product search; ties broken by ascending id."""
    q = np.asarray(query_vec, dtype=np.float64)
    if q.shape != (store.dim,):
        raise DimMismatch(f"query has shape {q.shape}, store dim is {store.dim}")
    if k <= 0 or not len(store):
        return []
    scores = store.matrix @ q
    hits = [ScoredBlock(bid, float(s)) for bid, s in zip(store.ids, scores) if filter is None or filter(bid)]
    hits.sort(key=rank_key)
    return hits[:k]


@dataclass
class BatchLoss:
    loss: float
    grad_q: np.ndarray
    grad_b: np.ndarray


def in_batch_loss(Q, P) -> BatchLoss:
    """Softmax cross-entropy where row i's positive is P[i] and the rest of
    the batch are negatives. Gradients are closed-form:
    dL/dS = (softmax(S) - I) / B, dL/dQ = dS @ P, dL/dP = dS.T @ Q.
    """
    Q = np.asarray(Q, dtype=np.float64)
    P = np.asarray(P, dtype=np.float64)
    if Q.ndim != 2 or Q.shape != P.shape:
        raise DimMismatch(f"Q {Q.shape} and P {P.shape} must be equal 2-D shapes")
    B = Q.shape[0]
    if B < 1:
        raise ValueError("batch must hold at least one pair")
    S = Q @ P.T
    m = S.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(S - m).sum(axis=1))
    loss = float(np.mean(lse - np.diag(S)))
    G = np.exp(S - lse[:, None])
    G[np.diag_indices(B)] -= 1.0
    G /= B
    return BatchLoss(max(loss, 0.0), G @ P, G.T @ Q)


class DenseRetriever(BaseEstimator):
    """Embed a block pool with an encoder and search it by dot product."""

    def __init__(self, encoder=None, dim: int = 256, seed: int = 0):
        self.encoder = encoder
        self.dim = dim
        self.seed = seed

    def _encoder(self):
        return self.encoder if self.encoder is not None else HashedBowEncoder(self.dim, self.seed)

    def fit(self, pool, y=None):
        enc = self._encoder()
        blocks = list(pool)
        texts = [b.flat.text for b in blocks]
        self.encoder_ = enc
        self.store_ = EmbeddingStore([b.id for b in blocks], enc.transform(texts).reshape(len(blocks), -1), getattr(enc, "tag", ""))
        return self

    def top_k(self, text: str, k: int, filter=None) -> List[ScoredBlock]:
        return dense_top_k(self.store_, self.encoder_.encode(text), k, filter)
