"""Fused block construction and inverse-cloze pseudo-query generation."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .corpus import DanglingLink, FusedBlock, GoldLinks, Passage, TableSegment
from .linker import LinkResult

RNG_NAME = "numpy.PCG64"
SEED_MASK = (1 << 64) - 1

__all__ = [
    "FusedBlock",
    "IctPair",
    "IctGenerator",
    "build_fused_pool",
    "droppable_words",
    "make_ict_pair",
    "generate_ict_dataset",
]


@dataclass(frozen=True)
class IctPair:
    pseudo_query: str
    target_block_id: str
    seed: int
    fallback: bool = False  # no fused passage: query is the corrupted segment alone

    def to_record(self) -> dict:
        return {
            "pseudo_query": self.pseudo_query,
            "target_block_id": self.target_block_id,
            "seed": self.seed,
            "fallback": self.fallback,
            "rng": RNG_NAME,
        }


def _linked_ids(v) -> Sequence[str]:
    return v.passage_ids if isinstance(v, LinkResult) else tuple(v)


def build_fused_pool(
    segments: Mapping[str, TableSegment],
    passages: Mapping[str, Passage],
    links: Mapping[str, Union[LinkResult, Iterable[str]]],
) -> Dict[str, FusedBlock]:
    """One fused block per segment; passages kept in link order."""
    for sid, v in links.items():
        for pid in _linked_ids(v):
            if sid not in segments or pid not in passages:
                raise DanglingLink(sid, pid)
    pool: Dict[str, FusedBlock] = {}
    for sid, seg in segments.items():
        pids = dict.fromkeys(_linked_ids(links.get(sid, ())))
        pool[sid] = FusedBlock(seg, tuple(passages[p] for p in pids))
    return pool


def droppable_words(s: TableSegment) -> List[str]:
    """Metadata words then cell words; headers are never dropped."""
    words: List[str] = []
    for text in (s.page_title, s.section_title, s.section_text, *s.cells):
        words.extend(text.split())
    return words


def make_ict_pair(f: FusedBlock, seed: int) -> IctPair:
    seed &= SEED_MASK
    rng = np.random.Generator(np.random.PCG64(seed))
    words = droppable_words(f.segment)
    drop = set(rng.choice(len(words), size=len(words) // 2, replace=False).tolist()) if words else set()
    kept = [w for i, w in enumerate(words) if i not in drop]

    candidates = [p for p in f.passages if p.sentences]
    if not candidates:
        return IctPair(" ".join(kept), f.id, seed, fallback=True)
    passage = candidates[int(rng.integers(len(candidates)))]
    sentence = passage.sentences[int(rng.integers(len(passage.sentences)))]
    query = " ".join(x for x in (" ".join(kept), sentence) if x)
    return IctPair(query, f.id, seed)


def generate_ict_dataset(pool: Mapping[str, FusedBlock], pairs_per_block: int, base_seed: int) -> List[IctPair]:
    if pairs_per_block < 1:
        raise ValueError("pairs_per_block must be >= 1")
    out: List[IctPair] = []
    for rank, bid in enumerate(sorted(pool)):
        for j in range(pairs_per_block):
            out.append(make_ict_pair(pool[bid], base_seed + rank * pairs_per_block + j))
    return out


class IctGenerator(TransformerMixin, BaseEstimator):
    """Stateless transformer: fused pool -> list of :class:`IctPair`."""

    def __init__(self, pairs_per_block: int = 1, seed: int = 0):
        self.pairs_per_block = pairs_per_block
        self.seed = seed

    def fit(self, pool=None, y=None):
        return self

    def transform(self, pool: Mapping[str, FusedBlock]) -> List[IctPair]:
        if not isinstance(pool, Mapping):
            pool = {b.id: b for b in pool}
        return generate_ict_dataset(pool, self.pairs_per_block, self.seed)
