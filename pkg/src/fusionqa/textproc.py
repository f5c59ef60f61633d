"""Tokenization and answer normalization shared by every other module.

Tokens are whitespace unigrams, lowercased, with leading/trailing Unicode
punctuation (P*) and symbols (S*) stripped. They double as the token-budget
unit for retrieval truncation.
"""
from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, List, Sequence, Tuple, Union

_WS = re.compile(r"\S+")
ARTICLES = frozenset({"a", "an", "the"})


def is_punct(ch: str) -> bool:
    return unicodedata.category(ch)[0] in ("P", "S")


@dataclass(frozen=True)
class TokenSeq:
    """Ordered tokens with (start, end) character offsets into ``text``."""

    tokens: Tuple[str, ...] = ()
    offsets: Tuple[Tuple[int, int], ...] = ()
    text: str = ""

    def __post_init__(self):
        if len(self.tokens) != len(self.offsets):
            raise ValueError("tokens and offsets differ in length")

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def breaks(self) -> Tuple[bool, ...]:
        """``breaks[i]`` is True when non-space text separates token i-1 from token i."""
        out = []
        prev = None
        for s, e in self.offsets:
            out.append(prev is None or not self.text[prev:s].isspace())
            prev = e
        return tuple(out)

    def surface(self, start: int, end: int) -> str:
        """Original text covered by tokens ``start .. end - 1``."""
        if start >= end:
            return ""
        return self.text[self.offsets[start][0]:self.offsets[end - 1][1]]


def tokenize(text: str) -> TokenSeq:
    tokens: List[str] = []
    offsets: List[Tuple[int, int]] = []
    for m in _WS.finditer(text):
        s, e = m.span()
        while s < e and is_punct(text[s]):
            s += 1
        while e > s and is_punct(text[e - 1]):
            e -= 1
        if s == e:
            continue
        tokens.append(text[s:e].lower())
        offsets.append((s, e))
    return TokenSeq(tuple(tokens), tuple(offsets), text)


def count_tokens(text: str) -> int:
    return len(tokenize(text).tokens)


def concat(parts: Iterable[Union[TokenSeq, str]], sep: str = " ") -> TokenSeq:
    """Join token sequences into one, with ``sep`` between non-empty parts.

    A plain ``str`` part is emitted verbatim as a single literal token (used
    for marker tokens such as ``[sep]`` that tokenize() would strip).
    """
    tokens: List[str] = []
    offsets: List[Tuple[int, int]] = []
    chunks: List[str] = []
    pos = 0
    for part in parts:
        if isinstance(part, str):
            part = TokenSeq((part,), ((0, len(part)),), part.upper())
        if not part.text:
            continue
        if chunks:
            chunks.append(sep)
            pos += len(sep)
        chunks.append(part.text)
        tokens.extend(part.tokens)
        offsets.extend((s + pos, e + pos) for s, e in part.offsets)
        pos += len(part.text)
    return TokenSeq(tuple(tokens), tuple(offsets), "".join(chunks))


def normalize_answer(text: str) -> str:
    """Lowercase, drop punctuation, drop whole-word articles, squash spaces."""
    text = text.lower()
    text = "".join(ch for ch in text if not is_punct(ch))
    return " ".join(w for w in text.split() if w not in ARTICLES)


def answer_tokens(text: str) -> Sequence[str]:
    return normalize_answer(text).split()
