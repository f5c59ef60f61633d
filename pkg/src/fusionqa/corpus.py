"""Corpus data model: passages, tables, table segments and fused blocks.

A table is decomposed into one :class:`TableSegment` per row. Each segment
carries the headers, the table metadata, an English ordinal for its row
position and per-cell column max/min markers. Passages, segments and fused
blocks all expose ``id``, ``kind`` and a cached flattened ``flat`` TokenSeq,
which is what the index, encoders and readers consume.
"""
from __future__ import annotations

import json
import logging
import re
import unicodedata
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

from .textproc import TokenSeq, concat, tokenize

logger = logging.getLogger(__name__)

MAX, MIN, NONE = "MAX", "MIN", "NONE"
MARKER_TOKENS = {MAX: "[max]", MIN: "[min]"}
SEP_TOKEN = "[sep]"
# Rendered between fields; it yields no tokens but stops reader spans.
FIELD_SEP = " | "
NUMERIC_FRACTION = 0.8

SEGMENT, PASSAGE, FUSED = "segment", "passage", "fused"


class CorpusError(Exception):
    """Base class for data errors raised while building or loading pools."""


class ParseError(CorpusError):
    def __init__(self, line: int, reason: str, path: Optional[str] = None):
        self.line = line
        self.reason = reason
        self.path = path
        where = f"{path}:{line}" if path else f"line {line}"
        super().__init__(f"{where}: {reason}")


class DuplicateId(CorpusError):
    def __init__(self, id: str):
        self.id = id
        super().__init__(f"duplicate id {id!r}")


class DanglingLink(CorpusError):
    def __init__(self, segment_id: str, passage_id: str):
        self.segment_id = segment_id
        self.passage_id = passage_id
        super().__init__(f"segment {segment_id!r} links to unknown passage {passage_id!r}")


class MalformedTable(CorpusError):
    pass


_SENT_BOUNDARY = re.compile(r"(?<=[.!?])\s+(?=[A-Z])")


def split_sentences(text: str) -> List[str]:
    """Split on ``.``, ``!`` or ``?`` followed by whitespace and an uppercase letter."""
    parts = [p.strip() for p in _SENT_BOUNDARY.split(text.strip())]
    parts = [p for p in parts if p]
    return parts or [text.strip()]


@dataclass(frozen=True)
class Passage:
    id: str
    title: str
    text: str
    sentences: Tuple[str, ...] = ()

    kind = PASSAGE

    def __post_init__(self):
        if not self.sentences:
            object.__setattr__(self, "sentences", tuple(split_sentences(self.text)))
        elif "".join("".join(self.sentences).split()) != "".join(self.text.split()):
            raise ValueError(f"sentences of passage {self.id!r} do not concatenate to its text")

    @cached_property
    def flat(self) -> TokenSeq:
        return flatten_passage(self)


@dataclass(frozen=True)
class Table:
    id: str
    page_title: str
    section_title: str
    section_text: str
    headers: Tuple[str, ...]
    rows: Tuple[Tuple[str, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "headers", tuple(self.headers))
        object.__setattr__(self, "rows", tuple(tuple(r) for r in self.rows))


@dataclass(frozen=True)
class TableSegment:
    id: str
    table_id: str
    row_index: int
    header: Tuple[str, ...]
    cells: Tuple[str, ...]
    page_title: str = ""
    section_title: str = ""
    section_text: str = ""
    ordinal_token: str = ""
    extrema_flags: Tuple[str, ...] = ()

    kind = SEGMENT

    def __post_init__(self):
        if len(self.cells) != len(self.header):
            raise MalformedTable(f"segment {self.id!r}: {len(self.cells)} cells for {len(self.header)} headers")
        if not self.extrema_flags:
            object.__setattr__(self, "extrema_flags", (NONE,) * len(self.cells))

    @property
    def metadata(self) -> Dict[str, str]:
        return {
            "page_title": self.page_title,
            "section_title": self.section_title,
            "section_text": self.section_text,
        }

    @cached_property
    def flat(self) -> TokenSeq:
        return flatten_segment(self)


@dataclass(frozen=True)
class FusedBlock:
    """A table segment grouped with its linked passages; keyed by segment id."""

    segment: TableSegment
    passages: Tuple[Passage, ...] = ()

    kind = FUSED

    def __post_init__(self):
        object.__setattr__(self, "passages", tuple(self.passages))
        ids = [p.id for p in self.passages]
        if len(set(ids)) != len(ids):
            raise ValueError(f"fused block {self.id!r} repeats a passage")

    @property
    def id(self) -> str:
        return self.segment.id

    @property
    def passage_ids(self) -> Tuple[str, ...]:
        return tuple(p.id for p in self.passages)

    @cached_property
    def flat(self) -> TokenSeq:
        return flatten_fused(self)


Block = Union[TableSegment, Passage, FusedBlock]
GoldLinks = Dict[str, Tuple[str, ...]]


def ordinal(n: int) -> str:
    if n > 20:
        return f"{n}th"
    suffix = {1: "st", 2: "nd", 3: "rd"}.get(n, "th")
    return f"{n}{suffix}"


_NUM = re.compile(r"[+-]?(?:\d+(?:\.\d*)?|\.\d+)")


def parse_number(cell: str) -> Optional[float]:
    """Parse a decimal after stripping commas, ``%``, currency symbols and spaces."""
    s = "".join(ch for ch in cell if ch not in ",%" and unicodedata.category(ch) != "Sc")
    s = s.strip()
    if not _NUM.fullmatch(s):
        return None
    return float(s)


def column_extrema(values: Sequence[str]) -> List[str]:
    """MAX/MIN/NONE flag per cell; NONE everywhere for non-numeric columns."""
    flags = [NONE] * len(values)
    nonempty = [i for i, v in enumerate(values) if v.strip()]
    parsed = {i: parse_number(values[i]) for i in nonempty}
    parsed = {i: x for i, x in parsed.items() if x is not None}
    if not nonempty or len(parsed) < NUMERIC_FRACTION * len(nonempty):
        return flags
    hi, lo = max(parsed.values()), min(parsed.values())
    if hi == lo:
        return flags
    for i, x in parsed.items():
        if x == hi:
            flags[i] = MAX
        elif x == lo:
            flags[i] = MIN
    return flags


def segment_table(t: Table) -> List[TableSegment]:
    width = len(t.headers)
    for i, row in enumerate(t.rows):
        if len(row) != width:
            raise MalformedTable(f"table {t.id!r} row {i} has {len(row)} cells, expected {width}")
    per_col = [column_extrema([row[j] for row in t.rows]) for j in range(width)]
    return [
        TableSegment(
            id=f"{t.id}#{i}",
            table_id=t.id,
            row_index=i,
            header=t.headers,
            cells=row,
            page_title=t.page_title,
            section_title=t.section_title,
            section_text=t.section_text,
            ordinal_token=ordinal(i + 1),
            extrema_flags=tuple(per_col[j][i] for j in range(width)),
        )
        for i, row in enumerate(t.rows)
    ]


def flatten_segment(s: TableSegment) -> TokenSeq:
    parts: List[Union[TokenSeq, str]] = [
        tokenize(s.page_title),
        tokenize(s.section_title),
        tokenize(s.section_text),
        tokenize(s.ordinal_token),
    ]
    for head, cell, flag in zip(s.header, s.cells, s.extrema_flags):
        parts.append(tokenize(head))
        parts.append(tokenize(cell))
        if flag in MARKER_TOKENS:
            parts.append(MARKER_TOKENS[flag])
    return concat(parts, FIELD_SEP)


def flatten_passage(p: Passage) -> TokenSeq:
    return concat([tokenize(p.title), tokenize(p.text)], FIELD_SEP)


def flatten_fused(f: FusedBlock) -> TokenSeq:
    parts: List[Union[TokenSeq, str]] = [f.segment.flat]
    for p in f.passages:
        parts.extend([SEP_TOKEN, p.flat])
    return concat(parts)


def flatten(block: Block) -> TokenSeq:
    return block.flat


# --------------------------------------------------------------------- I/O


@dataclass
class CorpusPaths:
    passages: Optional[Path] = None
    tables: Optional[Path] = None
    links: Optional[Path] = None

    @classmethod
    def from_dir(cls, root) -> "CorpusPaths":
        root = Path(root)
        links = root / "links.jsonl"
        return cls(root / "passages.jsonl", root / "tables.jsonl", links if links.exists() else None)


@dataclass
class Corpus:
    tables: Dict[str, Table] = field(default_factory=dict)
    segments: Dict[str, TableSegment] = field(default_factory=dict)
    passages: Dict[str, Passage] = field(default_factory=dict)
    links: GoldLinks = field(default_factory=dict)

    def blocks(self) -> Dict[str, Block]:
        """Full candidate pool: segments and passages, keyed by id."""
        pool: Dict[str, Block] = {}
        for b in list(self.segments.values()) + list(self.passages.values()):
            if b.id in pool:
                raise DuplicateId(b.id)
            pool[b.id] = b
        return pool

    def stats(self) -> Dict[str, int]:
        return {
            "tables": len(self.tables),
            "segments": len(self.segments),
            "passages": len(self.passages),
            "linked_segments": len(self.links),
            "links": sum(len(v) for v in self.links.values()),
        }


def read_jsonl(path) -> Iterator[Tuple[int, dict]]:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, f"invalid JSON: {exc.msg}", str(path)) from None
            if not isinstance(obj, dict):
                raise ParseError(lineno, "expected a JSON object", str(path))
            yield lineno, obj


def write_jsonl(path, records: Iterable[dict]) -> None:
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def _require(obj: dict, key: str, kind, lineno: int, path) -> object:
    if key not in obj:
        raise ParseError(lineno, f"missing field {key!r}", str(path))
    val = obj[key]
    if not isinstance(val, kind):
        raise ParseError(lineno, f"field {key!r} has wrong type", str(path))
    return val


def _str_list(val, key, lineno, path) -> List[str]:
    if not all(isinstance(x, str) for x in val):
        raise ParseError(lineno, f"field {key!r} must hold strings", str(path))
    return list(val)


def load_passages(path) -> Dict[str, Passage]:
    out: Dict[str, Passage] = {}
    for lineno, obj in read_jsonl(path):
        pid = _require(obj, "id", str, lineno, path)
        title = _require(obj, "title", str, lineno, path)
        text = _require(obj, "text", str, lineno, path)
        sents: Tuple[str, ...] = ()
        if obj.get("sentences") is not None:
            sents = tuple(_str_list(_require(obj, "sentences", list, lineno, path), "sentences", lineno, path))
        if pid in out:
            raise DuplicateId(pid)
        try:
            out[pid] = Passage(pid, title, text, sents)
        except ValueError as exc:
            raise ParseError(lineno, str(exc), str(path)) from None
    return out


def load_tables(path) -> Dict[str, Table]:
    out: Dict[str, Table] = {}
    for lineno, obj in read_jsonl(path):
        tid = _require(obj, "id", str, lineno, path)
        meta = [_require(obj, k, str, lineno, path) for k in ("page_title", "section_title", "section_text")]
        headers = _str_list(_require(obj, "headers", list, lineno, path), "headers", lineno, path)
        rows = _require(obj, "rows", list, lineno, path)
        for r in rows:
            if not isinstance(r, list):
                raise ParseError(lineno, "each row must be a list", str(path))
            _str_list(r, "rows", lineno, path)
            if len(r) != len(headers):
                raise ParseError(lineno, f"row width {len(r)} does not match {len(headers)} headers", str(path))
        if tid in out:
            raise DuplicateId(tid)
        out[tid] = Table(tid, *meta, tuple(headers), tuple(tuple(r) for r in rows))
    return out


def load_links(path) -> GoldLinks:
    out: GoldLinks = {}
    for lineno, obj in read_jsonl(path):
        sid = _require(obj, "segment_id", str, lineno, path)
        pids = _str_list(_require(obj, "passage_ids", list, lineno, path), "passage_ids", lineno, path)
        if sid in out:
            raise DuplicateId(sid)
        out[sid] = tuple(dict.fromkeys(pids))
    return out


def load_corpus(paths: CorpusPaths) -> Corpus:
    corpus = Corpus()
    if paths.passages is not None:
        corpus.passages = load_passages(paths.passages)
    if paths.tables is not None:
        corpus.tables = load_tables(paths.tables)
    for t in corpus.tables.values():
        for seg in segment_table(t):
            if seg.id in corpus.segments:
                raise DuplicateId(seg.id)
            corpus.segments[seg.id] = seg
    overlap = corpus.segments.keys() & corpus.passages.keys()
    if overlap:
        raise DuplicateId(sorted(overlap)[0])
    if paths.links is not None:
        links = load_links(paths.links)
        check_links(links, corpus.segments, corpus.passages)
        corpus.links = links
    logger.info("loaded corpus: %s", corpus.stats())
    return corpus


def check_links(links: Mapping[str, Iterable[str]], segments: Mapping[str, object], passages: Mapping[str, object]) -> None:
    for sid, pids in links.items():
        for pid in pids:
            if sid not in segments or pid not in passages:
                raise DanglingLink(sid, pid)
        if sid not in segments:
            raise DanglingLink(sid, "")


def passage_record(p: Passage) -> dict:
    return {"id": p.id, "title": p.title, "text": p.text, "sentences": list(p.sentences)}


def table_record(t: Table) -> dict:
    return {
        "id": t.id,
        "page_title": t.page_title,
        "section_title": t.section_title,
        "section_text": t.section_text,
        "headers": list(t.headers),
        "rows": [list(r) for r in t.rows],
    }


def save_corpus(corpus: Corpus, root) -> CorpusPaths:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    paths = CorpusPaths(root / "passages.jsonl", root / "tables.jsonl", root / "links.jsonl")
    write_jsonl(paths.passages, (passage_record(p) for p in corpus.passages.values()))
    write_jsonl(paths.tables, (table_record(t) for t in corpus.tables.values()))
    write_jsonl(paths.links, ({"segment_id": s, "passage_ids": list(p)} for s, p in corpus.links.items()))
    return paths
