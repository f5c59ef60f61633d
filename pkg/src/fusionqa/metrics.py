"""Answer metrics (EM / token F1), HITS within a token budget, and reports."""
from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence

from .corpus import CorpusError, ParseError, read_jsonl
from .retrieve import RetrievalResult
from .textproc import answer_tokens, normalize_answer


class UnknownQid(CorpusError):
    def __init__(self, qid: str):
        self.qid = qid
        super().__init__(f"prediction for unknown question {qid!r}")


@dataclass(frozen=True)
class QAExample:
    qid: str
    question: str
    gold_answers: tuple
    gold_block_ids: frozenset = frozenset()

    def __post_init__(self):
        if not self.gold_answers:
            raise ValueError(f"question {self.qid!r} has no gold answer")


def em(pred: str, golds: Iterable[str]) -> int:
    p = normalize_answer(pred)
    return int(any(p == normalize_answer(g) for g in golds))


def _f1(pred: Sequence[str], gold: Sequence[str]) -> float:
    if not pred and not gold:
        return 1.0
    common = sum((Counter(pred) & Counter(gold)).values())
    if common == 0:
        return 0.0
    p = common / len(pred)
    r = common / len(gold)
    return 2 * p * r / (p + r)


def f1(pred: str, golds: Iterable[str]) -> float:
    """Multiset token F1 over normalized answers, max over golds."""
    ptoks = answer_tokens(pred)
    return max((_f1(ptoks, answer_tokens(g)) for g in golds), default=0.0)


def hits_at_budget(result: RetrievalResult, gold_block_ids: Iterable[str], budget: Optional[int] = None) -> int:
    if budget is not None and result.budget is not None and result.budget != budget:
        raise ValueError(f"result was truncated at {result.budget} tokens, not {budget}")
    if budget == 0:
        return 0
    gold = set(gold_block_ids)
    return int(any(b in gold for b in result.truncated_ids))


@dataclass
class EvalReport:
    per_question: Dict[str, Dict[str, float]] = field(default_factory=dict)
    EM: float = 0.0
    F1: float = 0.0
    HITS: float = 0.0
    budget: Optional[int] = None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "aggregates": {"EM": self.EM, "F1": self.F1, f"HITS@{self.budget}": self.HITS},
            "budget": self.budget,
            "config": self.config,
            "n_questions": len(self.per_question),
            "per_question": self.per_question,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        agg = d["aggregates"]
        return cls(
            per_question={k: dict(v) for k, v in d["per_question"].items()},
            EM=agg["EM"],
            F1=agg["F1"],
            HITS=agg[f"HITS@{d['budget']}"],
            budget=d["budget"],
            config=d.get("config", {}),
        )

    def summary(self) -> str:
        return f"EM {100 * self.EM:.1f} / F1 {100 * self.F1:.1f} / HITS@{self.budget} {100 * self.HITS:.1f} (n={len(self.per_question)})"


def run_eval(
    examples: Sequence[QAExample],
    predictions: Mapping[str, str],
    retrievals: Mapping[str, RetrievalResult],
    budget: Optional[int] = None,
    config: Optional[dict] = None,
) -> EvalReport:
    known = {ex.qid for ex in examples}
    for qid in predictions:
        if qid not in known:
            raise UnknownQid(qid)
    report = EvalReport(budget=budget, config=dict(config or {}))
    for ex in examples:
        pred = predictions.get(ex.qid)
        res = retrievals.get(ex.qid)
        report.per_question[ex.qid] = {
            "em": float(em(pred, ex.gold_answers)) if pred is not None else 0.0,
            "f1": f1(pred, ex.gold_answers) if pred is not None else 0.0,
            "hit": float(hits_at_budget(res, ex.gold_block_ids, budget)) if res is not None else 0.0,
        }
    n = len(report.per_question)
    if n:
        rows = report.per_question.values()
        report.EM = sum(r["em"] for r in rows) / n
        report.F1 = sum(r["f1"] for r in rows) / n
        report.HITS = sum(r["hit"] for r in rows) / n
    return report


def load_questions(path) -> List[QAExample]:
    out: List[QAExample] = []
    seen = set()
    for lineno, obj in read_jsonl(path):
        qid, question, answers = obj.get("qid"), obj.get("question"), obj.get("answers")
        if not isinstance(qid, str) or not isinstance(question, str):
            raise ParseError(lineno, "'qid' and 'question' must be strings", str(path))
        if not isinstance(answers, list) or not answers or not all(isinstance(a, str) for a in answers):
            raise ParseError(lineno, "'answers' must be a non-empty list of strings", str(path))
        if qid in seen:
            raise ParseError(lineno, f"duplicate qid {qid!r}", str(path))
        seen.add(qid)
        gold = obj.get("gold_block_ids") or []
        out.append(QAExample(qid, question, tuple(answers), frozenset(gold)))
    return out


def load_predictions(path) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for lineno, obj in read_jsonl(path):
        if not isinstance(obj.get("qid"), str) or not isinstance(obj.get("answer"), str):
            raise ParseError(lineno, "'qid' and 'answer' must be strings", str(path))
        out[obj["qid"]] = obj["answer"]
    return out


def load_retrievals(path) -> Dict[str, RetrievalResult]:
    out: Dict[str, RetrievalResult] = {}
    for lineno, obj in read_jsonl(path):
        if not isinstance(obj.get("qid"), str):
            raise ParseError(lineno, "'qid' must be a string", str(path))
        try:
            out[obj["qid"]] = RetrievalResult.from_record(obj)
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(lineno, f"bad retrieval record: {exc}", str(path)) from None
    return out
