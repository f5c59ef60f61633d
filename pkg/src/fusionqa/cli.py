"""Batch command-line front end.

Each subcommand reads and writes files so the stages can be chained::

    fusionqa ingest --passages P --tables T --links L --out corpus/
    fusionqa link --corpus corpus/ --queries baseline --out links.jsonl
    fusionqa fuse --corpus corpus/ --links links.jsonl --out fused.jsonl
    fusionqa retrieve --mode fusion-sparse --corpus corpus/ --fused fused.jsonl \\
        --questions questions.jsonl --out retrieval.jsonl
    fusionqa read --reader cross --corpus corpus/ --questions questions.jsonl \\
        --retrievals retrieval.jsonl --out predictions.jsonl
    fusionqa eval --questions questions.jsonl --predictions predictions.jsonl \\
        --retrievals retrieval.jsonl --out report.json

Exit status: 0 on success, 1 on usage errors, 2 on data errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .attn import (
    ALL,
    OWN,
    BudgetExceeded,
    EmptyRanking,
    LexicalSpanScorer,
    SparseAttentionConfig,
    build_mask,
    dense_masked_attention,
    edge_count,
    reach_thresholds,
    select_span_cross_block,
    select_span_single_block,
    sparse_attention,
)
from .corpus import (
    Corpus,
    CorpusError,
    CorpusPaths,
    FusedBlock,
    load_corpus,
    read_jsonl,
    save_corpus,
    write_jsonl,
    ParseError,
)
from .dense import DimMismatch, EmbeddingStore, HashedBowEncoder
from .fusion import build_fused_pool, generate_ict_dataset
from .index import Bm25Index, ScoredBlock, SnapshotError
from .linker import EntityLinker, eval_linking, load_augmented_queries
from .metrics import load_predictions, load_questions, load_retrievals, run_eval
from .retrieve import MODES, FusionRetriever, IterativeDenseRetriever, IterativeSparseRetriever
from .textproc import tokenize

logger = logging.getLogger("fusionqa")

# Execution-only flags: they never change outputs, so they stay out of config echoes.
_NOT_ECHOED = {"func", "threads", "quiet", "command"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _config(args) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_ECHOED}
    cfg["subcommand"] = args.command
    return cfg


def _write_meta(out: Path, args) -> None:
    Path(str(out) + ".meta.json").write_text(json.dumps({"config": _config(args), "version": __version__}, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _corpus(args) -> Corpus:
    return load_corpus(CorpusPaths.from_dir(args.corpus))


def _fused_pool(args, corpus: Corpus) -> Dict[str, FusedBlock]:
    links = {}
    for lineno, obj in read_jsonl(args.fused):
        sid, pids = obj.get("segment_id"), obj.get("passage_ids")
        if not isinstance(sid, str) or not isinstance(pids, list):
            raise ParseError(lineno, "fused record needs 'segment_id' and 'passage_ids'", str(args.fused))
        links[sid] = pids
    return build_fused_pool(corpus.segments, corpus.passages, links)


# ------------------------------------------------------------ subcommands


def cmd_ingest(args) -> int:
    corpus = load_corpus(CorpusPaths(args.passages, args.tables, args.links))
    if args.out:
        save_corpus(corpus, args.out)
    _emit({"config": _config(args), "stats": corpus.stats()})
    return 0


def cmd_link(args) -> int:
    corpus = _corpus(args)
    queries = None
    if args.queries == "file":
        if not args.queries_file:
            raise UsageError("--queries file requires --queries-file")
        queries = load_augmented_queries(args.queries_file, corpus.segments)
    linker = EntityLinker(args.per_query_k, args.threshold, args.k1, args.b, n_jobs=args.threads)
    pred = linker.fit(corpus.passages.values()).predict(corpus.segments.values(), queries)
    write_jsonl(args.out, (
        {"segment_id": r.segment_id, "passage_ids": list(r.passage_ids), "scores": [s for _, s in r.linked]}
        for r in pred.values()
    ))
    _write_meta(Path(args.out), args)
    out = {"config": _config(args), "segments": len(pred), "links": sum(len(r.linked) for r in pred.values())}
    if corpus.links:
        rep = eval_linking({k: v for k, v in pred.items() if k in corpus.links}, corpus.links)
        out["linking"] = {"precision": rep.precision, "recall": rep.recall, "f1": rep.f1, "segments": len(rep.per_segment)}
        if args.report:
            Path(args.report).write_text(json.dumps(rep.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    _emit(out)
    return 0


def cmd_fuse(args) -> int:
    corpus = _corpus(args)
    if args.oracle:
        links = corpus.links
    elif args.links:
        links = {}
        for lineno, obj in read_jsonl(args.links):
            if not isinstance(obj.get("segment_id"), str) or not isinstance(obj.get("passage_ids"), list):
                raise ParseError(lineno, "link record needs 'segment_id' and 'passage_ids'", str(args.links))
            links[obj["segment_id"]] = obj["passage_ids"]
    else:
        raise UsageError("fuse needs --links FILE or --oracle")
    pool = build_fused_pool(corpus.segments, corpus.passages, links)
    write_jsonl(args.out, ({"id": f.id, "segment_id": f.segment.id, "passage_ids": list(f.passage_ids)} for f in pool.values()))
    _write_meta(Path(args.out), args)
    _emit({"config": _config(args), "fused_blocks": len(pool), "linked_passages": sum(len(f.passages) for f in pool.values())})
    return 0


def cmd_ict_gen(args) -> int:
    corpus = _corpus(args)
    pool = _fused_pool(args, corpus)
    pairs = generate_ict_dataset(pool, args.pairs_per_block, args.seed)
    write_jsonl(args.out, (p.to_record() for p in pairs))
    _write_meta(Path(args.out), args)
    _emit({"config": _config(args), "pairs": len(pairs), "fallback": sum(p.fallback for p in pairs)})
    return 0


def _target_pool(args, corpus: Corpus):
    if args.target == "fused":
        if not args.fused:
            raise UsageError("--target fused requires --fused FILE")
        return list(_fused_pool(args, corpus).values())
    if args.target == "titles":
        return [(p.id, tokenize(p.title), "passage") for p in corpus.passages.values()]
    return list(corpus.blocks().values())


def cmd_index(args) -> int:
    corpus = _corpus(args)
    idx = Bm25Index(args.k1, args.b, n_jobs=args.threads).fit(_target_pool(args, corpus))
    idx.save(args.out)
    _emit({"config": _config(args), "N_docs": idx.n_docs_, "terms": len(idx.postings_), "avg_doc_len": idx.avg_doc_len_})
    return 0


def cmd_embed(args) -> int:
    if args.target == "titles":
        raise UsageError("embed supports --target blocks or fused")
    corpus = _corpus(args)
    enc = HashedBowEncoder(args.dim, args.seed)
    pool = _target_pool(args, corpus)
    store = EmbeddingStore([b.id for b in pool], enc.transform([b.flat.text for b in pool]).reshape(len(pool), args.dim), enc.tag)
    store.save(args.out)
    _emit({"config": _config(args), "vectors": len(store), "dim": store.dim, "encoder": store.encoder_tag})
    return 0


def _load_store(args, encoder: HashedBowEncoder) -> Optional[EmbeddingStore]:
    if not args.embeddings:
        return None
    store = EmbeddingStore.load(args.embeddings)
    if store.dim != encoder.dim or store.encoder_tag != encoder.tag:
        raise DimMismatch(f"embeddings were made by {store.encoder_tag!r} (dim {store.dim}); queries use {encoder.tag!r} (dim {encoder.dim})")
    return store


def cmd_retrieve(args) -> int:
    corpus = _corpus(args)
    questions = load_questions(args.questions)
    texts = [q.question for q in questions]
    encoder = HashedBowEncoder(args.dim, args.seed)
    if args.mode == "iter-sparse":
        model = IterativeSparseRetriever(args.L, args.M, args.budget, args.k1, args.b, n_jobs=args.threads)
        model.fit(corpus.blocks())
        if args.index:
            model.index_ = Bm25Index.load(args.index)
    elif args.mode == "iter-dense":
        model = IterativeDenseRetriever(tuple(args.fanouts), args.budget, encoder, n_jobs=args.threads)
        model.fit(corpus.blocks(), store=_load_store(args, encoder))
    else:
        if not args.fused:
            raise UsageError(f"--mode {args.mode} requires --fused FILE")
        pool = _fused_pool(args, corpus)
        dense = args.mode == "fusion-dense"
        model = FusionRetriever(args.top_fused, args.budget, dense, encoder, k1=args.k1, b=args.b, n_jobs=args.threads)
        model.fit(pool, store=_load_store(args, encoder) if dense else None)
        if args.index and not dense:
            model.index_ = Bm25Index.load(args.index)
    results = model.predict(texts)
    write_jsonl(args.out, (r.to_record(q.qid) for q, r in zip(questions, results)))
    _write_meta(Path(args.out), args)
    _emit({"config": _config(args), "questions": len(results)})
    return 0


def cmd_read(args) -> int:
    corpus = _corpus(args)
    questions = load_questions(args.questions)
    retrievals = load_retrievals(args.retrievals)
    pool = corpus.blocks()
    texts = {bid: b.flat for bid, b in pool.items()}
    preds = []
    for q in questions:
        res = retrievals.get(q.qid)
        ids = list(res.truncated_ids) if res else []
        for bid in ids:
            if bid not in texts:
                raise CorpusError(f"retrieval for {q.qid!r} names unknown block {bid!r}")
        scorer = LexicalSpanScorer(args.max_span, args.window).fit([texts[b].tokens for b in ids])
        if args.reader == "cross":
            ans = select_span_cross_block(q.question, ids, texts, args.max_tokens, args.radius, args.attn_mode, scorer)
        else:
            score = {s.block_id: s.score for s in res.ranked} if res else {}
            ranked = [ScoredBlock(b, score.get(b, 0.0)) for b in ids]
            try:
                ans = select_span_single_block(q.question, ranked, texts, scorer)
            except EmptyRanking:
                ans = None
        preds.append({"qid": q.qid, "answer": ans.answer if ans else "", "block_id": ans.block_id if ans else None,
                      "confidence": ans.confidence if ans else 0.0})
    write_jsonl(args.out, preds)
    _write_meta(Path(args.out), args)
    _emit({"config": _config(args), "predictions": len(preds), "answered": sum(1 for p in preds if p["answer"])})
    return 0


def cmd_attn_check(args) -> int:
    cfg = SparseAttentionConfig.uniform(args.n, args.block_size, args.radius, args.mode)
    t0 = time.perf_counter()
    mask = build_mask(cfg)
    counts = edge_count(mask)
    report = {
        "config": _config(args),
        "N": cfg.N,
        "K": cfg.K,
        "edges": counts,
        "dense_edges": (cfg.N + cfg.K) ** 2,
        "edges_per_token": counts["total"] / cfg.N if cfg.N else 0.0,
        "bound": cfg.N * (2 * cfg.radius + 1) + cfg.N * (1 if cfg.local_to_global == OWN else cfg.K) + cfg.N + cfg.K ** 2,
    }
    if mask.n_nodes <= args.oracle_max_nodes:
        rng = np.random.default_rng(args.seed)
        Q, K, V = (rng.standard_normal((mask.n_nodes, args.dim)) for _ in range(3))
        diff = np.abs(sparse_attention(Q, K, V, mask) - dense_masked_attention(Q, K, V, mask))
        report["oracle_max_abs_diff"] = float(diff.max()) if diff.size else 0.0
        report["reachability"] = reach_thresholds(mask, cfg.block_bounds, args.layers_max)
    else:
        report["oracle_max_abs_diff"] = None
        report["reachability"] = None
    logger.info("attn-check took %.2fs", time.perf_counter() - t0)
    _emit(report)
    return 0


def cmd_eval(args) -> int:
    examples = load_questions(args.questions)
    preds = load_predictions(args.predictions)
    rets = load_retrievals(args.retrievals) if args.retrievals else {}
    report = run_eval(examples, preds, rets, args.budget, _config(args))
    Path(args.out).write_text(report.to_json(), encoding="utf-8")
    logger.info(report.summary())
    return 0


# ----------------------------------------------------------------- parser


def _int_list(text: str) -> List[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals or any(v < 1 for v in vals):
        raise argparse.ArgumentTypeError("fanouts must be positive integers")
    return vals


def _budget(text: str) -> Optional[int]:
    if text.lower() in ("inf", "none"):
        return None
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("budget must be >= 0")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=int, default=1, help="worker threads (outputs do not depend on it)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--quiet", action="store_true")

    bm25 = _Parser(add_help=False)
    bm25.add_argument("--k1", type=float, default=1.2)
    bm25.add_argument("--b", type=float, default=0.75)

    corpus = _Parser(add_help=False)
    corpus.add_argument("--corpus", required=True, help="directory holding passages.jsonl, tables.jsonl[, links.jsonl]")

    parser = _Parser(prog="fusionqa", description="Table-and-text retrieval toolkit.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("ingest", parents=[common], help="validate a corpus and report stats")
    p.add_argument("--passages", required=True)
    p.add_argument("--tables", required=True)
    p.add_argument("--links")
    p.add_argument("--out", help="write the validated corpus to this directory")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("link", parents=[common, corpus, bm25], help="link table segments to passages")
    p.add_argument("--queries", choices=["baseline", "file"], default="baseline")
    p.add_argument("--queries-file")
    p.add_argument("--per-query-k", type=int, default=1)
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--report", help="write the per-segment linking report here")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("fuse", parents=[common, corpus], help="build fused blocks from links")
    p.add_argument("--links")
    p.add_argument("--oracle", action="store_true", help="fuse with the corpus gold links")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("ict-gen", parents=[common, corpus], help="generate inverse-cloze pseudo queries")
    p.add_argument("--fused", required=True)
    p.add_argument("--pairs-per-block", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ict_gen)

    p = sub.add_parser("index", parents=[common, corpus, bm25], help="build a BM25 index snapshot")
    p.add_argument("--target", choices=["blocks", "fused", "titles"], default="blocks")
    p.add_argument("--fused")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("embed", parents=[common, corpus], help="embed blocks with a stand-in encoder")
    p.add_argument("--target", choices=["blocks", "fused"], default="blocks")
    p.add_argument("--fused")
    p.add_argument("--encoder", choices=["hashed-bow"], default="hashed-bow")
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("retrieve", parents=[common, corpus, bm25], help="run a retrieval pipeline")
    p.add_argument("--mode", choices=MODES, required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--fused")
    p.add_argument("--index", help="BM25 snapshot to use instead of indexing in memory")
    p.add_argument("--embeddings", help="embedding TSV to use instead of encoding in memory")
    p.add_argument("--L", type=int, default=20)
    p.add_argument("--M", type=int, default=5)
    p.add_argument("--fanouts", type=_int_list, default=[8, 4, 2])
    p.add_argument("--top-fused", type=int, default=15)
    p.add_argument("--budget", type=_budget, default=4096)
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("read", parents=[common, corpus], help="select answer spans from retrieved blocks")
    p.add_argument("--reader", choices=["single", "cross"], default="cross")
    p.add_argument("--questions", required=True)
    p.add_argument("--retrievals", required=True)
    p.add_argument("--max-tokens", type=int, default=4096)
    p.add_argument("--radius", type=int, default=84)
    p.add_argument("--attn-mode", choices=[OWN, ALL], default=ALL)
    p.add_argument("--max-span", type=int, default=10)
    p.add_argument("--window", type=int, default=20)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_read)

    p = sub.add_parser("attn-check", parents=[common], help="sparse attention edge counts, oracle diff, reachability")
    p.add_argument("--n", type=int, default=4096)
    p.add_argument("--radius", type=int, default=84)
    p.add_argument("--block-size", type=int, default=84)
    p.add_argument("--mode", choices=[OWN, ALL], default=ALL)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--layers-max", type=int, default=4)
    p.add_argument("--oracle-max-nodes", type=int, default=2048)
    p.set_defaults(func=cmd_attn_check)

    p = sub.add_parser("eval", parents=[common], help="EM / F1 / HITS report")
    p.add_argument("--questions", required=True)
    p.add_argument("--predictions", required=True)
    p.add_argument("--retrievals")
    p.add_argument("--budget", type=_budget, default=4096)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError(parser.format_usage())
    except UsageError as exc:
        sys.stderr.write(str(exc).rstrip("\n") + "\n")
        return 1
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"fusionqa {args.command}: {exc}\n")
        return 1
    except (CorpusError, SnapshotError, DimMismatch, BudgetExceeded, OSError, ValueError, KeyError) as exc:
        sys.stderr.write(f"fusionqa {args.command}: data error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
