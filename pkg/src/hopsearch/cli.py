"""Command-line entry point wiring every stage of the engine together.

Subcommands: ingest, index-lexical, embed, train, retrieve, eval, compare.
All outputs go to explicitly named paths and no subcommand mutates its
inputs; given the same flags and seed, every output file is byte
identical across reruns. Errors from any stage exit nonzero with a
one-line diagnostic on stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Sequence

from .corpus import Corpus, Question, tokenize
from .dense import DenseIndex
from .encoder import ToyEncoder, load_embeddings, save_embeddings
from .evaluation import compare_runs, evaluate_run
from .lexical import InvertedIndex, build_index, load_index, save_index
from .multihop import (PrecomputedQueryVectors, QueryEncoder, ToyQueryEncoder,
                       flatten_paths_with_scores, hybrid_retrieve,
                       mdr_retrieve, write_paths_file, write_run_file)
from .rerank import ExternalScores, OverlapScorer, Scorer, rerank
from .trainer import (TrainConfig, build_dpr2_dataset, build_hop1_dataset,
                      load_checkpoint, save_checkpoint, train,
                      write_loss_trace)

METHODS = ("bm25", "rerank", "dpr", "mdr", "hybrid")


def _load_corpus(args, need_questions: bool = False) -> Corpus:
    corpus = Corpus()
    corpus.ingest_passages(args.passages)
    questions_path = getattr(args, "questions", None)
    if questions_path:
        corpus.ingest_questions(questions_path)
    elif need_questions:
        raise ValueError("a --questions file is required")
    return corpus


def _load_encoder(args) -> ToyEncoder:
    if args.checkpoint:
        return load_checkpoint(args.checkpoint)
    return ToyEncoder(hash_dim=args.hash_dim, embed_dim=args.embed_dim,
                      seed=args.seed)


def _lexical_index(args, corpus: Corpus) -> InvertedIndex:
    if getattr(args, "lexical_index", None):
        return load_index(args.lexical_index)
    return build_index(corpus)


def _scorer(args, lexical: InvertedIndex) -> Scorer:
    if args.scorer == "external":
        return ExternalScores.load(args.scores)
    return OverlapScorer(lexical)


def _stats_payload(corpus: Corpus) -> str:
    stats = corpus.stats()
    payload = {"passage_count": stats.passage_count,
               "avg_doc_len": stats.avg_doc_len,
               "vocab_size": stats.vocab_size,
               "question_count": len(corpus.questions)}
    return json.dumps(payload, sort_keys=True) + "\n"


def cmd_ingest(args) -> int:
    corpus = _load_corpus(args)
    payload = _stats_payload(corpus)
    sys.stdout.write(payload)
    if args.stats_out:
        with open(args.stats_out, "w", encoding="utf-8",
                  newline="\n") as handle:
            handle.write(payload)
    return 0


def cmd_index_lexical(args) -> int:
    corpus = _load_corpus(args)
    index = build_index(corpus, k1=args.k1, b=args.b)
    save_index(args.out, index)
    return 0


def cmd_embed(args) -> int:
    corpus = _load_corpus(args)
    encoder = _load_encoder(args)
    if args.questions:
        matrix = encoder.encode_questions(corpus.questions)
    else:
        matrix = encoder.encode_corpus(corpus)
    save_embeddings(args.out, matrix)
    return 0


def cmd_train(args) -> int:
    corpus = _load_corpus(args, need_questions=True)
    hard_index = build_index(corpus) if args.hard_negatives else None
    if args.dataset == "hop1":
        examples = build_hop1_dataset(corpus.questions, corpus, hard_index)
    elif args.dataset == "dpr2":
        examples = build_dpr2_dataset(corpus.questions, corpus, hard_index)
    else:
        # both: one encoder must answer the bare question (hop 1) and the
        # question+passage concatenation (hop 2), as beam search needs
        examples = build_hop1_dataset(corpus.questions, corpus, hard_index) \
            + build_dpr2_dataset(corpus.questions, corpus, hard_index)
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                         learning_rate=args.lr,
                         grad_accum_steps=args.accum_steps,
                         seed=args.seed, momentum=args.momentum)
    encoder = ToyEncoder(hash_dim=args.hash_dim, embed_dim=args.embed_dim,
                         seed=args.seed)
    result = train(examples, corpus, config, encoder)
    save_checkpoint(args.out, result.encoder)
    if args.loss_out:
        write_loss_trace(args.loss_out, result.steps)
    return 0


def _query_encoder(args, encoder: ToyEncoder, corpus: Corpus) -> QueryEncoder:
    if args.query_embeddings:
        hop2 = load_embeddings(args.hop2_query_embeddings) \
            if args.hop2_query_embeddings else None
        return PrecomputedQueryVectors(load_embeddings(args.query_embeddings),
                                       hop2)
    return ToyQueryEncoder(encoder, corpus)


def _dense_index(args, encoder: ToyEncoder, corpus: Corpus) -> DenseIndex:
    if args.embeddings:
        return DenseIndex(load_embeddings(args.embeddings))
    return DenseIndex(encoder.encode_corpus(corpus))


def cmd_retrieve(args) -> int:
    # cheap flag validation first, before any corpus or index work
    if args.k < 1:
        raise ValueError("--k must be >= 1")
    if args.method in ("rerank", "hybrid") and args.scorer == "external" \
            and not args.scores:
        raise ValueError("--scorer external requires --scores")
    if args.method == "mdr" and args.k_paths is not None \
            and args.k_paths > args.beam ** 2:
        raise ValueError("--k-paths must not exceed beam^2")
    if args.paths_out and args.method not in ("mdr", "hybrid"):
        raise ValueError("--paths-out only applies to mdr and hybrid")
    run_tag = args.run_tag or args.method
    corpus = _load_corpus(args, need_questions=True)
    questions = corpus.questions

    results: dict[str, list[tuple[str, float]]] = {}
    paths_by_question: dict[str, list] = {}

    if args.method == "bm25":
        lexical = _lexical_index(args, corpus)
        for q in questions:
            results[q.id] = lexical.search(tokenize(q.text), args.k)
    elif args.method == "rerank":
        lexical = _lexical_index(args, corpus)
        scorer = _scorer(args, lexical)
        for q in questions:
            results[q.id] = rerank(q, lexical, corpus, scorer, k_out=args.k,
                                   k_candidates=args.k_candidates)
    elif args.method == "dpr":
        encoder = _load_encoder(args)
        index = _dense_index(args, encoder, corpus)
        query_enc = _query_encoder(args, encoder, corpus)
        for q in questions:
            results[q.id] = index.search(query_enc.query_vector(q), args.k)
    elif args.method == "mdr":
        encoder = _load_encoder(args)
        index = _dense_index(args, encoder, corpus)
        query_enc = _query_encoder(args, encoder, corpus)
        k_paths = args.k_paths or min(len(corpus), args.beam) ** 2
        for q in questions:
            paths = mdr_retrieve(q, args.beam, k_paths, query_enc, index)
            paths_by_question[q.id] = paths
            results[q.id] = flatten_paths_with_scores(paths, args.k)
    else:  # hybrid
        encoder = _load_encoder(args)
        lexical = _lexical_index(args, corpus)
        scorer = _scorer(args, lexical)
        index = _dense_index(args, encoder, corpus)
        query_enc = _query_encoder(args, encoder, corpus)
        for q in questions:
            paths = hybrid_retrieve(q, args.b1, args.b2, scorer, query_enc,
                                    index, lexical, corpus,
                                    k_candidates=args.k_candidates)
            paths_by_question[q.id] = paths
            results[q.id] = flatten_paths_with_scores(paths, args.k)

    write_run_file(args.out, results, run_tag)
    if args.paths_out:
        write_paths_file(args.paths_out, paths_by_question)
    return 0


def _parse_ks(raw: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(part) for part in raw.split(","))
    except ValueError:
        raise ValueError(f"invalid --ks value {raw!r}") from None
    if not ks or any(k < 1 for k in ks) or len(set(ks)) != len(ks):
        raise ValueError(f"invalid --ks value {raw!r}")
    return ks


def _load_questions(passages_path: str, questions_path: str) -> list[Question]:
    corpus = Corpus()
    corpus.ingest_passages(passages_path)
    corpus.ingest_questions(questions_path)
    return corpus.questions


def cmd_eval(args) -> int:
    questions = _load_questions(args.passages, args.questions)
    report = evaluate_run(args.run, questions, ks=_parse_ks(args.ks))
    sys.stdout.write(report.to_table())
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8",
                  newline="\n") as handle:
            handle.write(report.to_json())
    return 0


def cmd_compare(args) -> int:
    questions = _load_questions(args.passages, args.questions)
    for question_id, category in compare_runs(args.run_a, args.run_b,
                                              questions, args.k):
        sys.stdout.write(f"{question_id}\t{category}\n")
    return 0


def _add_encoder_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--checkpoint", help="trained encoder checkpoint; "
                        "omit to use a freshly seeded encoder")
    parser.add_argument("--hash-dim", type=int, default=4096)
    parser.add_argument("--embed-dim", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hopsearch",
        description="Two-hop passage retrieval: sparse, dense, and hybrid.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate corpus files, report stats")
    p.add_argument("--passages", required=True)
    p.add_argument("--questions")
    p.add_argument("--stats-out")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("index-lexical", help="build and save the BM25 index")
    p.add_argument("--passages", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k1", type=float, default=0.9)
    p.add_argument("--b", type=float, default=0.4)
    p.set_defaults(func=cmd_index_lexical)

    p = sub.add_parser("embed", help="encode passages or questions to a "
                       "binary embedding file")
    p.add_argument("--passages", required=True)
    p.add_argument("--questions", help="encode these questions instead of "
                   "the passages")
    p.add_argument("--out", required=True)
    _add_encoder_flags(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="contrastively train the encoder")
    p.add_argument("--passages", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--dataset", choices=("hop1", "dpr2", "both"),
                   required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--accum-steps", type=int, default=1)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hash-dim", type=int, default=4096)
    p.add_argument("--embed-dim", type=int, default=64)
    p.add_argument("--hard-negatives", action="store_true",
                   help="mine one BM25 hard negative per example")
    p.add_argument("--loss-out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("retrieve", help="write a ranked run file")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--passages", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--run-tag")
    p.add_argument("--lexical-index", help="saved BM25 index; built "
                   "in memory when omitted")
    p.add_argument("--scorer", choices=("overlap", "external"),
                   default="overlap")
    p.add_argument("--scores", help="TSV for --scorer external")
    p.add_argument("--k-candidates", type=int, default=100)
    p.add_argument("--embeddings", help="saved passage embeddings; computed "
                   "from the encoder when omitted")
    p.add_argument("--query-embeddings")
    p.add_argument("--hop2-query-embeddings")
    p.add_argument("--beam", type=int, default=5)
    p.add_argument("--k-paths", type=int)
    p.add_argument("--b1", type=int, default=5)
    p.add_argument("--b2", type=int, default=5)
    p.add_argument("--paths-out")
    _add_encoder_flags(p)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("eval", help="score a run file with EM@k")
    p.add_argument("--run", required=True)
    p.add_argument("--passages", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--ks", default="2,10,20")
    p.add_argument("--json-out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="per-question EM diff of two runs")
    p.add_argument("--run-a", required=True)
    p.add_argument("--run-b", required=True)
    p.add_argument("--passages", required=True)
    p.add_argument("--questions", required=True)
    p.add_argument("--k", type=int, default=2)
    p.set_defaults(func=cmd_compare)

    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse has already printed its message
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError) as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args \
            else str(exc)
        print(f"error: {message}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
