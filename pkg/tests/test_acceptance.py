"""End-to-end acceptance suite.

Each test covers one gate criterion and prints a single summary line on
success. Run with `pytest -v` for one pass/fail line per criterion.
"""

import itertools
import json
import math
import random
import time
from collections import Counter

import numpy as np
import pytest

from hopsearch import cli
from hopsearch.corpus import Corpus, Passage, Question, tokenize
from hopsearch.dense import DenseIndex
from hopsearch.encoder import EmbeddingMatrix, ToyEncoder
from hopsearch.evaluation import em_at_k, evaluate_run
from hopsearch.lexical import build_index
from hopsearch.multihop import (ToyQueryEncoder, flatten_paths, hybrid_retrieve,
                                mdr_retrieve, write_run_file)
from hopsearch.rerank import OverlapScorer
from hopsearch.trainer import (TrainConfig, _loss_and_grad, build_dpr2_dataset,
                               build_hop1_dataset, train)

from synth import two_hop_task, write_jsonl

K1 = 0.9
B = 0.4


def random_corpus(rng, max_passages=100, vocab_size=40):
    vocab = [f"w{i}" for i in range(vocab_size)]
    corpus = Corpus()
    for i in range(rng.randint(5, max_passages)):
        title = " ".join(rng.choices(vocab, k=rng.randint(1, 2)))
        text = " ".join(rng.choices(vocab, k=rng.randint(3, 25)))
        corpus.add_passage(Passage.build(f"p{i:03d}", title, text))
    return corpus, vocab


def scalar_bm25_scores(corpus, query_terms):
    """Direct per-document evaluation of the scoring formula."""
    docs = {pid: p.tokens for pid, p in corpus.passages.items()}
    n = len(docs)
    avgdl = sum(len(t) for t in docs.values()) / n
    df = Counter()
    for tokens in docs.values():
        for term in set(tokens):
            df[term] += 1
    scores = {}
    for pid, tokens in docs.items():
        counts = Counter(tokens)
        total = 0.0
        # repeated query terms contribute once
        for term in dict.fromkeys(query_terms):
            tf = counts[term]
            if tf == 0:
                continue
            idf = math.log(1.0 + (n - df[term] + 0.5) / (df[term] + 0.5))
            norm = tf + K1 * (1.0 - B + B * len(tokens) / avgdl)
            total += idf * tf * (K1 + 1.0) / norm
        if total > 0.0:
            scores[pid] = total
    return scores


class TestBm25Oracle:
    def test_scores_match_scalar_oracle(self):
        start = time.monotonic()
        worst = 0.0
        checked = 0
        for trial in range(25):
            rng = random.Random(1000 + trial)
            corpus, vocab = random_corpus(rng)
            index = build_index(corpus)
            for _ in range(100):
                query = rng.choices(vocab + ["unseen"], k=rng.randint(1, 4))
                expected = scalar_bm25_scores(corpus, query)
                hits = index.search(query, len(corpus.passages))
                got = dict(hits)
                assert set(got) == set(expected)
                for pid, score in got.items():
                    rel = abs(score - expected[pid]) / expected[pid]
                    worst = max(worst, rel)
                    assert rel <= 1e-9
                # returned order: score descending, ties by id ascending
                keys = [(-s, pid) for pid, s in hits]
                assert keys == sorted(keys)
                checked += 1
        elapsed = time.monotonic() - start
        assert elapsed < 10.0
        print(f"\nACCEPTANCE bm25-oracle: PASS "
              f"({checked} queries, max rel err {worst:.2e}, {elapsed:.1f}s)")


class TestDenseExactness:
    def test_topk_matches_full_scan_argsort(self):
        start = time.monotonic()
        rng = np.random.default_rng(42)
        for trial in range(50):
            n = int(rng.integers(1, 1001))
            d = int(rng.integers(1, 65))
            vectors = rng.integers(-3, 4, size=(n, d)).astype(np.float32)
            perm = rng.permutation(n)
            ids = [f"p{perm[i]:04d}" for i in range(n)]
            index = DenseIndex(EmbeddingMatrix(ids=ids, vectors=vectors))
            query = rng.integers(-3, 4, size=d).astype(np.float64)
            k = int(rng.choice([1, min(5, n), n, n + 7]))
            scores = [float(sum(int(a) * int(b)
                                for a, b in zip(vectors[i], query)))
                      for i in range(n)]
            order = sorted(range(n), key=lambda i: (-scores[i], ids[i]))
            expected = [(ids[i], scores[i]) for i in order[:k]]
            assert index.search(query, k) == expected
        elapsed = time.monotonic() - start
        assert elapsed < 5.0
        print(f"\nACCEPTANCE dense-exactness: PASS "
              f"(50 instances, {elapsed:.1f}s)")


class _FixedVectors:
    """Query encoder backed by precomputed per-passage hop-2 vectors."""

    def __init__(self, hop1_vec, hop2_vecs):
        self.hop1_vec = hop1_vec
        self.hop2_vecs = hop2_vecs

    def query_vector(self, question):
        return self.hop1_vec

    def hop2_query_vector(self, question, prev_id):
        return self.hop2_vecs[prev_id]


class TestBeamSearchOracle:
    def test_full_width_beam_matches_exhaustive_argmax(self):
        question = Question(id="q", text="probe", qtype="bridge",
                            gold_hop1="x", gold_hop2="y")
        for trial in range(20):
            rng = np.random.default_rng(500 + trial)
            n = int(rng.integers(2, 201))
            d = 6
            vectors = rng.integers(-3, 4, size=(n, d)).astype(np.float32)
            ids = [f"p{i:03d}" for i in range(n)]
            index = DenseIndex(EmbeddingMatrix(ids=ids, vectors=vectors))
            enc = _FixedVectors(
                rng.integers(-3, 4, size=d).astype(np.float64),
                {pid: rng.integers(-3, 4, size=d).astype(np.float64)
                 for pid in ids})

            def dot(i, vec):
                return float(sum(int(a) * int(b)
                                 for a, b in zip(vectors[i], vec)))

            hop1 = {ids[i]: dot(i, enc.hop1_vec) for i in range(n)}
            best = min(
                ((-(hop1[p1] + dot(j, enc.hop2_vecs[p1])), (p1, p2))
                 for i, p1 in enumerate(ids)
                 for j, p2 in enumerate(ids) if i != j),
                key=lambda item: (item[0], item[1]))
            paths = mdr_retrieve(question, beam_size=n, k_paths=1,
                                 enc=enc, index=index)
            assert paths[0].hop_passages == best[1]
            assert paths[0].total_score == -best[0]
        print("\nACCEPTANCE beam-oracle: PASS (20 corpora, full-width beam)")


class TestGradientCheck:
    def test_analytic_gradient_matches_central_differences(self):
        h = 1e-4
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(seed)
            batch, dim, vocab = 3, 6, 48
            n_cand = batch + int(rng.integers(0, 3))
            X = rng.standard_normal((batch, vocab)) * 0.5
            Y = rng.standard_normal((n_cand, vocab)) * 0.5
            w_query = rng.standard_normal((dim, vocab)) * 0.2
            w_passage = rng.standard_normal((dim, vocab)) * 0.2
            _, _, d_wq, d_wp = _loss_and_grad(X, Y, w_query, w_passage)

            def loss_at(wq, wp):
                return _loss_and_grad(X, Y, wq, wp)[0]

            for analytic, w, other, first in (
                    (d_wq, w_query, w_passage, True),
                    (d_wp, w_passage, w_query, False)):
                for idx in np.ndindex(w.shape):
                    bumped = w.copy()
                    bumped[idx] = w[idx] + h
                    up = loss_at(bumped, other) if first \
                        else loss_at(other, bumped)
                    bumped[idx] = w[idx] - h
                    down = loss_at(bumped, other) if first \
                        else loss_at(other, bumped)
                    fd = (up - down) / (2.0 * h)
                    a = analytic[idx]
                    rel = abs(a - fd) / max(abs(a), abs(fd), 1e-4)
                    worst = max(worst, rel)
        assert worst < 1e-5
        print(f"\nACCEPTANCE gradient-check: PASS "
              f"(20 batches, max rel err {worst:.2e})")


class TestInBatchNegativeInvariant:
    def test_negative_count_tracks_batch_size_not_accumulation(self, tmp_path):
        passages, train_q, _ = two_hop_task(
            n_pairs=20, n_eval=5, n_distractors=10, seed=3)
        corpus = Corpus()
        corpus.ingest_passages(write_jsonl(tmp_path / "p.jsonl", passages))
        corpus.ingest_questions(write_jsonl(tmp_path / "q.jsonl", train_q))
        index = build_index(corpus)
        examples = (build_hop1_dataset(corpus.questions, corpus)
                    + build_dpr2_dataset(corpus.questions, corpus,
                                         hard_negative_index=index))
        assert any(ex.hard_negative_ids for ex in examples)

        per_batch = {}
        for batch_size, accum in itertools.product((2, 4, 8), (1, 2, 4)):
            config = TrainConfig(epochs=1, batch_size=batch_size,
                                 learning_rate=0.5, grad_accum_steps=accum,
                                 seed=5)
            result = train(examples, corpus, config,
                           ToyEncoder(hash_dim=256, embed_dim=8, seed=5))
            for stats in result.batch_stats:
                assert stats.batch_size == batch_size
                negatives = stats.candidate_count - 1
                assert negatives == (batch_size - 1
                                     + stats.hard_negative_count)
            trace = [(s.candidate_count, s.hard_negative_count)
                     for s in result.batch_stats]
            assert sum(h for _, h in trace) > 0
            per_batch.setdefault(batch_size, []).append(trace)
        for batch_size, traces in per_batch.items():
            assert all(t == traces[0] for t in traces)
        print("\nACCEPTANCE negative-invariant: PASS "
              "(9 configs, accumulation steps never change candidates)")


def em2(retrieved, question):
    return em_at_k(retrieved, (question.gold_hop1, question.gold_hop2), 2)


class TestSyntheticEndToEnd:
    def test_two_hop_methods_beat_single_hop_baselines(self, tmp_path):
        start = time.monotonic()
        summary = []
        for seed in (0, 1, 2):
            passages, train_q, eval_q = two_hop_task(
                n_pairs=100, n_eval=50, n_distractors=60, seed=seed)
            p_path = write_jsonl(tmp_path / f"p{seed}.jsonl", passages)
            corpus = Corpus()
            corpus.ingest_passages(p_path)
            corpus.ingest_questions(write_jsonl(
                tmp_path / f"t{seed}.jsonl", train_q))
            eval_corpus = Corpus()
            eval_corpus.ingest_passages(p_path)
            eval_corpus.ingest_questions(write_jsonl(
                tmp_path / f"e{seed}.jsonl", eval_q))
            index = build_index(corpus)

            hop1_data = build_hop1_dataset(corpus.questions, corpus)
            dpr2_data = build_dpr2_dataset(corpus.questions, corpus)
            base = dict(batch_size=8, learning_rate=2.0, seed=seed)
            hop1_enc = train(
                hop1_data, corpus, TrainConfig(epochs=25, **base),
                ToyEncoder(hash_dim=2048, embed_dim=32, seed=seed)).encoder
            dpr2_enc = train(
                dpr2_data, corpus, TrainConfig(epochs=25, **base),
                ToyEncoder(hash_dim=2048, embed_dim=32, seed=seed)).encoder
            mdr_enc = train(
                hop1_data + dpr2_data, corpus,
                TrainConfig(epochs=40, batch_size=8, learning_rate=3.0,
                            seed=seed),
                ToyEncoder(hash_dim=2048, embed_dim=32, seed=seed)).encoder

            questions = eval_corpus.questions
            scores = {}
            scores["bm25"] = np.mean([
                em2([pid for pid, _ in index.search(tokenize(q.text), 2)], q)
                for q in questions])

            hop1_index = DenseIndex(hop1_enc.encode_corpus(eval_corpus))
            scores["dense"] = np.mean([
                em2([pid for pid, _ in
                     hop1_index.search(hop1_enc.encode_query(q), 2)], q)
                for q in questions])

            mdr_index = DenseIndex(mdr_enc.encode_corpus(eval_corpus))
            mdr_queries = ToyQueryEncoder(mdr_enc, eval_corpus)
            scores["mdr"] = np.mean([
                em2(flatten_paths(mdr_retrieve(q, beam_size=5, k_paths=25,
                                               enc=mdr_queries,
                                               index=mdr_index), 2), q)
                for q in questions])

            dpr2_index = DenseIndex(dpr2_enc.encode_corpus(eval_corpus))
            dpr2_queries = ToyQueryEncoder(dpr2_enc, eval_corpus)
            scorer = OverlapScorer(index)
            scores["hybrid"] = np.mean([
                em2(flatten_paths(hybrid_retrieve(
                    q, b1=3, b2=3, scorer=scorer, dpr2_enc=dpr2_queries,
                    dense_index=dpr2_index, lexical_index=index,
                    corpus=eval_corpus), 2), q)
                for q in questions])

            assert scores["hybrid"] > scores["bm25"], scores
            assert scores["mdr"] > scores["dense"], scores
            summary.append(f"seed {seed}: " + " ".join(
                f"{m}={scores[m]:.2f}" for m in
                ("bm25", "dense", "mdr", "hybrid")))
        elapsed = time.monotonic() - start
        assert elapsed < 120.0
        print("\nACCEPTANCE synthetic-e2e: PASS "
              f"({'; '.join(summary)}; {elapsed:.1f}s)")


class TestEmFixture:
    def build_fixture(self, tmp_path):
        passages = [{"id": f"g{i}", "title": f"Gold {i}", "text": f"gold {i}"}
                    for i in range(1, 9)]
        passages += [{"id": f"f{j:02d}", "title": f"Filler {j}",
                      "text": f"filler {j}"} for j in range(1, 16)]
        questions = [
            {"id": "q1", "text": "a", "qtype": "bridge",
             "gold_hop1": "g1", "gold_hop2": "g2"},
            {"id": "q2", "text": "b", "qtype": "bridge",
             "gold_hop1": "g3", "gold_hop2": "g4"},
            {"id": "q3", "text": "c", "qtype": "comparison",
             "gold_hop1": "g5", "gold_hop2": "g6"},
            {"id": "q4", "text": "d", "qtype": "bridge",
             "gold_hop1": "g7", "gold_hop2": "g8"},
        ]
        corpus = Corpus()
        corpus.ingest_passages(write_jsonl(tmp_path / "p.jsonl", passages))
        corpus.ingest_questions(write_jsonl(tmp_path / "q.jsonl", questions))

        def ranked(pids):
            return [(pid, float(len(pids) - i)) for i, pid in
                    enumerate(pids)]

        fillers = [f"f{j:02d}" for j in range(1, 16)]
        run = tmp_path / "run.tsv"
        write_run_file(run, {
            # both golds in top 2
            "q1": ranked(["g1", "g2"]),
            # second gold at rank 5: misses @2, hits @10
            "q2": ranked([fillers[0], "g3", fillers[1], fillers[2], "g4"]),
            # second gold at rank 15: hits only @20
            "q3": ranked(["g5"] + fillers[:13] + ["g6"]),
            # one gold never retrieved
            "q4": ranked(["g7"] + fillers[:5]),
        }, "fixture")
        return run, corpus

    def test_hand_computed_em_values(self, tmp_path):
        run, corpus = self.build_fixture(tmp_path)
        report = evaluate_run(run, corpus.questions, ks=(2, 10, 20))
        assert report.em_at == {2: 0.25, 10: 0.5, 20: 0.75}
        print("\nACCEPTANCE em-fixture: PASS "
              "(EM@2=0.25 EM@10=0.5 EM@20=0.75, exact)")

    def test_em_at_k_is_monotone_in_k(self):
        rng = random.Random(9)
        pool = [f"p{i}" for i in range(30)]
        for _ in range(200):
            retrieved = rng.sample(pool, rng.randint(0, 25))
            golds = tuple(rng.sample(pool, 2))
            values = [em_at_k(retrieved, golds, k) for k in range(1, 31)]
            assert values == sorted(values)

    def test_report_em_is_monotone_across_ks(self, tmp_path):
        run, corpus = self.build_fixture(tmp_path)
        report = evaluate_run(run, corpus.questions, ks=(2, 10, 20))
        assert report.em_at[2] <= report.em_at[10] <= report.em_at[20]


class TestCliDeterminism:
    def run_cli(self, *argv):
        assert cli.run([str(a) for a in argv]) == 0

    def test_every_subcommand_rerun_is_byte_identical(self, tmp_path, capsys):
        passages, train_q, eval_q = two_hop_task(
            n_pairs=12, n_eval=6, n_distractors=10, seed=1)
        p = write_jsonl(tmp_path / "passages.jsonl", passages)
        tq = write_jsonl(tmp_path / "train.jsonl", train_q)
        eq = write_jsonl(tmp_path / "eval.jsonl", eval_q)

        def twice(produces, *argv):
            outputs = []
            for tag in ("one", "two"):
                sub = tmp_path / tag
                sub.mkdir(exist_ok=True)
                argv_full = [str(a).replace("@OUT@", str(sub))
                             for a in argv]
                self.run_cli(*argv_full)
                outputs.append(b"".join(
                    (sub / name).read_bytes() for name in produces))
            assert outputs[0] == outputs[1]

        twice(["stats.json"], "ingest", "--passages", p, "--questions", tq,
              "--stats-out", "@OUT@/stats.json")
        twice(["index.hslx"], "index-lexical", "--passages", p,
              "--out", "@OUT@/index.hslx")
        twice(["emb.hsem"], "embed", "--passages", p, "--out",
              "@OUT@/emb.hsem", "--hash-dim", 256, "--embed-dim", 8,
              "--seed", 4)
        twice(["qemb.hsem"], "embed", "--passages", p, "--questions", eq,
              "--out", "@OUT@/qemb.hsem", "--hash-dim", 256,
              "--embed-dim", 8, "--seed", 4)
        twice(["model.hsck", "loss.csv"], "train", "--passages", p,
              "--questions", tq, "--dataset", "both",
              "--out", "@OUT@/model.hsck", "--loss-out", "@OUT@/loss.csv",
              "--epochs", 3, "--batch-size", 4, "--lr", 2.0,
              "--hash-dim", 512, "--embed-dim", 16, "--seed", 4)

        checkpoint = tmp_path / "one" / "model.hsck"
        twice(["bm25.tsv"], "retrieve", "--method", "bm25", "--passages", p,
              "--questions", eq, "--k", 5, "--out", "@OUT@/bm25.tsv")
        twice(["mdr.tsv", "mdr.paths"], "retrieve", "--method", "mdr",
              "--passages", p, "--questions", eq, "--checkpoint", checkpoint,
              "--beam", 3, "--k", 5, "--out", "@OUT@/mdr.tsv",
              "--paths-out", "@OUT@/mdr.paths")
        twice(["hyb.tsv"], "retrieve", "--method", "hybrid", "--passages", p,
              "--questions", eq, "--checkpoint", checkpoint,
              "--b1", 2, "--b2", 2, "--k", 4, "--out", "@OUT@/hyb.tsv")

        run_file = tmp_path / "one" / "bm25.tsv"
        twice(["report.json"], "eval", "--run", run_file, "--passages", p,
              "--questions", eq, "--json-out", "@OUT@/report.json")

        capsys.readouterr()
        compare_outputs = []
        for _ in range(2):
            self.run_cli("compare", "--run-a", run_file,
                         "--run-b", tmp_path / "one" / "mdr.tsv",
                         "--passages", p, "--questions", eq, "--k", 2)
            compare_outputs.append(capsys.readouterr().out)
        assert compare_outputs[0] == compare_outputs[1]
        print("\nACCEPTANCE cli-determinism: PASS "
              "(all 7 subcommands byte-identical on rerun)")
