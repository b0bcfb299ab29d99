from __future__ import annotations

import hashlib
import math
import random

import numpy as np
import pytest

from corpusgap.corpus import Corpus, Document, Query, Section, Source, Split
from corpusgap.gateway import Gateway, make_gateway_judge, make_gateway_rewriter, make_mock_judge
from corpusgap.providers import MockProvider
from corpusgap.retrieval import (
    HashedBagEmbedder,
    IndexManifestError,
    Pipeline,
    SearchIndex,
    build_chunk_index,
    build_document_index,
    corpus_fingerprint,
    load_index,
    merge_chunk_candidates,
    retrieve_baseline,
    retrieve_hierarchical,
    retrieve_query_transformation,
    retrieve_reranking,
    save_index,
)


def brute_force_search(keys, matrix, query_vec, k):
    """Independent exhaustive scan with fsum dot products."""
    sims = [
        math.fsum(float(a) * float(b) for a, b in zip(row, query_vec)) for row in matrix
    ]
    ranked = sorted(zip(keys, sims), key=lambda pair: (-pair[1], pair[0]))
    return ranked[:k]


class TestHashedBagEmbedder:
    def test_deterministic(self):
        embedder = HashedBagEmbedder(dim=64)
        assert np.array_equal(embedder.embed("calm night"), embedder.embed("calm night"))

    def test_unit_norm(self):
        embedder = HashedBagEmbedder(dim=64)
        for text in ["one", "two words", "a a a b c d e f g"]:
            assert abs(float(np.linalg.norm(embedder.embed(text))) - 1.0) < 1e-9

    def test_disjoint_tokens_have_zero_cosine(self):
        # Hand-check the bucket assignments first: with no shared buckets the
        # bags cannot overlap, so the dot product must be exactly zero.
        dim = 256
        tokens = ["alpha", "beta", "gamma", "delta"]
        buckets = [
            int(hashlib.sha256(t.encode()).hexdigest(), 16) % dim for t in tokens
        ]
        assert len(set(buckets)) == 4
        embedder = HashedBagEmbedder(dim=dim)
        a = embedder.embed("alpha beta")
        b = embedder.embed("gamma delta")
        assert float(a @ b) == 0.0

    def test_empty_text_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            HashedBagEmbedder().embed("   ")


def random_unit_vectors(n: int, dim: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    matrix = rng.normal(size=(n, dim))
    return matrix / np.linalg.norm(matrix, axis=1, keepdims=True)


def vector_index(matrix: np.ndarray, prefix: str = "v") -> SearchIndex:
    keys = [f"{prefix}{i:04d}" for i in range(len(matrix))]
    return SearchIndex(keys, matrix, HashedBagEmbedder(dim=matrix.shape[1]), "nohash", "document")


class TestSearchIndex:
    def test_k_at_least_size_returns_all_sorted(self):
        matrix = random_unit_vectors(5, 16, seed=1)
        index = vector_index(matrix)
        hits = index.search(matrix[2], k=50)
        assert len(hits) == 5
        sims = [sim for _, sim in hits]
        assert sims == sorted(sims, reverse=True)

    def test_self_match_first_with_similarity_one(self):
        matrix = random_unit_vectors(10, 16, seed=2)
        index = vector_index(matrix)
        key, sim = index.search(matrix[4], k=1)[0]
        assert key == "v0004"
        assert sim == pytest.approx(1.0, abs=1e-12)

    def test_matches_brute_force_with_duplicates(self):
        base = random_unit_vectors(40, 32, seed=3)
        # inject exact duplicates so the key tie-break is exercised
        matrix = np.vstack([base, base[:8]])
        index = vector_index(matrix)
        query = random_unit_vectors(1, 32, seed=4)[0]
        got = index.search(query, k=20)
        want = brute_force_search(index.keys, matrix, query, 20)
        assert [(k, pytest.approx(s, abs=1e-12)) for k, s in want] == got

    def test_k_below_one_rejected(self):
        index = vector_index(random_unit_vectors(3, 8, seed=5))
        with pytest.raises(ValueError, match="k"):
            index.search(np.zeros(8), k=0)

    def test_duplicate_keys_rejected(self):
        matrix = random_unit_vectors(2, 8, seed=6)
        with pytest.raises(ValueError, match="unique"):
            SearchIndex(["a", "a"], matrix, HashedBagEmbedder(dim=8), "h", "document")


def doc(doc_id: str, body: str, subtopic: str | None = None, sections=None) -> Document:
    if sections is None:
        sections = (Section(heading="", body=body),)
    return Document(
        id=doc_id, source=Source.BASELINE, title=body.split()[0], sections=sections, subtopic=subtopic
    )


def query(text: str, qid: str = "q1") -> Query:
    return Query(id=qid, text=text, split=Split.TEST)


@pytest.fixture
def embedder():
    return HashedBagEmbedder(dim=128)


class TestIndexPersistence:
    def test_round_trip(self, tmp_path, embedder):
        corpus = Corpus(name="c", documents=(doc("d1", "alpha beta"), doc("d2", "gamma")))
        index = build_document_index(corpus, embedder)
        save_index(index, tmp_path / "c.doc")
        loaded = load_index(tmp_path / "c.doc", embedder, corpus_fingerprint(corpus))
        assert loaded.keys == index.keys
        assert np.array_equal(loaded.matrix, index.matrix)

    def test_chunk_keys_survive_round_trip(self, tmp_path, embedder):
        corpus = Corpus(
            name="c",
            documents=(
                doc("d1", "alpha", sections=(Section("h1", "alpha"), Section("h2", "beta"))),
            ),
        )
        index = build_chunk_index(corpus, embedder)
        save_index(index, tmp_path / "c.chunk")
        loaded = load_index(tmp_path / "c.chunk", embedder)
        assert loaded.keys == [("d1", 0), ("d1", 1)]

    def test_provider_mismatch_refused(self, tmp_path, embedder):
        corpus = Corpus(name="c", documents=(doc("d1", "alpha"),))
        save_index(build_document_index(corpus, embedder), tmp_path / "c.doc")
        with pytest.raises(IndexManifestError, match="provider"):
            load_index(tmp_path / "c.doc", HashedBagEmbedder(dim=64))

    def test_corpus_mismatch_refused(self, tmp_path, embedder):
        corpus = Corpus(name="c", documents=(doc("d1", "alpha"),))
        save_index(build_document_index(corpus, embedder), tmp_path / "c.doc")
        other = Corpus(name="c2", documents=(doc("d1", "totally different"),))
        with pytest.raises(IndexManifestError, match="corpus"):
            load_index(tmp_path / "c.doc", embedder, corpus_fingerprint(other))


class TestBaselinePipeline:
    def test_tiny_corpus_returns_all_in_order(self, embedder):
        corpus = Corpus(
            name="c",
            documents=(doc("d1", "alpha beta"), doc("d2", "alpha"), doc("d3", "zeta")),
        )
        index = build_document_index(corpus, embedder)
        result = retrieve_baseline(query("alpha beta"), index)
        assert len(result.top_docs) == 3
        sims = [d.similarity for d in result.top_docs]
        assert sims == sorted(sims, reverse=True)
        assert result.top_docs[0].judge_score is None

    def test_textually_identical_doc_ranks_first(self, embedder):
        exact = Document(
            id="d1", source=Source.BASELINE, title="",
            sections=(Section(heading="", body="alpha beta gamma"),),
        )
        corpus = Corpus(name="c", documents=(exact, doc("d2", "alpha delta epsilon")))
        index = build_document_index(corpus, embedder)
        result = retrieve_baseline(query("alpha beta gamma"), index)
        assert result.top_docs[0].doc_id == "d1"
        assert result.top_docs[0].similarity == pytest.approx(1.0, abs=1e-9)

    def test_equals_brute_force_top3(self, embedder):
        rng = random.Random(8)
        vocab = [f"tok{i}" for i in range(40)]
        docs = tuple(
            doc(f"d{i:02d}", " ".join(rng.sample(vocab, 6))) for i in range(30)
        )
        corpus = Corpus(name="c", documents=docs)
        index = build_document_index(corpus, embedder)
        q = query(" ".join(rng.sample(vocab, 5)))
        result = retrieve_baseline(q, index)
        qvec = embedder.embed(q.text)
        want = brute_force_search(index.keys, index.matrix, qvec, 3)
        assert [d.doc_id for d in result.top_docs] == [k for k, _ in want]


class TestHierarchicalPipeline:
    def test_chunks_from_same_doc_deduplicate(self, embedder):
        corpus = Corpus(
            name="c",
            documents=(
                doc(
                    "d1",
                    "alpha",
                    sections=(Section("", "alpha beta"), Section("", "alpha beta gamma")),
                ),
                doc("d2", "delta"),
            ),
        )
        index = build_chunk_index(corpus, embedder)
        candidates = merge_chunk_candidates(index, embedder.embed("alpha beta"), 20, 1)
        assert [c.doc_id for c in candidates].count("d1") == 1

    def test_single_section_candidates_match_baseline(self, embedder):
        rng = random.Random(9)
        vocab = [f"tok{i}" for i in range(50)]
        docs = tuple(
            doc(f"d{i:02d}", " ".join(rng.sample(vocab, 6))) for i in range(40)
        )
        corpus = Corpus(name="c", documents=docs)
        doc_index = build_document_index(corpus, embedder)
        chunk_index = build_chunk_index(corpus, embedder)
        q = " ".join(rng.sample(vocab, 5))
        qvec = embedder.embed(q)
        baseline_hits = {key for key, _ in doc_index.search(qvec, 20)}
        merged = {c.doc_id for c in merge_chunk_candidates(chunk_index, qvec, 20, 3)}
        assert merged == baseline_hits

    def test_final_order_follows_judge(self, embedder):
        corpus = Corpus(
            name="c",
            documents=(doc("d1", "alpha beta"), doc("d2", "alpha gamma"), doc("d3", "alpha")),
        )
        chunk_index = build_chunk_index(corpus, embedder)
        judge = make_mock_judge(0)
        result = retrieve_hierarchical(query("alpha beta"), chunk_index, corpus, judge)
        expected = sorted(
            (
                (judge("alpha beta", corpus.document(d)), d)
                for d in ("d1", "d2", "d3")
            ),
            key=lambda pair: -pair[0],
        )
        assert [d.doc_id for d in result.top_docs][0] == expected[0][1]
        scores = [d.judge_score for d in result.top_docs]
        assert scores == sorted(scores, reverse=True)

    def test_chunk_hog_still_returns_three_docs(self, embedder):
        hog_sections = tuple(Section(f"h{i}", "alpha beta") for i in range(30))
        corpus = Corpus(
            name="c",
            documents=(
                doc("d1", "alpha", sections=hog_sections),
                doc("d2", "alpha gamma"),
                doc("d3", "alpha delta"),
                doc("d4", "zeta"),
            ),
        )
        chunk_index = build_chunk_index(corpus, embedder)
        result = retrieve_hierarchical(query("alpha beta"), chunk_index, corpus, make_mock_judge(0))
        assert len({d.doc_id for d in result.top_docs}) == 3


class TestRerankingPipeline:
    def test_small_corpus_judges_everything(self, embedder):
        corpus = Corpus(
            name="c",
            documents=(doc("d1", "alpha"), doc("d2", "beta"), doc("d3", "gamma")),
        )
        index = build_document_index(corpus, embedder)
        scripted = {"d1": 10, "d2": 90, "d3": 50}
        result = retrieve_reranking(
            query("alpha"), index, corpus, lambda q, d: scripted[d.id]
        )
        assert [d.doc_id for d in result.top_docs] == ["d2", "d3", "d1"]

    def test_low_cosine_high_judge_reaches_top(self, embedder):
        # 19 near-duplicates of the query plus one barely-similar doc that
        # the judge loves: rerank semantics must surface it.
        docs = [doc(f"d{i:02d}", f"alpha beta tok{i}") for i in range(19)]
        docs.append(doc("d99", "alpha junk1 junk2 junk3 junk4 junk5"))
        corpus = Corpus(name="c", documents=tuple(docs))
        index = build_document_index(corpus, embedder)
        hits = index.search_text("alpha beta", 20)
        assert ("d99", hits[-1][1]) == hits[-1]  # weakest of the candidate set
        judge = lambda q, d: 99 if d.id == "d99" else 40
        result = retrieve_reranking(query("alpha beta"), index, corpus, judge)
        assert result.top_docs[0].doc_id == "d99"

    def test_matches_two_stage_brute_force(self, embedder):
        rng = random.Random(10)
        vocab = [f"tok{i}" for i in range(60)]
        docs = tuple(doc(f"d{i:02d}", " ".join(rng.sample(vocab, 6))) for i in range(35))
        corpus = Corpus(name="c", documents=docs)
        index = build_document_index(corpus, embedder)
        judge = make_mock_judge(3)
        q = query(" ".join(rng.sample(vocab, 5)))
        result = retrieve_reranking(q, index, corpus, judge)

        qvec = embedder.embed(q.text)
        stage_one = brute_force_search(index.keys, index.matrix, qvec, 20)
        stage_two = sorted(
            (
                (-judge(q.text, corpus.document(k)), -sim, k)
                for k, sim in stage_one
            )
        )[:3]
        assert [d.doc_id for d in result.top_docs] == [k for _, _, k in stage_two]


class TestQueryTransformationPipeline:
    def test_identity_rewriter_matches_reranking(self, embedder):
        rng = random.Random(11)
        vocab = [f"tok{i}" for i in range(40)]
        docs = tuple(doc(f"d{i:02d}", " ".join(rng.sample(vocab, 6))) for i in range(25))
        corpus = Corpus(name="c", documents=docs)
        index = build_document_index(corpus, embedder)
        judge = make_mock_judge(1)
        q = query(" ".join(rng.sample(vocab, 5)))
        rerank = retrieve_reranking(q, index, corpus, judge)
        transformed = retrieve_query_transformation(
            q, index, corpus, judge, rewriter=lambda text: text
        )
        assert transformed.top_docs == rerank.top_docs
        assert transformed.query_id == rerank.query_id
        assert transformed.rewritten_query == q.text
        assert rerank.rewritten_query is None

    def test_retrieval_keys_off_rewritten_text(self, embedder):
        corpus = Corpus(
            name="c",
            documents=(
                doc("d1", "insomnia strategies nighttime anxiety"),
                doc("d2", "cant sleep mind racing"),
            ),
        )
        index = build_document_index(corpus, embedder)
        mapping = {"cant sleep, mind racing": "strategies for insomnia and nighttime anxiety"}
        result = retrieve_query_transformation(
            query("cant sleep, mind racing"),
            index,
            corpus,
            judge=lambda q, d: 50,
            rewriter=lambda text: mapping[text],
        )
        assert result.rewritten_query == "strategies for insomnia and nighttime anxiety"
        assert result.top_docs[0].doc_id == "d1"

    def test_rewriter_failure_surfaces(self, embedder):
        corpus = Corpus(name="c", documents=(doc("d1", "alpha"),))
        index = build_document_index(corpus, embedder)

        def broken(text):
            raise RuntimeError("rewriter down")

        with pytest.raises(RuntimeError, match="rewriter down"):
            retrieve_query_transformation(
                query("alpha"), index, corpus, judge=lambda q, d: 50, rewriter=broken
            )

    def test_end_to_end_determinism_with_gateway(self, embedder):
        corpus = Corpus(
            name="c",
            documents=(doc("d1", "alpha beta"), doc("d2", "beta gamma"), doc("d3", "gamma")),
        )
        index = build_document_index(corpus, embedder)

        def run():
            gateway = Gateway(MockProvider(seed=6), sleep=lambda s: None)
            return retrieve_query_transformation(
                query("alpha gamma"),
                index,
                corpus,
                judge=make_gateway_judge(gateway),
                rewriter=make_gateway_rewriter(gateway),
            )

        assert run() == run()


class TestPipelineInvariants:
    @pytest.mark.parametrize("n_docs", [1, 2, 3, 5])
    def test_all_pipelines_return_min3_distinct(self, embedder, n_docs):
        docs = tuple(doc(f"d{i}", f"alpha tok{i}") for i in range(n_docs))
        corpus = Corpus(name="c", documents=docs)
        doc_index = build_document_index(corpus, embedder)
        chunk_index = build_chunk_index(corpus, embedder)
        judge = make_mock_judge(0)
        q = query("alpha")
        results = [
            retrieve_baseline(q, doc_index),
            retrieve_hierarchical(q, chunk_index, corpus, judge),
            retrieve_reranking(q, doc_index, corpus, judge),
            retrieve_query_transformation(q, doc_index, corpus, judge, rewriter=lambda t: t),
        ]
        for result in results:
            ids = [d.doc_id for d in result.top_docs]
            assert len(ids) == min(3, n_docs)
            assert len(set(ids)) == len(ids)

    def test_judged_pipelines_nonincreasing_in_judge_score(self, embedder):
        docs = tuple(doc(f"d{i}", f"alpha tok{i}") for i in range(8))
        corpus = Corpus(name="c", documents=docs)
        doc_index = build_document_index(corpus, embedder)
        chunk_index = build_chunk_index(corpus, embedder)
        judge = make_mock_judge(2)
        q = query("alpha tok1 tok2")
        for result in (
            retrieve_hierarchical(q, chunk_index, corpus, judge),
            retrieve_reranking(q, doc_index, corpus, judge),
        ):
            scores = [d.judge_score for d in result.top_docs]
            assert scores == sorted(scores, reverse=True)

    def test_rewritten_query_only_on_transformation(self, embedder):
        corpus = Corpus(name="c", documents=(doc("d1", "alpha"),))
        index = build_document_index(corpus, embedder)
        result = retrieve_baseline(query("alpha"), index)
        assert result.pipeline is Pipeline.BASELINE
        assert result.rewritten_query is None
