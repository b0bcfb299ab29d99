"""Embeddings, an exact cosine index, and the four retrieval pipelines.

The index is a brute-force cosine scan: corpora here run hundreds to a few
thousand documents, where exactness is cheap and makes oracle equivalence
testable bit for bit. Vectors are L2-normalized once so cosine similarity
is a plain dot product. Tie-breaking everywhere: similarity descending,
then judge score descending, then doc id ascending.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np
import requests

from .corpus import Corpus, Query
from .gateway import JudgeFn, ProviderError, RewriteFn

DEFAULT_CANDIDATES = 20
DEFAULT_TOP_K = 3


class Pipeline(str, Enum):
    BASELINE = "baseline"
    HIERARCHICAL = "hierarchical"
    RERANKING = "reranking"
    QUERY_TRANSFORMATION = "query_transformation"


class IndexManifestError(ValueError):
    """Persisted index does not match the expected provider or corpus."""


class Embedder(Protocol):
    id: str
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


class HashedBagEmbedder:
    """Deterministic test embedder: tokens hashed into a fixed-dimension
    bag of counts, then L2-normalized."""

    def __init__(self, dim: int = 256):
        self.dim = dim
        self.id = f"hashed-bag-{dim}"

    @staticmethod
    def bucket(token: str, dim: int) -> int:
        digest = hashlib.sha256(token.encode("utf-8")).hexdigest()
        return int(digest, 16) % dim

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            raise ValueError("cannot embed empty text")
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in re.findall(r"\w+", text.lower()):
            vec[self.bucket(token, self.dim)] += 1.0
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ValueError("text produced no tokens to embed")
        return vec / norm


class HttpEmbedder:
    """OpenAI-style embeddings endpoint client; vectors are re-normalized."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        dim: int,
        api_key_env: str = "CORPUSGAP_API_KEY",
        timeout: float = 60.0,
        transport: Callable[..., requests.Response] | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.dim = dim
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.id = f"http:{model}"
        self._post = transport or requests.post

    def embed(self, text: str) -> np.ndarray:
        if not text.strip():
            raise ValueError("cannot embed empty text")
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        try:
            response = self._post(
                f"{self.endpoint}/embeddings",
                json={"model": self.model, "input": text},
                headers=headers,
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise ProviderError(f"embedding transport failure: {exc}") from exc
        if response.status_code != 200:
            raise ProviderError(f"embedding status {response.status_code}")
        vec = np.asarray(response.json()["data"][0]["embedding"], dtype=np.float64)
        if vec.shape != (self.dim,):
            raise ProviderError(f"expected dim {self.dim}, got {vec.shape}")
        return vec / float(np.linalg.norm(vec))


class CachedEmbedder:
    """Persistent embedding cache keyed by (provider id, text hash), so
    switching providers never serves stale vectors."""

    def __init__(self, inner: Embedder, cache_path: str | Path | None = None):
        self.inner = inner
        self.id = inner.id
        self.dim = inner.dim
        self.path = Path(cache_path) if cache_path is not None else None
        self._cache: dict[str, np.ndarray] = {}
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    if not line.strip():
                        continue
                    entry = json.loads(line)
                    if entry["provider"] == self.id:
                        self._cache[entry["text_sha"]] = np.asarray(
                            entry["vector"], dtype=np.float64
                        )

    def embed(self, text: str) -> np.ndarray:
        key = hashlib.sha256(text.encode("utf-8")).hexdigest()
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        vec = self.inner.embed(text)
        self._cache[key] = vec
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(
                    json.dumps(
                        {"provider": self.id, "text_sha": key, "vector": vec.tolist()},
                        sort_keys=True,
                    )
                )
                fh.write("\n")
        return vec


def corpus_fingerprint(corpus: Corpus) -> str:
    hasher = hashlib.sha256()
    for doc in sorted(corpus.documents, key=lambda d: d.id):
        hasher.update(doc.id.encode("utf-8"))
        hasher.update(b"\x1f")
        hasher.update(doc.text.encode("utf-8"))
        hasher.update(b"\x1e")
    return hasher.hexdigest()


@dataclass(frozen=True)
class Candidate:
    doc_id: str
    similarity: float


class SearchIndex:
    """Exact cosine index over unit vectors.

    Keys are doc ids (document level) or (doc id, section index) pairs
    (chunk level) and must be unique.
    """

    def __init__(self, keys: Sequence, matrix: np.ndarray, embedder: Embedder, corpus_hash: str, kind: str):
        if len(keys) == 0:
            raise ValueError("index must contain at least one entry")
        if len(set(keys)) != len(keys):
            raise ValueError("index keys must be unique")
        self.keys = list(keys)
        self.matrix = matrix
        self.embedder = embedder
        self.corpus_hash = corpus_hash
        self.kind = kind

    def __len__(self) -> int:
        return len(self.keys)

    def search(self, query_vec: np.ndarray, k: int) -> list[tuple[object, float]]:
        """Exact top-k by cosine; ties broken by ascending key."""
        if k < 1:
            raise ValueError("k must be at least 1")
        sims = self.matrix @ query_vec
        ranked = sorted(
            ((float(sims[i]), self.keys[i]) for i in range(len(self.keys))),
            key=lambda pair: (-pair[0], pair[1]),
        )
        return [(key, sim) for sim, key in ranked[:k]]

    def search_text(self, text: str, k: int) -> list[tuple[object, float]]:
        return self.search(self.embedder.embed(text), k)


def build_document_index(corpus: Corpus, embedder: Embedder) -> SearchIndex:
    if len(corpus) == 0:
        raise ValueError(f"corpus {corpus.name!r} is empty")
    keys = [doc.id for doc in corpus.documents]
    matrix = np.stack([embedder.embed(doc.text) for doc in corpus.documents])
    return SearchIndex(keys, matrix, embedder, corpus_fingerprint(corpus), kind="document")


def build_chunk_index(corpus: Corpus, embedder: Embedder) -> SearchIndex:
    """One entry per (title + section) chunk."""
    if len(corpus) == 0:
        raise ValueError(f"corpus {corpus.name!r} is empty")
    keys: list[tuple[str, int]] = []
    vectors = []
    for doc in corpus.documents:
        for i in range(len(doc.sections)):
            keys.append((doc.id, i))
            vectors.append(embedder.embed(doc.section_text(i)))
    return SearchIndex(keys, np.stack(vectors), embedder, corpus_fingerprint(corpus), kind="chunk")


def save_index(index: SearchIndex, prefix: str | Path) -> tuple[Path, Path]:
    entries_path = Path(f"{prefix}.entries.jsonl")
    manifest_path = Path(f"{prefix}.manifest.json")
    with open(entries_path, "w", encoding="utf-8") as fh:
        for key, row in zip(index.keys, index.matrix):
            key_json = list(key) if isinstance(key, tuple) else key
            fh.write(json.dumps({"key": key_json, "vector": row.tolist()}, sort_keys=True))
            fh.write("\n")
    manifest = {
        "provider_id": index.embedder.id,
        "dim": index.embedder.dim,
        "corpus_hash": index.corpus_hash,
        "entry_count": len(index),
        "kind": index.kind,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return entries_path, manifest_path


def load_index(
    prefix: str | Path,
    embedder: Embedder,
    expected_corpus_hash: str | None = None,
) -> SearchIndex:
    manifest = json.loads(Path(f"{prefix}.manifest.json").read_text(encoding="utf-8"))
    if manifest["provider_id"] != embedder.id:
        raise IndexManifestError(
            f"index built with provider {manifest['provider_id']!r}, not {embedder.id!r}"
        )
    if manifest["dim"] != embedder.dim:
        raise IndexManifestError(f"index dim {manifest['dim']} != embedder dim {embedder.dim}")
    if expected_corpus_hash is not None and manifest["corpus_hash"] != expected_corpus_hash:
        raise IndexManifestError("index corpus hash does not match the given corpus")
    keys = []
    vectors = []
    with open(Path(f"{prefix}.entries.jsonl"), encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            entry = json.loads(line)
            key = entry["key"]
            keys.append(tuple(key) if isinstance(key, list) else key)
            vectors.append(entry["vector"])
    if len(keys) != manifest["entry_count"]:
        raise IndexManifestError(
            f"index has {len(keys)} entries, manifest says {manifest['entry_count']}"
        )
    matrix = np.asarray(vectors, dtype=np.float64)
    return SearchIndex(keys, matrix, embedder, manifest["corpus_hash"], kind=manifest["kind"])


# --- pipelines --------------------------------------------------------------


@dataclass(frozen=True)
class RetrievedDoc:
    doc_id: str
    judge_score: int | None
    similarity: float


@dataclass(frozen=True)
class RetrievalResult:
    query_id: str
    pipeline: Pipeline
    top_docs: tuple[RetrievedDoc, ...]
    rewritten_query: str | None = None

    def __post_init__(self) -> None:
        if (self.rewritten_query is not None) != (
            self.pipeline is Pipeline.QUERY_TRANSFORMATION
        ):
            raise ValueError("rewritten_query present iff pipeline is query_transformation")


def _require_document_index(index: SearchIndex) -> None:
    if index.kind != "document":
        raise ValueError("a document-level index is required here")


def retrieve_baseline(
    query: Query,
    corpus_index: SearchIndex,
    k_candidates: int = DEFAULT_CANDIDATES,
    top_k: int = DEFAULT_TOP_K,
) -> RetrievalResult:
    """Pure similarity ranking; the most similar documents win."""
    _require_document_index(corpus_index)
    hits = corpus_index.search_text(query.text, k_candidates)
    top = [
        RetrievedDoc(doc_id=key, judge_score=None, similarity=sim)
        for key, sim in hits[:top_k]
    ]
    return RetrievalResult(query_id=query.id, pipeline=Pipeline.BASELINE, top_docs=tuple(top))


def merge_chunk_candidates(
    chunk_index: SearchIndex,
    query_vec: np.ndarray,
    k_candidates: int,
    min_docs: int,
) -> list[Candidate]:
    """Top chunks merged back into their parent documents.

    A document's similarity is the max over its retrieved chunks. If the
    top-k chunks collapse onto fewer than min_docs parents, the scan depth
    is doubled until enough parents are found or the index is exhausted.
    """
    if chunk_index.kind != "chunk":
        raise ValueError("a chunk-level index is required here")
    k = k_candidates
    while True:
        hits = chunk_index.search(query_vec, k)
        best: dict[str, float] = {}
        for (doc_id, _section), sim in hits:
            if doc_id not in best:
                best[doc_id] = sim
        if len(best) >= min_docs or k >= len(chunk_index):
            break
        k = min(k * 2, len(chunk_index))
    candidates = [Candidate(doc_id=d, similarity=s) for d, s in best.items()]
    candidates.sort(key=lambda c: (-c.similarity, c.doc_id))
    return candidates


def _judge_and_rank(
    query_text: str,
    candidates: Sequence[Candidate],
    corpus: Corpus,
    judge: JudgeFn,
    top_k: int,
) -> tuple[RetrievedDoc, ...]:
    judged = [
        RetrievedDoc(
            doc_id=c.doc_id,
            judge_score=judge(query_text, corpus.document(c.doc_id)),
            similarity=c.similarity,
        )
        for c in candidates
    ]
    judged.sort(key=lambda d: (-d.judge_score, -d.similarity, d.doc_id))
    return tuple(judged[:top_k])


def retrieve_hierarchical(
    query: Query,
    chunk_index: SearchIndex,
    corpus: Corpus,
    judge: JudgeFn,
    k_candidates: int = DEFAULT_CANDIDATES,
    top_k: int = DEFAULT_TOP_K,
) -> RetrievalResult:
    """Chunk-level retrieval merged to whole documents, then judge-ranked,
    avoiding fragmentary results."""
    query_vec = chunk_index.embedder.embed(query.text)
    min_docs = min(top_k, len(corpus))
    candidates = merge_chunk_candidates(chunk_index, query_vec, k_candidates, min_docs)
    top = _judge_and_rank(query.text, candidates, corpus, judge, top_k)
    return RetrievalResult(query_id=query.id, pipeline=Pipeline.HIERARCHICAL, top_docs=top)


def retrieve_reranking(
    query: Query,
    corpus_index: SearchIndex,
    corpus: Corpus,
    judge: JudgeFn,
    k_candidates: int = DEFAULT_CANDIDATES,
    top_k: int = DEFAULT_TOP_K,
) -> RetrievalResult:
    """Dense retrieval for recall, judge scoring for precision."""
    _require_document_index(corpus_index)
    hits = corpus_index.search_text(query.text, k_candidates)
    candidates = [Candidate(doc_id=key, similarity=sim) for key, sim in hits]
    top = _judge_and_rank(query.text, candidates, corpus, judge, top_k)
    return RetrievalResult(query_id=query.id, pipeline=Pipeline.RERANKING, top_docs=top)


def retrieve_query_transformation(
    query: Query,
    corpus_index: SearchIndex,
    corpus: Corpus,
    judge: JudgeFn,
    rewriter: RewriteFn,
    k_candidates: int = DEFAULT_CANDIDATES,
    top_k: int = DEFAULT_TOP_K,
) -> RetrievalResult:
    """Rewrite the query for specificity, then retrieve and judge-rank.

    Rewriter failures surface; silently falling back to the raw query
    would hide a broken pipeline stage.
    """
    _require_document_index(corpus_index)
    rewritten = rewriter(query.text)
    hits = corpus_index.search_text(rewritten, k_candidates)
    candidates = [Candidate(doc_id=key, similarity=sim) for key, sim in hits]
    top = _judge_and_rank(query.text, candidates, corpus, judge, top_k)
    return RetrievalResult(
        query_id=query.id,
        pipeline=Pipeline.QUERY_TRANSFORMATION,
        top_docs=top,
        rewritten_query=rewritten,
    )
