"""Domain types and file ingestion for corpora, queries, and the topic taxonomy.

All record files are line-delimited JSON (one object per line), which keeps
them streamable and diff-friendly. Values are immutable after construction
and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator, Sequence


class Source(str, Enum):
    """Where a document came from."""

    BASELINE = "baseline"
    REFERENCE = "reference"
    SYNTHETIC = "synthetic"


class Split(str, Enum):
    """Train/test membership of a query. Immutable after assignment."""

    TRAIN = "train"
    TEST = "test"


class IngestError(ValueError):
    """Malformed or invalid input record; message carries file and line."""


def word_count(*texts: str) -> int:
    """Number of whitespace-separated tokens across all given strings."""
    return sum(len(t.split()) for t in texts)


@dataclass(frozen=True)
class Section:
    heading: str
    body: str


@dataclass(frozen=True)
class Document:
    """A corpus item. Untitled flat-body records are wrapped as one section
    with an empty heading so section-level processing degrades gracefully."""

    id: str
    source: Source
    title: str
    sections: tuple[Section, ...]
    subtopic: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("document id must be non-empty")
        if not self.sections:
            raise ValueError(f"document {self.id!r} must have at least one section")

    @property
    def word_count(self) -> int:
        """Whitespace-token count of the title plus all section text."""
        parts = [self.title]
        for s in self.sections:
            parts.append(s.heading)
            parts.append(s.body)
        return word_count(*parts)

    @property
    def text(self) -> str:
        """Canonical full text: title, then each section's heading and body."""
        parts = [self.title]
        for s in self.sections:
            parts.append(f"{s.heading}\n{s.body}")
        return "\n".join(parts)

    def section_text(self, index: int) -> str:
        """Canonical chunk text for one section: title plus that section."""
        s = self.sections[index]
        return f"{self.title}\n{s.heading}\n{s.body}"


@dataclass(frozen=True)
class Query:
    id: str
    text: str
    split: Split
    subtopic: str | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("query id must be non-empty")
        if not self.text.strip():
            raise ValueError(f"query {self.id!r} has empty text")


@dataclass(frozen=True)
class MainTopic:
    name: str
    subtopics: tuple[str, ...]


@dataclass(frozen=True)
class Taxonomy:
    """Ordered main topics, each with ordered subtopics.

    Subtopics are addressed by their topic-qualified name "Topic: Subtopic",
    which must be globally unique.
    """

    topics: tuple[MainTopic, ...]
    _ids: tuple[str, ...] = field(init=False, repr=False, compare=False)
    _order: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        ids = []
        for topic in self.topics:
            for sub in topic.subtopics:
                ids.append(f"{topic.name}: {sub}")
        order = {}
        for i, qualified in enumerate(ids):
            if qualified in order:
                raise ValueError(f"duplicate subtopic name {qualified!r}")
            order[qualified] = i
        object.__setattr__(self, "_ids", tuple(ids))
        object.__setattr__(self, "_order", order)

    @property
    def subtopic_ids(self) -> tuple[str, ...]:
        return self._ids

    def __contains__(self, qualified: str) -> bool:
        return qualified in self._order

    def index(self, qualified: str) -> int:
        """Position of a subtopic in taxonomy order; used for tie-breaking."""
        try:
            return self._order[qualified]
        except KeyError:
            raise KeyError(f"unknown subtopic {qualified!r}") from None


@dataclass(frozen=True)
class Corpus:
    name: str
    documents: tuple[Document, ...]
    _by_id: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        by_id = {}
        for doc in self.documents:
            if doc.id in by_id:
                raise ValueError(f"duplicate document id {doc.id!r} in corpus {self.name!r}")
            by_id[doc.id] = doc
        object.__setattr__(self, "_by_id", by_id)

    def __len__(self) -> int:
        return len(self.documents)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._by_id

    def document(self, doc_id: str) -> Document:
        return self._by_id[doc_id]

    def doc_count_by_subtopic(self) -> dict[str, int]:
        counts: dict[str, int] = {}
        for doc in self.documents:
            if doc.subtopic is not None:
                counts[doc.subtopic] = counts.get(doc.subtopic, 0) + 1
        return counts


# --- line-delimited record I/O -------------------------------------------


def read_records(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (line_number, record) for each non-blank line of a JSONL file."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"{path}:{lineno}: malformed record: {exc}") from exc
            if not isinstance(record, dict):
                raise IngestError(f"{path}:{lineno}: record must be an object")
            yield lineno, record


def write_records(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, ensure_ascii=False, sort_keys=True))
            fh.write("\n")


def _sections_from_record(record: dict, where: str) -> tuple[Section, ...]:
    if "sections" in record:
        raw = record["sections"]
        if not isinstance(raw, list) or not raw:
            raise IngestError(f"{where}: 'sections' must be a non-empty list")
        sections = []
        for s in raw:
            if not isinstance(s, dict) or "body" not in s:
                raise IngestError(f"{where}: each section needs a 'body'")
            sections.append(Section(heading=str(s.get("heading", "")), body=str(s["body"])))
        return tuple(sections)
    if "body" in record:
        return (Section(heading="", body=str(record["body"])),)
    raise IngestError(f"{where}: record needs 'sections' or a flat 'body'")


def document_to_record(doc: Document) -> dict:
    record = {
        "id": doc.id,
        "source": doc.source.value,
        "title": doc.title,
        "sections": [{"heading": s.heading, "body": s.body} for s in doc.sections],
        "word_count": doc.word_count,
    }
    if doc.subtopic is not None:
        record["subtopic"] = doc.subtopic
    return record


def ingest_documents(
    path: str | Path,
    source: Source,
    taxonomy: Taxonomy | None = None,
    name: str | None = None,
) -> Corpus:
    """Load a documents file into a Corpus, recomputing word counts.

    Rejects duplicate ids and, when a taxonomy is given, unknown subtopic
    names. Records may carry a 'source' field; the given source wins.
    """
    docs: list[Document] = []
    seen: set[str] = set()
    for lineno, record in read_records(path):
        where = f"{path}:{lineno}"
        doc_id = record.get("id")
        if not doc_id or not isinstance(doc_id, str):
            raise IngestError(f"{where}: missing or invalid 'id'")
        if doc_id in seen:
            raise IngestError(f"{where}: duplicate document id {doc_id!r}")
        seen.add(doc_id)
        subtopic = record.get("subtopic")
        if subtopic is not None:
            if not isinstance(subtopic, str):
                raise IngestError(f"{where}: 'subtopic' must be a string")
            if taxonomy is not None and subtopic not in taxonomy:
                raise IngestError(f"{where}: unknown subtopic {subtopic!r}")
        docs.append(
            Document(
                id=doc_id,
                source=source,
                title=str(record.get("title", "")),
                sections=_sections_from_record(record, where),
                subtopic=subtopic,
            )
        )
    return Corpus(name=name or Path(path).stem, documents=tuple(docs))


def write_corpus(corpus: Corpus, path: str | Path) -> None:
    write_records(path, (document_to_record(d) for d in corpus.documents))


def query_to_record(query: Query) -> dict:
    record = {"id": query.id, "text": query.text, "split": query.split.value}
    if query.subtopic is not None:
        record["subtopic"] = query.subtopic
    return record


def ingest_queries(
    path: str | Path,
    split: Split,
    taxonomy: Taxonomy | None = None,
) -> list[Query]:
    """Load a queries file; every returned query carries the given split tag."""
    queries: list[Query] = []
    seen: set[str] = set()
    for lineno, record in read_records(path):
        where = f"{path}:{lineno}"
        query_id = record.get("id")
        if not query_id or not isinstance(query_id, str):
            raise IngestError(f"{where}: missing or invalid 'id'")
        if query_id in seen:
            raise IngestError(f"{where}: duplicate query id {query_id!r}")
        seen.add(query_id)
        text = record.get("text")
        if not isinstance(text, str) or not text.strip():
            raise IngestError(f"{where}: query {query_id!r} has empty text")
        subtopic = record.get("subtopic")
        if subtopic is not None and taxonomy is not None and subtopic not in taxonomy:
            raise IngestError(f"{where}: unknown subtopic {subtopic!r}")
        queries.append(Query(id=query_id, text=text, split=split, subtopic=subtopic))
    return queries


def write_queries(queries: Sequence[Query], path: str | Path) -> None:
    write_records(path, (query_to_record(q) for q in queries))


def check_split_disjoint(train: Sequence[Query], test: Sequence[Query]) -> None:
    """Train and test query sets must not share ids."""
    overlap = {q.id for q in train} & {q.id for q in test}
    if overlap:
        raise IngestError(f"query ids present in both splits: {sorted(overlap)}")


def ingest_query_split(
    train_path: str | Path,
    test_path: str | Path,
    taxonomy: Taxonomy | None = None,
) -> tuple[list[Query], list[Query]]:
    train = ingest_queries(train_path, Split.TRAIN, taxonomy)
    test = ingest_queries(test_path, Split.TEST, taxonomy)
    check_split_disjoint(train, test)
    return train, test


def load_taxonomy(path: str | Path) -> Taxonomy:
    """Load a taxonomy file: one main topic per line with its subtopic list."""
    topics = []
    for lineno, record in read_records(path):
        where = f"{path}:{lineno}"
        name = record.get("name")
        subs = record.get("subtopics")
        if not name or not isinstance(name, str):
            raise IngestError(f"{where}: missing topic 'name'")
        if not isinstance(subs, list) or not all(isinstance(s, str) for s in subs):
            raise IngestError(f"{where}: 'subtopics' must be a list of strings")
        topics.append(MainTopic(name=name, subtopics=tuple(subs)))
    try:
        return Taxonomy(topics=tuple(topics))
    except ValueError as exc:
        raise IngestError(f"{path}: {exc}") from exc


def write_taxonomy(taxonomy: Taxonomy, path: str | Path) -> None:
    write_records(
        path,
        ({"name": t.name, "subtopics": list(t.subtopics)} for t in taxonomy.topics),
    )


def percent_increase(corpus: Corpus | int, baseline_size: int) -> float:
    """Corpus growth over the baseline, in percent.

    Returns the exact value; reports format it at one decimal. Strictly
    monotone in corpus size for a fixed baseline.
    """
    if baseline_size <= 0:
        raise ValueError("baseline_size must be positive")
    size = len(corpus) if isinstance(corpus, Corpus) else int(corpus)
    if size < baseline_size:
        raise ValueError(f"corpus size {size} smaller than baseline {baseline_size}")
    return (size - baseline_size) / baseline_size * 100.0
