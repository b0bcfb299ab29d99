"""corpusgap: find topic-level content gaps in a document corpus from real
user queries, plan gap-directed augmentations, and evaluate retrieval
quality across four pipelines."""

__version__ = "0.1.0"

from .corpus import (
    Corpus,
    Document,
    Query,
    Section,
    Source,
    Split,
    Taxonomy,
    ingest_documents,
    ingest_queries,
    load_taxonomy,
    percent_increase,
)
from .gaps import GapParams, GapWeights, SubtopicGap, analyze_gaps
from .planner import QuotaPlan, allocate_quotas, build_directed_corpus, build_nondirected_corpus
from .retrieval import Pipeline, RetrievalResult
from .evaluation import ExperimentResult, LadderPoint, doc_reduction_report, find_threshold

__all__ = [
    "Corpus",
    "Document",
    "Query",
    "Section",
    "Source",
    "Split",
    "Taxonomy",
    "ingest_documents",
    "ingest_queries",
    "load_taxonomy",
    "percent_increase",
    "GapParams",
    "GapWeights",
    "SubtopicGap",
    "analyze_gaps",
    "QuotaPlan",
    "allocate_quotas",
    "build_directed_corpus",
    "build_nondirected_corpus",
    "Pipeline",
    "RetrievalResult",
    "ExperimentResult",
    "LadderPoint",
    "doc_reduction_report",
    "find_threshold",
    "__version__",
]
