"""Experiment grid over (corpus, pipeline) cells, aggregation, and the
threshold analysis of how small an augmented corpus can get while staying
within a fixed fraction of the reference corpus score.

Threshold semantics, recorded in every report: a rung qualifies when its
score ratio to the reference, rounded half-up to 3 decimals, is >= the
target ratio (default 0.950).
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import Corpus, Query, Split, percent_increase
from .gateway import JudgeFn, RewriteFn
from .retrieval import (
    DEFAULT_CANDIDATES,
    DEFAULT_TOP_K,
    Embedder,
    Pipeline,
    RetrievalResult,
    SearchIndex,
    build_chunk_index,
    build_document_index,
    retrieve_baseline,
    retrieve_hierarchical,
    retrieve_query_transformation,
    retrieve_reranking,
)

THRESHOLD_RULE = "score ratio to reference, rounded half-up to 3 decimals, must reach the target"


class ExperimentError(RuntimeError):
    """A pipeline failure aborted an experiment; partial results were kept."""

    def __init__(self, message: str, partial: "ExperimentResult"):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class ExperimentSpec:
    corpus_name: str
    pipeline: Pipeline
    seed: int = 0


@dataclass(frozen=True)
class QueryOutcome:
    query_id: str
    doc_scores: tuple[tuple[str, int], ...]


@dataclass(frozen=True)
class ExperimentResult:
    spec: ExperimentSpec
    avg_score: float | None
    per_query: tuple[QueryOutcome, ...]
    complete: bool = True


class CorpusResources:
    """Indexes for one corpus, built once and shared across pipelines."""

    def __init__(self, corpus: Corpus, embedder: Embedder):
        self.corpus = corpus
        self.doc_index: SearchIndex = build_document_index(corpus, embedder)
        self.chunk_index: SearchIndex = build_chunk_index(corpus, embedder)


def run_query(
    pipeline: Pipeline,
    query: Query,
    resources: CorpusResources,
    judge: JudgeFn,
    rewriter: RewriteFn | None,
    k_candidates: int = DEFAULT_CANDIDATES,
    top_k: int = DEFAULT_TOP_K,
) -> RetrievalResult:
    if pipeline is Pipeline.BASELINE:
        return retrieve_baseline(query, resources.doc_index, k_candidates, top_k)
    if pipeline is Pipeline.HIERARCHICAL:
        return retrieve_hierarchical(
            query, resources.chunk_index, resources.corpus, judge, k_candidates, top_k
        )
    if pipeline is Pipeline.RERANKING:
        return retrieve_reranking(
            query, resources.doc_index, resources.corpus, judge, k_candidates, top_k
        )
    if pipeline is Pipeline.QUERY_TRANSFORMATION:
        if rewriter is None:
            raise ValueError("query_transformation needs a rewriter")
        return retrieve_query_transformation(
            query, resources.doc_index, resources.corpus, judge, rewriter, k_candidates, top_k
        )
    raise ValueError(f"unknown pipeline {pipeline!r}")


def run_experiment(
    spec: ExperimentSpec,
    resources: CorpusResources,
    test_queries: Sequence[Query],
    judge: JudgeFn,
    rewriter: RewriteFn | None = None,
    k_candidates: int = DEFAULT_CANDIDATES,
    top_k: int = DEFAULT_TOP_K,
    out_path: str | Path | None = None,
) -> ExperimentResult:
    """Run one (corpus, pipeline) cell over the held-out test queries.

    The aggregate is the mean judge score over all queries and their top
    retrieved documents. Judge scores already attached by a judged
    pipeline are reused; baseline results are judged here. On a pipeline
    error the partial result is persisted, marked incomplete, and raised.
    """
    bad = [q.id for q in test_queries if q.split is not Split.TEST]
    if bad:
        raise ValueError(f"non-test queries in evaluation set: {bad[:5]}")
    outcomes: list[QueryOutcome] = []
    try:
        for query in test_queries:
            result = run_query(
                spec.pipeline, query, resources, judge, rewriter, k_candidates, top_k
            )
            doc_scores = tuple(
                (
                    d.doc_id,
                    d.judge_score
                    if d.judge_score is not None
                    else judge(query.text, resources.corpus.document(d.doc_id)),
                )
                for d in result.top_docs
            )
            outcomes.append(QueryOutcome(query_id=query.id, doc_scores=doc_scores))
    except Exception as exc:
        partial = ExperimentResult(
            spec=spec, avg_score=None, per_query=tuple(outcomes), complete=False
        )
        if out_path is not None:
            save_experiment(partial, out_path)
        raise ExperimentError(f"experiment {spec.corpus_name}/{spec.pipeline.value} aborted: {exc}", partial) from exc
    all_scores = [score for outcome in outcomes for _, score in outcome.doc_scores]
    avg = sum(all_scores) / len(all_scores) if all_scores else None
    result = ExperimentResult(spec=spec, avg_score=avg, per_query=tuple(outcomes))
    if out_path is not None:
        save_experiment(result, out_path)
    return result


def save_experiment(result: ExperimentResult, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        meta = {
            "kind": "experiment",
            "corpus": result.spec.corpus_name,
            "pipeline": result.spec.pipeline.value,
            "seed": result.spec.seed,
            "avg_score": result.avg_score,
            "complete": result.complete,
        }
        fh.write(json.dumps(meta, sort_keys=True) + "\n")
        for outcome in result.per_query:
            row = {
                "kind": "query",
                "query_id": outcome.query_id,
                "docs": [[doc_id, score] for doc_id, score in outcome.doc_scores],
            }
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def load_experiment(path: str | Path) -> ExperimentResult:
    with open(path, encoding="utf-8") as fh:
        lines = [json.loads(line) for line in fh if line.strip()]
    meta = lines[0]
    outcomes = tuple(
        QueryOutcome(
            query_id=row["query_id"],
            doc_scores=tuple((d[0], d[1]) for d in row["docs"]),
        )
        for row in lines[1:]
    )
    return ExperimentResult(
        spec=ExperimentSpec(
            corpus_name=meta["corpus"],
            pipeline=Pipeline(meta["pipeline"]),
            seed=meta["seed"],
        ),
        avg_score=meta["avg_score"],
        per_query=outcomes,
        complete=meta["complete"],
    )


def run_grid(
    corpora: Sequence[Corpus],
    pipelines: Sequence[Pipeline],
    test_queries: Sequence[Query],
    embedder: Embedder,
    judge: JudgeFn,
    rewriter: RewriteFn | None = None,
    k_candidates: int = DEFAULT_CANDIDATES,
    top_k: int = DEFAULT_TOP_K,
    seed: int = 0,
    out_dir: str | Path | None = None,
) -> list[ExperimentResult]:
    """Every (corpus, pipeline) cell; incomplete cells are kept and flagged."""
    results: list[ExperimentResult] = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    for corpus in corpora:
        resources = CorpusResources(corpus, embedder)
        for pipeline in pipelines:
            spec = ExperimentSpec(corpus_name=corpus.name, pipeline=pipeline, seed=seed)
            path = out / f"{corpus.name}__{pipeline.value}.jsonl" if out is not None else None
            try:
                results.append(
                    run_experiment(
                        spec, resources, test_queries, judge, rewriter, k_candidates, top_k, path
                    )
                )
            except ExperimentError as exc:
                results.append(exc.partial)
    return results


# --- threshold analysis -----------------------------------------------------


@dataclass(frozen=True)
class LadderPoint:
    docs_added: int
    percent_increase: float
    avg_score: float


class ThresholdNotReached(ValueError):
    """No ladder rung reaches the required fraction of the reference score."""


def _rounded_ratio(score: float, reference: float) -> Decimal:
    return (Decimal(repr(score)) / Decimal(repr(reference))).quantize(
        Decimal("0.001"), rounding=ROUND_HALF_UP
    )


def find_threshold(
    ladder: Sequence[LadderPoint],
    reference_score: float,
    ratio: float = 0.95,
) -> LadderPoint:
    """Smallest rung whose score reaches the given fraction of reference.

    The ladder must be sorted by size ascending. The comparison rounds
    the score ratio half-up to 3 decimals before testing against the
    target, so e.g. 0.9496 qualifies at ratio 0.95.
    """
    if not ladder:
        raise ValueError("empty ladder")
    if reference_score <= 0:
        raise ValueError("reference score must be positive")
    sizes = [point.docs_added for point in ladder]
    if sizes != sorted(sizes):
        raise ValueError("ladder must be sorted by size ascending")
    target = Decimal(repr(ratio))
    for point in ladder:
        if _rounded_ratio(point.avg_score, reference_score) >= target:
            return point
    raise ThresholdNotReached(
        f"no rung reaches {ratio:.0%} of reference score {reference_score}"
    )


@dataclass(frozen=True)
class ThresholdRow:
    pipeline: Pipeline
    directed: LadderPoint
    nondirected: LadderPoint
    pct_decrease: float


@dataclass(frozen=True)
class ThresholdReport:
    rows: tuple[ThresholdRow, ...]
    ratio: float
    rule: str = THRESHOLD_RULE


def doc_reduction_report(
    directed: Mapping[Pipeline, Sequence[LadderPoint]],
    nondirected: Mapping[Pipeline, Sequence[LadderPoint]],
    reference_scores: Mapping[Pipeline, float],
    ratio: float = 0.95,
) -> ThresholdReport:
    """Per-pipeline smallest qualifying rung for both arms, plus the
    document-count saving of directed over non-directed selection."""
    rows = []
    for pipeline in directed:
        d_point = find_threshold(directed[pipeline], reference_scores[pipeline], ratio)
        nd_point = find_threshold(nondirected[pipeline], reference_scores[pipeline], ratio)
        decrease = (
            (nd_point.docs_added - d_point.docs_added) / nd_point.docs_added * 100.0
            if nd_point.docs_added
            else 0.0
        )
        rows.append(
            ThresholdRow(
                pipeline=pipeline,
                directed=d_point,
                nondirected=nd_point,
                pct_decrease=decrease,
            )
        )
    return ThresholdReport(rows=tuple(rows), ratio=ratio)


# --- report emission --------------------------------------------------------


@dataclass(frozen=True)
class CorpusInfo:
    arm: str
    docs_added: int
    total_docs: int

    @property
    def pct_increase(self) -> float:
        return percent_increase(self.total_docs, self.total_docs - self.docs_added)


PIPELINE_ORDER = (
    Pipeline.BASELINE,
    Pipeline.HIERARCHICAL,
    Pipeline.RERANKING,
    Pipeline.QUERY_TRANSFORMATION,
)


def _score_cell(value: float | None) -> str:
    return f"{value:.4f}" if value is not None else ""


def emit_report(
    results: Sequence[ExperimentResult],
    corpus_info: Mapping[str, CorpusInfo],
    out_dir: str | Path,
    formats: Sequence[str] = ("csv", "table", "plot"),
) -> list[Path]:
    """Write score reports; byte-identical for identical inputs.

    Emits a flat CSV, aligned text tables per arm, and per-(pipeline, arm)
    plot series of (total docs, avg score). Missing or incomplete cells
    are listed in warnings.txt.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    by_cell: dict[tuple[str, Pipeline], ExperimentResult] = {
        (r.spec.corpus_name, r.spec.pipeline): r for r in results
    }
    names = sorted(corpus_info, key=lambda n: (corpus_info[n].arm, corpus_info[n].total_docs, n))

    warnings: list[str] = []
    for name in names:
        for pipeline in PIPELINE_ORDER:
            cell = by_cell.get((name, pipeline))
            if cell is None:
                warnings.append(f"missing cell: {name}/{pipeline.value}")
            elif not cell.complete:
                warnings.append(f"incomplete cell: {name}/{pipeline.value}")
    if not results:
        warnings.insert(0, "no experiment results were provided")

    if "csv" in formats:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(
            ["corpus", "arm", "docs_added", "total_docs", "pct_increase", "pipeline", "avg_score", "complete"]
        )
        for name in names:
            info = corpus_info[name]
            for pipeline in PIPELINE_ORDER:
                cell = by_cell.get((name, pipeline))
                if cell is None:
                    continue
                writer.writerow(
                    [
                        name,
                        info.arm,
                        info.docs_added,
                        info.total_docs,
                        f"{info.pct_increase:.1f}",
                        pipeline.value,
                        _score_cell(cell.avg_score),
                        str(cell.complete).lower(),
                    ]
                )
        path = out / "scores.csv"
        path.write_text(buffer.getvalue(), encoding="utf-8")
        written.append(path)

    if "table" in formats:
        lines = []
        arms = sorted({info.arm for info in corpus_info.values()})
        for arm in arms:
            arm_names = [n for n in names if corpus_info[n].arm == arm]
            lines.append(f"== {arm} ==")
            header = f"{'corpus':<28}{'total':>8}{'+%':>10}" + "".join(
                f"{p.value:>22}" for p in PIPELINE_ORDER
            )
            lines.append(header)
            for name in arm_names:
                info = corpus_info[name]
                cells = "".join(
                    f"{_score_cell(by_cell[(name, p)].avg_score):>22}"
                    if (name, p) in by_cell
                    else f"{'-':>22}"
                    for p in PIPELINE_ORDER
                )
                lines.append(
                    f"{name:<28}{info.total_docs:>8}{info.pct_increase:>9.1f}%" + cells
                )
            lines.append("")
        path = out / "scores.txt"
        path.write_text("\n".join(lines), encoding="utf-8")
        written.append(path)

    if "plot" in formats:
        plot_dir = out / "plot"
        plot_dir.mkdir(exist_ok=True)
        arms = sorted({info.arm for info in corpus_info.values()})
        for pipeline in PIPELINE_ORDER:
            for arm in arms:
                series = []
                for name in names:
                    info = corpus_info[name]
                    cell = by_cell.get((name, pipeline))
                    if info.arm == arm and cell is not None and cell.avg_score is not None:
                        series.append((info.total_docs, cell.avg_score))
                series.sort()
                buffer = io.StringIO()
                writer = csv.writer(buffer, lineterminator="\n")
                writer.writerow(["total_docs", "avg_score"])
                for total, score in series:
                    writer.writerow([total, f"{score:.4f}"])
                path = plot_dir / f"{pipeline.value}_{arm}.csv"
                path.write_text(buffer.getvalue(), encoding="utf-8")
                written.append(path)

    if warnings:
        path = out / "warnings.txt"
        path.write_text("\n".join(warnings) + "\n", encoding="utf-8")
        written.append(path)
    return written


def emit_threshold_report(report: ThresholdReport, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(
        [
            "pipeline",
            "directed_pct_increase",
            "nondirected_pct_increase",
            "directed_docs_added",
            "nondirected_docs_added",
            "pct_decrease_in_docs_added",
        ]
    )
    for row in report.rows:
        writer.writerow(
            [
                row.pipeline.value,
                f"{row.directed.percent_increase:.1f}",
                f"{row.nondirected.percent_increase:.1f}",
                row.directed.docs_added,
                row.nondirected.docs_added,
                f"{row.pct_decrease:.1f}",
            ]
        )
    csv_path = out / "thresholds.csv"
    csv_path.write_text(buffer.getvalue(), encoding="utf-8")
    written.append(csv_path)

    lines = [
        f"threshold target: {report.ratio:.3f} of reference score",
        f"rule: {report.rule}",
        "",
        f"{'pipeline':<24}{'directed +%':>14}{'nondirected +%':>16}"
        f"{'directed docs':>16}{'nondirected docs':>18}{'% decrease':>12}",
    ]
    for row in report.rows:
        lines.append(
            f"{row.pipeline.value:<24}{row.directed.percent_increase:>13.1f}%"
            f"{row.nondirected.percent_increase:>15.1f}%"
            f"{row.directed.docs_added:>16}{row.nondirected.docs_added:>18}"
            f"{row.pct_decrease:>11.1f}%"
        )
    txt_path = out / "thresholds.txt"
    txt_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(txt_path)
    return written
