"""Command-line interface.

Subcommands cover the full pipeline: ingest, annotate, gaps, plan,
build-corpus, generate, index, eval, thresholds, report. Global flags
--config, --seed, --provider, and --cache-dir apply to every subcommand.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import annotate as annotate_mod
from . import config as config_mod
from .corpus import (
    Corpus,
    IngestError,
    Source,
    Split,
    ingest_documents,
    ingest_queries,
    load_taxonomy,
    percent_increase,
    read_records,
    write_corpus,
    write_queries,
    write_records,
)
from .evaluation import (
    CorpusInfo,
    LadderPoint,
    Pipeline,
    doc_reduction_report,
    emit_report,
    emit_threshold_report,
    run_grid,
)
from .gaps import GapParams, GapWeights, analyze_gaps, read_gap_report, write_gap_report
from .gateway import make_gateway_judge, make_gateway_rewriter
from .planner import (
    ArticleMetadata,
    build_directed_corpus,
    build_nondirected_corpus,
    generate_synthetic_doc,
    read_plan,
    allocate_quotas,
    score_external_pool,
    write_plan,
)
from .retrieval import build_chunk_index, build_document_index, save_index


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None, help="YAML config file.")
@click.option("--seed", type=int, default=None, help="Override the provider seed.")
@click.option("--provider", type=click.Choice(["mock", "http"]), default=None, help="Override the provider kind.")
@click.option("--cache-dir", type=click.Path(), default=None, help="Override the cache directory.")
@click.pass_context
def main(ctx: click.Context, config_path, seed, provider, cache_dir) -> None:
    """Gap-directed corpus augmentation and retrieval evaluation."""
    cfg = config_mod.load_config(config_path)
    cfg = config_mod.apply_overrides(cfg, seed=seed, provider=provider, cache_dir=cache_dir)
    ctx.obj = cfg


def _cfg(ctx: click.Context) -> config_mod.Config:
    return ctx.obj


def _load_corpus(path: str, source: str, taxonomy_path: str | None) -> Corpus:
    taxonomy = load_taxonomy(taxonomy_path) if taxonomy_path else None
    return ingest_documents(path, Source(source), taxonomy)


@main.command()
@click.argument("kind", type=click.Choice(["documents", "queries"]))
@click.argument("input_path", type=click.Path(exists=True))
@click.option("-o", "--output", required=True, type=click.Path())
@click.option("--source", type=click.Choice([s.value for s in Source]), default="baseline")
@click.option("--split", type=click.Choice([s.value for s in Split]), default="train")
@click.option("--taxonomy", "taxonomy_path", type=click.Path(exists=True), default=None)
def ingest(kind, input_path, output, source, split, taxonomy_path) -> None:
    """Validate and normalize a documents or queries file."""
    taxonomy = load_taxonomy(taxonomy_path) if taxonomy_path else None
    try:
        if kind == "documents":
            corpus = ingest_documents(input_path, Source(source), taxonomy)
            write_corpus(corpus, output)
            click.echo(f"ingested {len(corpus)} documents -> {output}")
        else:
            queries = ingest_queries(input_path, Split(split), taxonomy)
            write_queries(queries, output)
            click.echo(f"ingested {len(queries)} queries -> {output}")
    except IngestError as exc:
        raise click.ClickException(str(exc))


@main.command()
@click.argument("kind", type=click.Choice(["documents", "queries"]))
@click.argument("input_path", type=click.Path(exists=True))
@click.option("-o", "--output", required=True, type=click.Path())
@click.option("--taxonomy", "taxonomy_path", required=True, type=click.Path(exists=True))
@click.option("--labelings", "labelings_path", type=click.Path(), default=None, help="Sidecar file for full weightings.")
@click.option("--relabel", is_flag=True, help="Also relabel records that already carry a subtopic.")
@click.pass_context
def annotate(ctx, kind, input_path, output, taxonomy_path, labelings_path, relabel) -> None:
    """Assign taxonomy subtopics to records via the classification prompt."""
    cfg = _cfg(ctx)
    taxonomy = load_taxonomy(taxonomy_path)
    gateway = config_mod.make_gateway(cfg)
    params = config_mod.provider_params(cfg)
    records = [record for _, record in read_records(input_path)]
    todo = []
    for record in records:
        if record.get("subtopic") and not relabel:
            continue
        if kind == "queries":
            text = record["text"]
        else:
            bodies = [s.get("body", "") for s in record.get("sections", [])]
            if "body" in record:
                bodies.append(record["body"])
            text = " ".join([record.get("title", "")] + bodies)
        todo.append((record["id"], text))
    labelings, failures = annotate_mod.label_batch(todo, taxonomy, gateway, params)
    for record in records:
        labeling = labelings.get(record["id"])
        if labeling is not None:
            record["subtopic"] = labeling.primary
    write_records(output, records)
    if labelings_path:
        annotate_mod.write_labelings(labelings, labelings_path)
    for item_id, reason in failures:
        click.echo(f"failed: {item_id}: {reason}", err=True)
    click.echo(f"labeled {len(labelings)}/{len(todo)} records -> {output}")


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--queries", "queries_path", required=True, type=click.Path(exists=True))
@click.option("--taxonomy", "taxonomy_path", required=True, type=click.Path(exists=True))
@click.option("-o", "--output", required=True, type=click.Path())
@click.option("--coverage-only", is_flag=True, help="Skip usefulness judging.")
@click.pass_context
def gaps(ctx, corpus_path, queries_path, taxonomy_path, output, coverage_only) -> None:
    """Compute the per-subtopic gap report from a corpus and train queries."""
    cfg = _cfg(ctx)
    taxonomy = load_taxonomy(taxonomy_path)
    corpus = ingest_documents(corpus_path, Source.BASELINE, taxonomy)
    queries = ingest_queries(queries_path, Split.TRAIN, taxonomy)
    judge = None
    if not coverage_only:
        gateway = config_mod.make_gateway(cfg)
        judge = make_gateway_judge(gateway, config_mod.provider_params(cfg))
    params = GapParams(total_docs=len(corpus), smoothing=cfg.smoothing, exponent=cfg.exponent)
    weights = GapWeights(coverage=cfg.coverage_weight, usefulness=cfg.usefulness_weight)
    report = analyze_gaps(corpus, queries, taxonomy, params, weights, judge)
    write_gap_report(report, output)
    click.echo(f"wrote gap report for {len(report)} subtopics -> {output}")


@main.command()
@click.option("--gaps", "gaps_path", required=True, type=click.Path(exists=True))
@click.option("--pool", "pool_path", required=True, type=click.Path(exists=True), help="External documents file; availability comes from its subtopic counts.")
@click.option("--budget", required=True, type=int)
@click.option("-o", "--output", required=True, type=click.Path())
def plan(gaps_path, pool_path, budget, output) -> None:
    """Turn gap scores into per-subtopic document quotas."""
    report = read_gap_report(gaps_path)
    pool = ingest_documents(pool_path, Source.REFERENCE)
    availability = pool.doc_count_by_subtopic()
    scores = {g.subtopic: g.hybrid for g in report}
    try:
        quota_plan = allocate_quotas(scores, budget, availability)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    write_plan(quota_plan, scores, output)
    click.echo(f"planned {quota_plan.budget} docs across {sum(1 for a in quota_plan.allocations.values() if a)} subtopics -> {output}")


@main.command("build-corpus")
@click.argument("arm", type=click.Choice(["directed", "nondirected"]))
@click.option("--baseline", "baseline_path", required=True, type=click.Path(exists=True))
@click.option("--pool", "pool_path", required=True, type=click.Path(exists=True))
@click.option("--plan", "plan_path", type=click.Path(exists=True), default=None, help="Quota plan (directed).")
@click.option("--queries", "queries_path", type=click.Path(exists=True), default=None, help="Train queries for pool scoring (directed).")
@click.option("--size", type=int, default=None, help="Sample size (nondirected).")
@click.option("--sample-seed", type=int, default=None, help="Sampling seed (nondirected); defaults to the ladder seed.")
@click.option("--name", default=None)
@click.option("-o", "--output", required=True, type=click.Path())
@click.pass_context
def build_corpus(ctx, arm, baseline_path, pool_path, plan_path, queries_path, size, sample_seed, name, output) -> None:
    """Assemble a Directed or Non-Directed augmented corpus."""
    cfg = _cfg(ctx)
    baseline = ingest_documents(baseline_path, Source.BASELINE)
    pool = ingest_documents(pool_path, Source.REFERENCE)
    if arm == "directed":
        if plan_path is None or queries_path is None:
            raise click.ClickException("directed builds need --plan and --queries")
        quota_plan = read_plan(plan_path)
        queries = ingest_queries(queries_path, Split.TRAIN)
        gateway = config_mod.make_gateway(cfg)
        judge = make_gateway_judge(gateway, config_mod.provider_params(cfg))
        scored, skipped = score_external_pool(pool.documents, queries, judge)
        if skipped:
            click.echo(f"skipped {len(skipped)} pool docs without scoreable queries", err=True)
        corpus = build_directed_corpus(baseline, scored, quota_plan, name)
    else:
        if size is None:
            raise click.ClickException("nondirected builds need --size")
        seed = sample_seed if sample_seed is not None else cfg.ladder_seed
        corpus = build_nondirected_corpus(baseline, list(pool.documents), size, seed, name)
    write_corpus(corpus, output)
    pct = percent_increase(corpus, len(baseline))
    click.echo(f"built {corpus.name}: {len(corpus)} docs (+{pct:.1f}%) -> {output}")


@main.command()
@click.option("--metadata", "metadata_path", required=True, type=click.Path(exists=True), help="JSONL of {id?, title, headers, word_count, subtopic?}.")
@click.option("-o", "--output", required=True, type=click.Path())
@click.option("--flags", "flags_path", type=click.Path(), default=None, help="Sidecar for length-deviation flags.")
@click.pass_context
def generate(ctx, metadata_path, output, flags_path) -> None:
    """Generate synthetic articles from metadata records."""
    cfg = _cfg(ctx)
    gateway = config_mod.make_gateway(cfg)
    params = config_mod.provider_params(cfg)
    docs = []
    flags = []
    for lineno, record in read_records(metadata_path):
        metadata = ArticleMetadata(
            title=record["title"],
            headers=tuple(record.get("headers", [])),
            word_count=int(record["word_count"]),
        )
        doc_id = record.get("id") or f"synthetic-{lineno:05d}"
        result = generate_synthetic_doc(
            metadata, gateway, doc_id, subtopic=record.get("subtopic"), params=params
        )
        docs.append(result.document)
        flags.append(
            {
                "id": doc_id,
                "requested_words": result.requested_words,
                "generated_words": result.generated_words,
                "deviation": round(result.length_deviation, 4),
                "flagged": result.length_flagged,
            }
        )
    write_corpus(Corpus(name=Path(output).stem, documents=tuple(docs)), output)
    if flags_path:
        write_records(flags_path, flags)
    flagged = sum(1 for f in flags if f["flagged"])
    click.echo(f"generated {len(docs)} articles ({flagged} length-flagged) -> {output}")


@main.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--out-prefix", required=True, type=click.Path())
@click.option("--kind", type=click.Choice(["document", "chunk", "both"]), default="both")
@click.pass_context
def index(ctx, corpus_path, out_prefix, kind) -> None:
    """Build and persist vector indexes for a corpus."""
    cfg = _cfg(ctx)
    corpus = ingest_documents(corpus_path, Source.BASELINE)
    embedder = config_mod.make_embedder(cfg)
    prefix = Path(out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    written = []
    if kind in ("document", "both"):
        written += save_index(build_document_index(corpus, embedder), f"{prefix}.doc")
    if kind in ("chunk", "both"):
        written += save_index(build_chunk_index(corpus, embedder), f"{prefix}.chunk")
    click.echo(f"indexed {len(corpus)} docs -> " + ", ".join(str(p) for p in written))


@main.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True), help="JSONL of {name, path, arm, docs_added}.")
@click.option("--queries", "queries_path", required=True, type=click.Path(exists=True), help="Held-out test queries.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--pipelines", default="all", help="Comma-separated pipeline names or 'all'.")
@click.pass_context
def eval(ctx, manifest_path, queries_path, out_dir, pipelines) -> None:
    """Run the (corpus x pipeline) experiment grid over test queries."""
    cfg = _cfg(ctx)
    gateway = config_mod.make_gateway(cfg)
    params = config_mod.provider_params(cfg)
    judge = make_gateway_judge(gateway, params)
    rewriter = make_gateway_rewriter(gateway, params)
    embedder = config_mod.make_embedder(cfg)
    queries = ingest_queries(queries_path, Split.TEST)
    if pipelines == "all":
        chosen = list(Pipeline)
    else:
        chosen = [Pipeline(p.strip()) for p in pipelines.split(",")]
    entries = [record for _, record in read_records(manifest_path)]
    corpora = []
    info = {}
    for entry in entries:
        corpus = ingest_documents(entry["path"], Source.BASELINE, name=entry["name"])
        corpora.append(corpus)
        info[entry["name"]] = {"arm": entry["arm"], "docs_added": int(entry["docs_added"]), "total_docs": len(corpus)}
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = run_grid(
        corpora,
        chosen,
        queries,
        embedder,
        judge,
        rewriter,
        k_candidates=cfg.candidates,
        top_k=cfg.top_k,
        seed=cfg.provider.seed,
        out_dir=out / "cells",
    )
    rows = []
    for result in results:
        meta = info[result.spec.corpus_name]
        rows.append(
            {
                "corpus": result.spec.corpus_name,
                "pipeline": result.spec.pipeline.value,
                "avg_score": result.avg_score,
                "complete": result.complete,
                "arm": meta["arm"],
                "docs_added": meta["docs_added"],
                "total_docs": meta["total_docs"],
            }
        )
    rows.sort(key=lambda r: (r["corpus"], r["pipeline"]))
    write_records(out / "summary.jsonl", rows)
    incomplete = sum(1 for r in rows if not r["complete"])
    click.echo(f"ran {len(rows)} experiments ({incomplete} incomplete) -> {out / 'summary.jsonl'}")
    if incomplete:
        sys.exit(1)


def _load_summary(summary_path: str) -> tuple[list[dict], dict[str, CorpusInfo]]:
    rows = [record for _, record in read_records(summary_path)]
    info = {}
    for row in rows:
        info[row["corpus"]] = CorpusInfo(
            arm=row["arm"], docs_added=int(row["docs_added"]), total_docs=int(row["total_docs"])
        )
    return rows, info


def _arm_ladder(rows: list[dict], info: dict[str, CorpusInfo], arm: str, pipeline: Pipeline) -> list[LadderPoint]:
    points = []
    for row in rows:
        if row["pipeline"] != pipeline.value or row["avg_score"] is None:
            continue
        if row["arm"] not in (arm, "baseline"):
            continue
        meta = info[row["corpus"]]
        baseline_size = meta.total_docs - meta.docs_added
        points.append(
            LadderPoint(
                docs_added=meta.docs_added,
                percent_increase=percent_increase(meta.total_docs, baseline_size),
                avg_score=row["avg_score"],
            )
        )
    points.sort(key=lambda p: p.docs_added)
    return points


@main.command()
@click.option("--summary", "summary_path", required=True, type=click.Path(exists=True))
@click.option("--reference", default="reference", help="Corpus name holding the reference scores.")
@click.option("--ratio", type=float, default=0.95)
@click.option("--out", "out_dir", required=True, type=click.Path())
def thresholds(summary_path, reference, ratio, out_dir) -> None:
    """Smallest corpus per pipeline reaching the reference-score threshold."""
    rows, info = _load_summary(summary_path)
    reference_scores = {
        Pipeline(r["pipeline"]): r["avg_score"] for r in rows if r["corpus"] == reference
    }
    if not reference_scores:
        raise click.ClickException(f"no rows for reference corpus {reference!r}")
    directed = {p: _arm_ladder(rows, info, "directed", p) for p in Pipeline}
    nondirected = {p: _arm_ladder(rows, info, "nondirected", p) for p in Pipeline}
    try:
        report = doc_reduction_report(directed, nondirected, reference_scores, ratio)
    except ValueError as exc:
        raise click.ClickException(str(exc))
    written = emit_threshold_report(report, out_dir)
    click.echo("wrote " + ", ".join(str(p) for p in written))


@main.command()
@click.option("--summary", "summary_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--formats", default="csv,table,plot")
def report(summary_path, out_dir, formats) -> None:
    """Emit score reports (CSV, aligned tables, plot series)."""
    from .evaluation import ExperimentResult, ExperimentSpec

    rows, info = _load_summary(summary_path)
    results = [
        ExperimentResult(
            spec=ExperimentSpec(corpus_name=row["corpus"], pipeline=Pipeline(row["pipeline"])),
            avg_score=row["avg_score"],
            per_query=(),
            complete=row["complete"],
        )
        for row in rows
    ]
    written = emit_report(results, info, out_dir, formats=tuple(formats.split(",")))
    click.echo("wrote " + ", ".join(str(p) for p in written))


if __name__ == "__main__":
    main()
