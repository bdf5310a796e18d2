"""Command line interface for the curation pipeline.

``dwc-curator run --config pipeline.json`` executes the full pipeline;
the remaining subcommands run individual phases over document JSONL
files so stages can be inspected or re-run in isolation.

Exit codes: 0 on success, 1 for configuration problems, 2 for runtime
failures.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path
from typing import Callable

import click

from . import __version__
from .annotate import ContextError, load_taxonomy, validate_context
from .clean import CleanConfigError, CleanOptions, clean_general, clean_specialized, load_clean_rules
from .dedup import MinHashParams, dedup_exact, dedup_near
from .filtering import (
    ThresholdError,
    load_default_lexicons,
    load_thresholds,
    train_ngram_lm,
)
from .ingest import IngestSpec, detect_language, ingest
from .mix import MixConfigError, sample_stage, stage_plan_from_dict, write_manifest
from .model import read_documents, write_documents
from .pack import PackedBin, Span, TokenStore, assign_lengths, pack_best_fit, write_shards
from .pipeline import ConfigError, load_config, run_pipeline
from .vocab import VocabError, load_vocab, save_vocab, train_bpe, encode as vocab_encode

CONFIG_ENVVAR = "DWC_CURATOR_CONFIG"

_CONFIG_ERRORS = (
    ConfigError,
    CleanConfigError,
    MixConfigError,
    ThresholdError,
    VocabError,
    ContextError,
)


def _execute(action: Callable[[], None]) -> None:
    try:
        action()
    except _CONFIG_ERRORS as exc:
        click.echo(f"configuration error: {exc}", err=True)
        sys.exit(1)
    except (click.ClickException, SystemExit):
        raise
    except Exception as exc:
        click.echo(f"runtime error: {type(exc).__name__}: {exc}", err=True)
        sys.exit(2)


@click.group()
@click.version_option(version=__version__, prog_name="dwc-curator")
def main() -> None:
    """Deterministic corpus curation pipeline."""


@main.command("run")
@click.option(
    "--config",
    "config_path",
    envvar=CONFIG_ENVVAR,
    default=None,
    type=click.Path(),
    help=f"Pipeline configuration JSON (or set {CONFIG_ENVVAR}).",
)
@click.option("--workers", type=int, default=None, help="Override worker count.")
@click.option(
    "--no-intermediate",
    is_flag=True,
    help="Skip writing per-phase intermediate document files.",
)
def run_command(config_path: str | None, workers: int | None, no_intermediate: bool) -> None:
    """Run every pipeline phase from a configuration file."""
    if config_path is None:
        click.echo(
            f"configuration error: --config is required (or set {CONFIG_ENVVAR})",
            err=True,
        )
        sys.exit(1)

    def action() -> None:
        config = load_config(config_path)
        if no_intermediate:
            config.write_intermediate = False
        report = run_pipeline(config, workers=workers)
        for phase in report.phases:
            click.echo(
                f"{phase.name:<8} in={phase.docs_in:<7} out={phase.docs_out:<7} "
                f"dropped={phase.dropped:<6} {phase.seconds:.2f}s"
            )
        click.echo(f"report: {Path(config.out_dir) / 'report.json'}")

    _execute(action)


@main.command("ingest")
@click.option("--input", "input_path", required=True, type=click.Path())
@click.option("--format", "fmt", default="jsonl", show_default=True)
@click.option("--text-field", default="text", show_default=True)
@click.option("--paragraph-split", is_flag=True)
@click.option("--out", "out_path", required=True, type=click.Path())
def ingest_command(
    input_path: str, fmt: str, text_field: str, paragraph_split: bool, out_path: str
) -> None:
    """Read raw records into document JSONL with language guesses."""

    def action() -> None:
        spec = IngestSpec(
            path=input_path,
            format=fmt,
            text_field=text_field,
            paragraph_split=paragraph_split,
        )
        try:
            spec.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        docs, report = ingest(spec)
        for doc in docs:
            doc.language = detect_language(doc.text)
        write_documents(out_path, docs)
        click.echo(json.dumps(report.to_dict(), sort_keys=True))

    _execute(action)


@main.command("clean")
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--rules", "rules_path", default=None, type=click.Path())
@click.option("--fold-case", default="off", show_default=True)
@click.option("--zh-fold", default="off", show_default=True)
@click.option("--keep-emoji", is_flag=True, help="Do not strip emoji.")
def clean_command(
    in_path: str, out_path: str, rules_path: str | None, fold_case: str,
    zh_fold: str, keep_emoji: bool,
) -> None:
    """Apply general and rule-based cleaning to documents."""

    def action() -> None:
        options = CleanOptions(
            fold_case=fold_case, zh_fold=zh_fold, strip_emoji=not keep_emoji
        )
        try:
            options.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        rules = load_clean_rules(rules_path) if rules_path else []
        kept = []
        dropped = 0
        for doc in read_documents(in_path):
            doc.text, _ = clean_general(doc.text, options)
            if rules:
                doc, _ = clean_specialized(doc, rules)
            was_dropped = doc.verdicts and doc.verdicts[-1].decision.value == "drop"
            if was_dropped or not doc.text:
                dropped += 1
                continue
            kept.append(doc)
        write_documents(out_path, kept)
        click.echo(f"kept {len(kept)} dropped {dropped}")

    _execute(action)


@main.command("filter")
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--thresholds", "thresholds_path", default=None, type=click.Path())
@click.option("--min-quality", default="low", show_default=True)
@click.option("--lm-order", default=2, show_default=True)
@click.option("--lm-alpha", default=1.0, show_default=True)
@click.option("--lm-sample", default=512, show_default=True)
def filter_command(
    in_path: str, out_path: str, thresholds_path: str | None,
    min_quality: str, lm_order: int, lm_alpha: float, lm_sample: int,
) -> None:
    """Compute indicators, assign quality, and screen for safety."""

    def action() -> None:
        from .filtering import compute_indicators, safety_screen
        from .model import FilterVerdict, QUALITY_ORDER, QualityClass, VerdictDecision, VerdictStage

        if min_quality not in ("low", "medium", "high"):
            raise ConfigError(f"--min-quality invalid: {min_quality!r}")
        thresholds = load_thresholds(Path(thresholds_path) if thresholds_path else None)
        lexicons = load_default_lexicons()
        docs = list(read_documents(in_path))
        lm = None
        if lm_sample > 0 and docs:
            lm = train_ngram_lm(
                [d.text for d in docs[:lm_sample]], n=lm_order, alpha=lm_alpha
            )
        min_rank = QUALITY_ORDER[QualityClass(min_quality)]
        kept = []
        dropped = 0
        for doc in docs:
            doc.indicators = compute_indicators(doc, lexicons, thresholds, lm)
            if QUALITY_ORDER[doc.indicators.quality] < min_rank:
                doc.verdicts.append(
                    FilterVerdict(
                        stage=VerdictStage.FILTER,
                        decision=VerdictDecision.DROP,
                        reason_code="quality_below_minimum",
                        detail=doc.indicators.quality.value,
                    )
                )
                dropped += 1
                continue
            decision, _ = safety_screen(doc, lexicons, thresholds.safety)
            if decision is VerdictDecision.DROP:
                dropped += 1
                continue
            kept.append(doc)
        write_documents(out_path, kept)
        click.echo(f"kept {len(kept)} dropped {dropped}")

    _execute(action)


@main.command("annotate")
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--taxonomy", "taxonomy_path", default=None, type=click.Path())
@click.option("--on-invalid", default="flag", show_default=True, type=click.Choice(["flag", "drop"]))
def annotate_command(
    in_path: str, out_path: str, taxonomy_path: str | None, on_invalid: str
) -> None:
    """Validate context records and fill audience levels from indicators."""

    def action() -> None:
        from .model import FilterVerdict, VerdictDecision, VerdictStage

        taxonomy = load_taxonomy(taxonomy_path) if taxonomy_path else None
        kept = []
        dropped = 0
        violations_total = 0
        for doc in read_documents(in_path):
            if doc.context is not None:
                if doc.context.audience_level is None and doc.indicators is not None:
                    if doc.indicators.audience.value != "unknown":
                        doc.context.audience_level = doc.indicators.audience
                violations = validate_context(doc.context, taxonomy)
                if violations:
                    violations_total += 1
                    if on_invalid == "drop":
                        dropped += 1
                        continue
                    doc.verdicts.append(
                        FilterVerdict(
                            stage=VerdictStage.FILTER,
                            decision=VerdictDecision.FLAG,
                            reason_code="context_violations",
                            detail="; ".join(violations)[:200],
                        )
                    )
            kept.append(doc)
        write_documents(out_path, kept)
        click.echo(f"kept {len(kept)} dropped {dropped} violations {violations_total}")

    _execute(action)


@main.command("dedup")
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--no-near", is_flag=True, help="Exact deduplication only.")
@click.option("--shingle-k", default=5, show_default=True)
@click.option("--verify-threshold", default=0.8, show_default=True)
@click.option("--seed", default=0, show_default=True)
def dedup_command(
    in_path: str, out_path: str, no_near: bool, shingle_k: int,
    verify_threshold: float, seed: int,
) -> None:
    """Remove exact and near duplicate documents."""

    def action() -> None:
        docs = list(read_documents(in_path))
        docs, exact_report = dedup_exact(docs)
        reports = {"exact": exact_report.to_dict()}
        if not no_near:
            params = MinHashParams(
                shingle_k=shingle_k, verify_threshold=verify_threshold, seed=seed
            )
            try:
                params.validate()
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            docs, near_report = dedup_near(docs, params)
            reports["near"] = near_report.to_dict()
        write_documents(out_path, docs)
        click.echo(json.dumps(reports, sort_keys=True))

    _execute(action)


@main.command("vocab")
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--mode", default="byte", show_default=True, type=click.Choice(["byte", "whitespace"]))
@click.option("--merges", "num_merges", default=256, show_default=True)
@click.option("--sample", "sample_docs", default=512, show_default=True)
def vocab_command(
    in_path: str, out_dir: str, mode: str, num_merges: int, sample_docs: int
) -> None:
    """Train a byte-pair vocabulary from document text."""

    def action() -> None:
        texts = []
        for doc in read_documents(in_path):
            texts.append(doc.text)
            if len(texts) >= sample_docs:
                break
        vocab = train_bpe(texts, num_merges=num_merges, mode=mode)
        directory = Path(out_dir)
        directory.mkdir(parents=True, exist_ok=True)
        save_vocab(vocab, directory / "vocab.txt", directory / "merges.txt")
        click.echo(f"vocab size {vocab.size} merges {len(vocab.merges)}")

    _execute(action)


@main.command("pack")
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--vocab-dir", required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--mode", default="none", show_default=True, type=click.Choice(["preamble", "none"]))
@click.option("--lengths", default="8192", show_default=True, help="Comma separated.")
@click.option("--ratios", default="", help="Comma separated, defaults to uniform.")
@click.option("--order", default="size_desc", show_default=True, type=click.Choice(["size_desc", "input"]))
@click.option("--bins-per-shard", default=1024, show_default=True)
@click.option("--seed", default=0, show_default=True)
def pack_command(
    in_path: str, vocab_dir: str, out_dir: str, mode: str, lengths: str,
    ratios: str, order: str, bins_per_shard: int, seed: int,
) -> None:
    """Encode documents and pack token chunks into binary shards."""

    def action() -> None:
        from .annotate import compose_training_text

        try:
            length_values = tuple(int(x) for x in lengths.split(",") if x)
            ratio_values = tuple(float(x) for x in ratios.split(",") if x)
        except ValueError as exc:
            raise ConfigError(f"bad --lengths/--ratios: {exc}") from exc
        if not length_values:
            raise ConfigError("--lengths must name at least one length")
        if not ratio_values:
            ratio_values = tuple(1.0 for _ in length_values)
        if len(ratio_values) != len(length_values):
            raise ConfigError("--ratios must match --lengths")
        vocab = load_vocab(Path(vocab_dir) / "vocab.txt", Path(vocab_dir) / "merges.txt")
        out = Path(out_dir)
        store_dir = out / "tokens" / mode
        doc_ids: list[str] = []
        with TokenStore(store_dir) as store:
            for doc in read_documents(in_path):
                if mode == "preamble" and doc.context is not None:
                    text = compose_training_text(doc, "preamble")
                else:
                    text = doc.text
                store.append(doc.id, vocab_encode(text, vocab))
                doc_ids.append(doc.id)
        store = TokenStore.open_read(store_dir)
        lengths_map = store.lengths
        doc_lengths = [lengths_map[d] for d in doc_ids]
        assignment = assign_lengths(doc_lengths, length_values, ratio_values, seed=seed)
        summary = {}
        for target in sorted(set(length_values)):
            chunk_meta = []
            chunk_lens = []
            for doc_id, doc_len, chosen in zip(doc_ids, doc_lengths, assignment):
                if chosen != target or doc_len == 0:
                    continue
                pos = 0
                chunk_idx = 0
                while pos < doc_len:
                    size = min(target, doc_len - pos)
                    chunk_meta.append((doc_id, chunk_idx, pos, size))
                    chunk_lens.append(size)
                    pos += size
                    chunk_idx += 1
            bins, stats = pack_best_fit(chunk_lens, target, order=order)
            packed = []
            token_cache: dict[str, list[int]] = {}
            for members in bins:
                ids: list[int] = []
                spans = []
                for ci in members:
                    doc_id, chunk_idx, pos, size = chunk_meta[ci]
                    if doc_id not in token_cache:
                        token_cache[doc_id] = list(store.get(doc_id))
                    start = len(ids)
                    ids.extend(token_cache[doc_id][pos : pos + size])
                    spans.append(Span(doc_id, chunk_idx, start, start + size))
                packed.append(PackedBin(capacity=target, ids=ids, spans=spans))
            shard_dir = out / "shards" / mode / f"L{target}"
            write_shards(shard_dir, packed, bins_per_shard=bins_per_shard)
            summary[str(target)] = stats.to_dict()
        click.echo(json.dumps(summary, sort_keys=True))

    _execute(action)


@main.command("mix")
@click.option("--in", "in_path", required=True, type=click.Path())
@click.option("--tokens-dir", required=True, type=click.Path())
@click.option("--plan", "plan_path", required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
def mix_command(
    in_path: str, tokens_dir: str, plan_path: str, out_dir: str, seed: int
) -> None:
    """Sample stage manifests from documents and their token counts."""

    def action() -> None:
        try:
            raw = json.loads(Path(plan_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read stage plan: {exc}") from exc
        plan = stage_plan_from_dict(raw)
        store = TokenStore.open_read(Path(tokens_dir))
        counts = store.lengths
        pool = []
        for doc in read_documents(in_path):
            tokens = counts.get(doc.id, 0)
            if tokens <= 0:
                continue
            domain = (
                doc.context.category_primary
                if doc.context and doc.context.category_primary
                else "general"
            )
            pool.append((doc.id, domain, tokens))
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        summary = {}
        for stage in plan.stages:
            rows, fills = sample_stage(stage, pool, seed=seed)
            write_manifest(out / f"{stage.name}.jsonl", rows)
            summary[stage.name] = {d: f.to_dict() for d, f in fills.items()}
        click.echo(json.dumps(summary, sort_keys=True))

    _execute(action)


@main.command("stats")
@click.option("--report", "report_path", required=True, type=click.Path())
def stats_command(report_path: str) -> None:
    """Summarize a pipeline run report."""

    def action() -> None:
        try:
            raw = json.loads(Path(report_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read report: {exc}") from exc
        click.echo(f"seed {raw.get('seed')} workers {raw.get('workers')}")
        for phase in raw.get("phases", []):
            click.echo(
                f"{phase['name']:<8} in={phase['docs_in']:<7} out={phase['docs_out']:<7} "
                f"dropped={phase['dropped']:<6} {phase['seconds']}s"
            )
        if raw.get("failed_phase"):
            click.echo(f"FAILED at {raw['failed_phase']}: {raw.get('error')}")
        fallbacks = raw.get("scorer_fallbacks", 0)
        if fallbacks:
            click.echo(f"scorer fallbacks: {fallbacks}")

    _execute(action)


if __name__ == "__main__":
    main()
