"""End-to-end corpus curation pipeline.

Phases run in a fixed order: ingest, clean, filter, annotate, dedup,
vocabulary training and encoding, packing, and stage mixing.  Every
random choice derives from the run seed plus a phase label, and worker
parallelism preserves document order, so two runs with the same
configuration produce byte-identical artifacts (the run report, which
carries timings, is the one exception).

Per-document transforms (clean, filter, encode) are pure functions and
can fan out over a process pool; phase state is published to a module
global before the pool forks so workers inherit it without re-loading.
"""

from __future__ import annotations

import hashlib
import json
import multiprocessing
import time
from array import array
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from .annotate import compose_training_text, load_taxonomy, validate_context
from .clean import CleanOptions, CleanRule, clean_general, clean_specialized, load_clean_rules
from .dedup import DedupReport, MinHashParams, dedup_exact, dedup_near
from .filtering import (
    Lexicons,
    NGramLM,
    ScorerConfig,
    Thresholds,
    apply_external_scores,
    classify_quality,
    compute_indicators,
    load_default_lexicons,
    load_thresholds,
    safety_screen,
    score_document,
    train_ngram_lm,
)
from .ingest import IngestSpec, detect_language, ingest
from .mix import (
    DEFAULT_STAGE_TEMPLATE,
    StagePlan,
    StageSpec,
    sample_stage,
    stage_plan_from_dict,
    write_manifest,
)
from .model import (
    Document,
    FilterVerdict,
    QUALITY_ORDER,
    QualityClass,
    VerdictDecision,
    VerdictStage,
    write_documents,
)
from .pack import (
    PackedBin,
    Span,
    TokenStore,
    assign_lengths,
    pack_best_fit,
    write_shards,
)
from .seeds import derive_seed
from .vocab import Vocabulary, encode, save_vocab, train_bpe

PHASE_ORDER = (
    "ingest",
    "clean",
    "filter",
    "annotate",
    "dedup",
    "vocab",
    "pack",
    "mix",
)


class ConfigError(ValueError):
    """Raised when the pipeline configuration is malformed."""


# ---------------------------------------------------------------------------
# Configuration.
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class LMSettings:
    order: int = 2
    alpha: float = 1.0
    sample_docs: int = 512


@dataclass(slots=True)
class VocabSettings:
    mode: str = "byte"
    num_merges: int = 256
    sample_docs: int = 512


@dataclass(slots=True)
class PackSettings:
    lengths: tuple[int, ...] = (8192,)
    ratios: tuple[float, ...] = (1.0,)
    order: str = "size_desc"
    bins_per_shard: int = 1024

    def validate(self) -> None:
        if not self.lengths:
            raise ConfigError("pack.lengths must not be empty")
        if len(self.lengths) != len(self.ratios):
            raise ConfigError("pack.lengths and pack.ratios differ in length")
        if any(length < 1 for length in self.lengths):
            raise ConfigError("pack.lengths entries must be positive")
        if any(r <= 0 for r in self.ratios):
            raise ConfigError("pack.ratios entries must be positive")
        if self.order not in ("size_desc", "input"):
            raise ConfigError(f"pack.order invalid: {self.order!r}")


@dataclass(slots=True)
class FilterSettings:
    min_quality: str = "low"
    thresholds_path: str | None = None
    scorer_url: str | None = None
    scorer_timeout_s: float = 1.0

    def validate(self) -> None:
        if self.min_quality not in ("low", "medium", "high"):
            raise ConfigError(f"filter.min_quality invalid: {self.min_quality!r}")


@dataclass(slots=True)
class AnnotateSettings:
    taxonomy_path: str | None = None
    on_invalid: str = "flag"

    def validate(self) -> None:
        if self.on_invalid not in ("flag", "drop"):
            raise ConfigError(f"annotate.on_invalid invalid: {self.on_invalid!r}")


@dataclass(slots=True)
class DedupSettings:
    near_enabled: bool = True
    minhash: MinHashParams = field(default_factory=MinHashParams)


@dataclass(slots=True)
class MixSettings:
    total_tokens: int | None = None
    stage_template: tuple[Mapping, ...] = DEFAULT_STAGE_TEMPLATE
    domain_weights: dict[str, float] | None = None
    explicit_plan: StagePlan | None = None


@dataclass(slots=True)
class PipelineConfig:
    inputs: list[IngestSpec]
    out_dir: Path
    seed: int = 0
    workers: int = 1
    write_intermediate: bool = True
    clean_options: CleanOptions = field(default_factory=CleanOptions)
    clean_rules: list[CleanRule] = field(default_factory=list)
    filter: FilterSettings = field(default_factory=FilterSettings)
    annotate: AnnotateSettings = field(default_factory=AnnotateSettings)
    dedup: DedupSettings = field(default_factory=DedupSettings)
    lm: LMSettings = field(default_factory=LMSettings)
    vocab: VocabSettings = field(default_factory=VocabSettings)
    pack: PackSettings = field(default_factory=PackSettings)
    mix: MixSettings = field(default_factory=MixSettings)
    config_digest: str = ""

    def validate(self) -> None:
        if not self.inputs:
            raise ConfigError("at least one input is required")
        for spec in self.inputs:
            try:
                spec.validate()
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        try:
            self.clean_options.validate()
            self.dedup.minhash.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        self.filter.validate()
        self.annotate.validate()
        self.pack.validate()
        if self.vocab.mode not in ("byte", "whitespace"):
            raise ConfigError(f"vocab.mode invalid: {self.vocab.mode!r}")
        if self.vocab.num_merges < 0:
            raise ConfigError("vocab.num_merges must be non-negative")


_TOP_LEVEL_KEYS = {
    "inputs",
    "out_dir",
    "seed",
    "workers",
    "write_intermediate",
    "clean",
    "filter",
    "annotate",
    "dedup",
    "lm",
    "vocab",
    "pack",
    "mix",
}


def config_from_dict(raw: Mapping, base_dir: Path | None = None) -> PipelineConfig:
    """Build and validate a pipeline configuration from parsed JSON.

    Relative paths resolve against ``base_dir`` (the config file's
    directory).  Unknown top-level keys are rejected to catch typos.
    """
    if not isinstance(raw, Mapping):
        raise ConfigError("configuration root must be an object")
    unknown = set(raw) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
    base = Path(base_dir) if base_dir is not None else Path(".")

    def resolve(path_str: str) -> str:
        p = Path(path_str)
        return str(p if p.is_absolute() else base / p)

    try:
        inputs = []
        for item in raw.get("inputs", []):
            inputs.append(
                IngestSpec(
                    path=resolve(str(item["path"])),
                    format=str(item.get("format", "jsonl")),
                    text_field=str(item.get("text_field", "text")),
                    concat_fields=[str(f) for f in item.get("concat_fields", [])],
                    paragraph_split=bool(item.get("paragraph_split", False)),
                )
            )
        if "out_dir" not in raw:
            raise ConfigError("out_dir is required")
        clean_raw = dict(raw.get("clean", {}))
        rules_source = clean_raw.pop("rules_path", None)
        rules_inline = clean_raw.pop("rules", None)
        options = CleanOptions(**clean_raw)
        rules: list[CleanRule] = []
        if rules_source is not None:
            rules = load_clean_rules(resolve(str(rules_source)))
        elif rules_inline is not None:
            rules = load_clean_rules(list(rules_inline))
        filter_raw = dict(raw.get("filter", {}))
        if "thresholds_path" in filter_raw and filter_raw["thresholds_path"]:
            filter_raw["thresholds_path"] = resolve(str(filter_raw["thresholds_path"]))
        annotate_raw = dict(raw.get("annotate", {}))
        if "taxonomy_path" in annotate_raw and annotate_raw["taxonomy_path"]:
            annotate_raw["taxonomy_path"] = resolve(str(annotate_raw["taxonomy_path"]))
        dedup_raw = dict(raw.get("dedup", {}))
        minhash = MinHashParams(**dedup_raw.get("minhash", {}))
        dedup = DedupSettings(
            near_enabled=bool(dedup_raw.get("near_enabled", True)), minhash=minhash
        )
        mix_raw = dict(raw.get("mix", {}))
        explicit_plan = None
        if "stages" in mix_raw:
            explicit_plan = stage_plan_from_dict({"stages": mix_raw["stages"]})
        mix = MixSettings(
            total_tokens=(
                int(mix_raw["total_tokens"]) if "total_tokens" in mix_raw else None
            ),
            stage_template=tuple(
                mix_raw.get("stage_template", DEFAULT_STAGE_TEMPLATE)
            ),
            domain_weights=(
                {str(k): float(v) for k, v in mix_raw["domain_weights"].items()}
                if "domain_weights" in mix_raw
                else None
            ),
            explicit_plan=explicit_plan,
        )
        pack_raw = dict(raw.get("pack", {}))
        pack_lengths = tuple(int(x) for x in pack_raw.get("lengths", (8192,)))
        pack_ratios = tuple(float(x) for x in pack_raw.get("ratios", ()))
        if not pack_ratios:
            pack_ratios = tuple(1.0 for _ in pack_lengths)
        pack = PackSettings(
            lengths=pack_lengths,
            ratios=pack_ratios,
            order=str(pack_raw.get("order", "size_desc")),
            bins_per_shard=int(pack_raw.get("bins_per_shard", 1024)),
        )
        config = PipelineConfig(
            inputs=inputs,
            out_dir=Path(resolve(str(raw["out_dir"]))),
            seed=int(raw.get("seed", 0)),
            workers=int(raw.get("workers", 1)),
            write_intermediate=bool(raw.get("write_intermediate", True)),
            clean_options=options,
            clean_rules=rules,
            filter=FilterSettings(**filter_raw),
            annotate=AnnotateSettings(**annotate_raw),
            dedup=dedup,
            lm=LMSettings(**dict(raw.get("lm", {}))),
            vocab=VocabSettings(**dict(raw.get("vocab", {}))),
            pack=pack,
            mix=mix,
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    config.config_digest = hashlib.sha256(
        json.dumps(raw, sort_keys=True, separators=(",", ":")).encode("utf-8")
    ).hexdigest()
    config.validate()
    return config


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read configuration: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"configuration is not valid JSON: {exc}") from exc
    return config_from_dict(raw, base_dir=path.parent)


# ---------------------------------------------------------------------------
# Run report.
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class PhaseReport:
    name: str
    docs_in: int = 0
    docs_out: int = 0
    dropped: int = 0
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "docs_in": self.docs_in,
            "docs_out": self.docs_out,
            "dropped": self.dropped,
            "seconds": round(self.seconds, 3),
        }
        if self.extra:
            out["extra"] = self.extra
        return out


@dataclass(slots=True)
class RunReport:
    seed: int
    config_digest: str
    workers: int
    phases: list[PhaseReport] = field(default_factory=list)
    artifacts: dict = field(default_factory=dict)
    scorer_fallbacks: int = 0
    failed_phase: str | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "config_digest": self.config_digest,
            "workers": self.workers,
            "phases": [p.to_dict() for p in self.phases],
            "artifacts": self.artifacts,
            "scorer_fallbacks": self.scorer_fallbacks,
            "failed_phase": self.failed_phase,
            "error": self.error,
        }

    def write(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(
            json.dumps(self.to_dict(), sort_keys=True, indent=2), encoding="utf-8"
        )


# ---------------------------------------------------------------------------
# Worker-parallel document mapping.
# ---------------------------------------------------------------------------

_PHASE_STATE: dict[str, Any] = {}


def _map_docs(func: Callable, docs: Sequence, workers: int) -> list:
    """Order-preserving map over documents, forking a pool when it pays."""
    if workers <= 1 or len(docs) < workers * 4:
        return [func(d) for d in docs]
    ctx = multiprocessing.get_context("fork")
    chunksize = max(1, len(docs) // (workers * 8))
    with ctx.Pool(workers) as pool:
        return pool.map(func, docs, chunksize=chunksize)


def _clean_worker(doc: Document) -> Document:
    options, rules = _PHASE_STATE["clean"]
    cleaned_text, counts = clean_general(doc.text, options)
    doc.text = cleaned_text
    if rules:
        doc, _ = clean_specialized(doc, rules)
    return doc


def _filter_worker(doc: Document) -> Document:
    lexicons, thresholds, lm, min_rank = _PHASE_STATE["filter"]
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
        return doc
    safety_screen(doc, lexicons, thresholds.safety)
    return doc


def _encode_worker(doc: Document) -> tuple[str, bytes]:
    vocab, mode = _PHASE_STATE["encode"]
    if mode == "preamble" and doc.context is not None:
        text = compose_training_text(doc, "preamble")
    else:
        text = doc.text
    ids = encode(text, vocab)
    return doc.id, array("I", ids).tobytes()


def _last_drop(doc: Document) -> bool:
    return bool(doc.verdicts) and doc.verdicts[-1].decision is VerdictDecision.DROP


# ---------------------------------------------------------------------------
# Pipeline.
# ---------------------------------------------------------------------------


def run_pipeline(
    config: PipelineConfig, workers: int | None = None
) -> RunReport:
    """Execute all phases and write artifacts under the output directory.

    Returns the run report, which is also written to report.json.  On a
    phase failure the partial report (with the failed phase and error
    message) is still written before the exception propagates.
    """
    workers = config.workers if workers is None else workers
    if workers < 1:
        raise ConfigError("workers must be at least 1")
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = RunReport(
        seed=config.seed, config_digest=config.config_digest, workers=workers
    )
    try:
        _run_phases(config, workers, out_dir, report)
    except Exception as exc:
        if report.failed_phase is None:
            report.failed_phase = "unknown"
        report.error = f"{type(exc).__name__}: {exc}"
        report.write(out_dir / "report.json")
        raise
    report.write(out_dir / "report.json")
    return report


def _intermediate(
    config: PipelineConfig, out_dir: Path, phase: str, docs: Sequence[Document]
) -> None:
    if not config.write_intermediate:
        return
    directory = out_dir / "intermediate"
    directory.mkdir(parents=True, exist_ok=True)
    write_documents(directory / f"{phase}.jsonl.gz", docs)


def _run_phases(
    config: PipelineConfig, workers: int, out_dir: Path, report: RunReport
) -> None:
    dropped_all: list[Document] = []

    def begin(name: str, docs_in: int) -> tuple[PhaseReport, float]:
        report.failed_phase = name
        phase = PhaseReport(name=name, docs_in=docs_in)
        return phase, time.perf_counter()

    def finish(
        phase: PhaseReport, t0: float, docs_out: Sequence[Document], dropped: int
    ) -> None:
        phase.docs_out = len(docs_out)
        phase.dropped = dropped
        phase.seconds = time.perf_counter() - t0
        if phase.docs_in != phase.docs_out + phase.dropped:
            raise RuntimeError(
                f"phase {phase.name}: {phase.docs_in} in != "
                f"{phase.docs_out} out + {phase.dropped} dropped"
            )
        report.phases.append(phase)
        report.failed_phase = None

    # ---- ingest -----------------------------------------------------------
    phase, t0 = begin("ingest", 0)
    docs: list[Document] = []
    ingest_reports = []
    for spec in config.inputs:
        got, ingest_report = ingest(spec)
        docs.extend(got)
        ingest_reports.append({"path": spec.path, **ingest_report.to_dict()})
    for doc in docs:
        doc.language = detect_language(doc.text)
    phase.extra = {"inputs": ingest_reports}
    skipped = sum(r["skipped"] for r in ingest_reports)
    phase.docs_in = len(docs) + skipped
    finish(phase, t0, docs, skipped)
    _intermediate(config, out_dir, "01-ingest", docs)

    # ---- clean ------------------------------------------------------------
    phase, t0 = begin("clean", len(docs))
    _PHASE_STATE["clean"] = (config.clean_options, config.clean_rules)
    cleaned = _map_docs(_clean_worker, docs, workers)
    docs = []
    n_dropped = 0
    for doc in cleaned:
        if _last_drop(doc) or not doc.text:
            if not _last_drop(doc):
                doc.verdicts.append(
                    FilterVerdict(
                        stage=VerdictStage.CLEAN,
                        decision=VerdictDecision.DROP,
                        reason_code="empty_after_cleaning",
                    )
                )
            dropped_all.append(doc)
            n_dropped += 1
        else:
            docs.append(doc)
    finish(phase, t0, docs, n_dropped)
    _intermediate(config, out_dir, "02-clean", docs)

    # ---- filter -----------------------------------------------------------
    phase, t0 = begin("filter", len(docs))
    lexicons = load_default_lexicons()
    thresholds = load_thresholds(
        Path(config.filter.thresholds_path) if config.filter.thresholds_path else None
    )
    lm: NGramLM | None = None
    sample: list[str] = []
    if config.lm.sample_docs > 0 and docs:
        sample = [d.text for d in docs[: config.lm.sample_docs]]
        lm = train_ngram_lm(sample, n=config.lm.order, alpha=config.lm.alpha)
    min_rank = QUALITY_ORDER[QualityClass(config.filter.min_quality)]
    _PHASE_STATE["filter"] = (lexicons, thresholds, lm, min_rank)
    filtered = _map_docs(_filter_worker, docs, workers)
    scorer_cfg = (
        ScorerConfig(url=config.filter.scorer_url, timeout_s=config.filter.scorer_timeout_s)
        if config.filter.scorer_url
        else None
    )
    docs = []
    n_dropped = 0
    for doc in filtered:
        if _last_drop(doc):
            dropped_all.append(doc)
            n_dropped += 1
            continue
        if scorer_cfg is not None:
            reply = score_document(doc, scorer_cfg)
            if reply is None:
                report.scorer_fallbacks += 1
            else:
                apply_external_scores(doc, reply)
        docs.append(doc)
    phase.extra = {
        "lm_trained_on": len(sample) if lm is not None else 0,
        "min_quality": config.filter.min_quality,
    }
    finish(phase, t0, docs, n_dropped)
    _intermediate(config, out_dir, "03-filter", docs)

    # ---- annotate ---------------------------------------------------------
    phase, t0 = begin("annotate", len(docs))
    taxonomy = (
        load_taxonomy(config.annotate.taxonomy_path)
        if config.annotate.taxonomy_path
        else None
    )
    kept: list[Document] = []
    n_dropped = 0
    violation_count = 0
    for doc in docs:
        if doc.context is not None:
            ctx = doc.context
            if ctx.audience_level is None and doc.indicators is not None:
                if doc.indicators.audience.value != "unknown":
                    ctx.audience_level = doc.indicators.audience
            violations = validate_context(ctx, taxonomy)
            if violations:
                violation_count += 1
                if config.annotate.on_invalid == "drop":
                    doc.verdicts.append(
                        FilterVerdict(
                            stage=VerdictStage.FILTER,
                            decision=VerdictDecision.DROP,
                            reason_code="invalid_context",
                            detail="; ".join(violations)[:200],
                        )
                    )
                    dropped_all.append(doc)
                    n_dropped += 1
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
    docs = kept
    phase.extra = {"context_violations": violation_count}
    finish(phase, t0, docs, n_dropped)
    _intermediate(config, out_dir, "04-annotate", docs)

    # ---- dedup ------------------------------------------------------------
    phase, t0 = begin("dedup", len(docs))
    before_dedup = docs
    docs, exact_report = dedup_exact(docs)
    near_report = DedupReport()
    if config.dedup.near_enabled:
        params = MinHashParams(
            num_perm=config.dedup.minhash.num_perm,
            shingle_k=config.dedup.minhash.shingle_k,
            bands=config.dedup.minhash.bands,
            rows=config.dedup.minhash.rows,
            verify_threshold=config.dedup.minhash.verify_threshold,
            seed=derive_seed(config.seed, "dedup-minhash"),
        )
        docs, near_report = dedup_near(docs, params)
    survivor_ids = {id(doc) for doc in docs}
    dedup_dropped = [doc for doc in before_dedup if id(doc) not in survivor_ids]
    dropped_all.extend(dedup_dropped)
    phase.extra = {"exact": exact_report.to_dict(), "near": near_report.to_dict()}
    finish(phase, t0, docs, len(dedup_dropped))
    _intermediate(config, out_dir, "05-dedup", docs)

    # ---- vocab + encode ---------------------------------------------------
    phase, t0 = begin("vocab", len(docs))
    sample_texts = [d.text for d in docs[: config.vocab.sample_docs]]
    vocabulary = train_bpe(
        sample_texts, num_merges=config.vocab.num_merges, mode=config.vocab.mode
    )
    vocab_dir = out_dir / "vocab"
    vocab_dir.mkdir(parents=True, exist_ok=True)
    save_vocab(vocabulary, vocab_dir / "vocab.txt", vocab_dir / "merges.txt")
    plan = _resolve_stage_plan(config, docs, token_totals=None)
    modes = plan.modes() if plan.stages else ["none"]
    token_dirs: dict[str, Path] = {}
    for mode in modes:
        _PHASE_STATE["encode"] = (vocabulary, mode)
        encoded = _map_docs(_encode_worker, docs, workers)
        store_dir = out_dir / "tokens" / mode
        with TokenStore(store_dir) as store:
            for doc_id, blob in encoded:
                ids = array("I")
                ids.frombytes(blob)
                store.append(doc_id, ids)
        token_dirs[mode] = store_dir
    phase.extra = {
        "vocab_size": vocabulary.size,
        "merges": len(vocabulary.merges),
        "modes": modes,
        "trained_on_docs": len(sample_texts),
    }
    finish(phase, t0, docs, 0)
    report.artifacts["vocab"] = "vocab/vocab.txt"
    report.artifacts["merges"] = "vocab/merges.txt"

    # ---- pack -------------------------------------------------------------
    phase, t0 = begin("pack", len(docs))
    pack_meta: dict[str, dict] = {}
    shard_paths: dict[str, dict[str, str]] = {}
    for mode in modes:
        store = TokenStore.open_read(token_dirs[mode])
        doc_ids = store.doc_ids()
        lengths = store.lengths
        doc_lengths = [lengths[doc_id] for doc_id in doc_ids]
        assignment = assign_lengths(
            doc_lengths,
            config.pack.lengths,
            config.pack.ratios,
            seed=derive_seed(config.seed, f"pack:{mode}"),
        )
        total_len = sum(doc_lengths)
        data = array("I")
        if total_len:
            with open(store.bin_path, "rb") as fh:
                data.fromfile(fh, total_len)
        offsets = {doc_id: store._index[doc_id][0] for doc_id in doc_ids}
        pack_meta[mode] = {}
        shard_paths[mode] = {}
        for target in sorted(set(config.pack.lengths)):
            chunk_meta: list[tuple[str, int, int, int]] = []
            chunk_lens: list[int] = []
            for doc_id, doc_len, chosen in zip(doc_ids, doc_lengths, assignment):
                if chosen != target or doc_len == 0:
                    continue
                offset = offsets[doc_id]
                chunk_idx = 0
                pos = 0
                while pos < doc_len:
                    size = min(target, doc_len - pos)
                    chunk_meta.append((doc_id, chunk_idx, offset + pos, size))
                    chunk_lens.append(size)
                    chunk_idx += 1
                    pos += size
            bins, stats = pack_best_fit(chunk_lens, target, order=config.pack.order)
            packed_bins: list[PackedBin] = []
            for members in bins:
                ids: list[int] = []
                spans: list[Span] = []
                for chunk_i in members:
                    doc_id, chunk_idx, start_off, size = chunk_meta[chunk_i]
                    span_start = len(ids)
                    ids.extend(data[start_off : start_off + size])
                    spans.append(
                        Span(
                            doc_id=doc_id,
                            chunk_index=chunk_idx,
                            start=span_start,
                            end=span_start + size,
                        )
                    )
                packed_bins.append(PackedBin(capacity=target, ids=ids, spans=spans))
            shard_dir = out_dir / "shards" / mode / f"L{target}"
            sidecar = write_shards(
                shard_dir, packed_bins, bins_per_shard=config.pack.bins_per_shard
            )
            pack_meta[mode][str(target)] = {
                "bins": stats.bins,
                "data_tokens": stats.data_tokens,
                "pad_tokens": stats.pad_tokens,
                "pad_ratio": stats.pad_ratio,
                "shards": len(sidecar["shards"]),
            }
            shard_paths[mode][str(target)] = str(
                shard_dir.relative_to(out_dir)
            )
    phase.extra = pack_meta
    finish(phase, t0, docs, 0)
    report.artifacts["shards"] = shard_paths
    report.artifacts["tokens"] = {
        mode: str(path.relative_to(out_dir)) for mode, path in token_dirs.items()
    }

    # ---- mix --------------------------------------------------------------
    phase, t0 = begin("mix", len(docs))
    mix_dir = out_dir / "mix"
    mix_dir.mkdir(parents=True, exist_ok=True)
    token_counts: dict[str, dict[str, int]] = {}
    for mode in modes:
        store = TokenStore.open_read(token_dirs[mode])
        token_counts[mode] = store.lengths
    plan = _resolve_stage_plan(
        config,
        docs,
        token_totals={m: sum(counts.values()) for m, counts in token_counts.items()},
    )
    manifests: dict[str, str] = {}
    fills_meta: dict[str, dict] = {}
    for stage in plan.stages:
        mode = stage.dwc_mode
        counts = token_counts.get(mode, {})
        pool = [
            (
                doc.id,
                (doc.context.category_primary if doc.context and doc.context.category_primary else "general"),
                counts.get(doc.id, 0),
            )
            for doc in docs
            if counts.get(doc.id, 0) > 0
        ]
        rows, fills = sample_stage(stage, pool, seed=config.seed)
        manifest_path = mix_dir / f"{stage.name}.jsonl"
        write_manifest(manifest_path, rows)
        manifests[stage.name] = str(manifest_path.relative_to(out_dir))
        fills_meta[stage.name] = {
            "budget": stage.token_budget,
            "dwc_mode": mode,
            "domains": {d: f.to_dict() for d, f in fills.items()},
        }
    phase.extra = fills_meta
    finish(phase, t0, docs, 0)
    report.artifacts["manifests"] = manifests
    report.artifacts["stage_plan"] = plan.to_dict()

    if config.write_intermediate and dropped_all:
        write_documents(out_dir / "intermediate" / "dropped.jsonl.gz", dropped_all)


def _resolve_stage_plan(
    config: PipelineConfig,
    docs: Sequence[Document],
    token_totals: dict[str, int] | None,
) -> StagePlan:
    """Materialize the stage plan, deferring budgets until totals are known.

    An explicit plan from the configuration wins.  Otherwise budgets come
    from the stage template weights applied to ``mix.total_tokens`` when
    set, or to each stage's own mode total once encoding has happened.
    Before encoding (``token_totals`` None) budgets are left at zero; only
    the mode list matters at that point.
    """
    if config.mix.explicit_plan is not None:
        return config.mix.explicit_plan
    template = config.mix.stage_template
    domains = config.mix.domain_weights
    if domains is None:
        observed: dict[str, float] = {}
        for doc in docs:
            domain = (
                doc.context.category_primary
                if doc.context and doc.context.category_primary
                else "general"
            )
            observed[domain] = observed.get(domain, 0.0) + 1.0
        domains = observed or {"general": 1.0}
    weight_sum = sum(float(item["weight"]) for item in template)
    stages = []
    for item in template:
        name = str(item["name"])
        mode = str(item.get("dwc_mode", "preamble"))
        if token_totals is None:
            budget = 0
        elif config.mix.total_tokens is not None:
            budget = int(
                config.mix.total_tokens * float(item["weight"]) / weight_sum
            )
        else:
            budget = int(
                token_totals.get(mode, 0) * float(item["weight"]) / weight_sum
            )
        stages.append(
            StageSpec(
                name=name,
                token_budget=budget,
                domain_weights=dict(domains),
                dwc_mode=mode,
            )
        )
    plan = StagePlan(stages=stages)
    plan.validate()
    return plan
