"""Document model shared by every pipeline stage.

A :class:`Document` is the unit of work: raw text plus provenance, an optional
world-context record (:class:`ContextRecord`), quality indicators, and the
filter verdicts accumulated along the way. The on-disk form is JSON Lines, one
document per line, optionally gzipped; field names in the JSON match the
dataclass field names exactly.

Enum-valued fields always carry an explicit ``unknown`` (or ``none`` for
dialogue) member rather than being absent, so "we did not annotate this" is
distinguishable from "field missing because an old writer produced the file".
"""

from __future__ import annotations

import dataclasses
import gzip
import hashlib
import io
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator

# ---------------------------------------------------------------------------
# Enums


class Authority(str, Enum):
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"
    UNKNOWN = "unknown"


class Popularity(str, Enum):
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"
    UNKNOWN = "unknown"


class DialogueType(str, Enum):
    NONE = "none"
    CASUAL_CHAT = "casual_chat"
    QUESTION_ANSWER = "question_answer"
    DISCUSSION = "discussion"
    CUSTOMER_SERVICE = "customer_service"


class AudienceLevel(str, Enum):
    CHILD = "child"
    TEEN = "teen"
    ADULT = "adult"
    EXPERT = "expert"
    UNKNOWN = "unknown"


class SentimentLevel(str, Enum):
    POSITIVE = "positive"
    NEUTRAL = "neutral"
    NEGATIVE = "negative"
    UNKNOWN = "unknown"


class DifficultyLevel(str, Enum):
    EASY = "easy"
    MEDIUM = "medium"
    HARD = "hard"
    UNKNOWN = "unknown"


class RiskCategory(str, Enum):
    PORNOGRAPHY = "pornography"
    POLITICS = "politics"
    ILLEGALITY = "illegality"
    ADVERTISING = "advertising"
    BIAS = "bias"
    MISINFORMATION = "misinformation"


class QualityClass(str, Enum):
    HIGH = "high"
    MEDIUM = "medium"
    LOW = "low"


class VerdictStage(str, Enum):
    CLEAN = "clean"
    FILTER = "filter"
    SAFETY = "safety"
    DEDUP = "dedup"


class VerdictDecision(str, Enum):
    KEEP = "keep"
    DROP = "drop"
    FLAG = "flag"


# Ranking used by quality classification; larger is better.
QUALITY_ORDER = {QualityClass.LOW: 0, QualityClass.MEDIUM: 1, QualityClass.HIGH: 2}


# ---------------------------------------------------------------------------
# Records


@dataclass(slots=True)
class SourceInfo:
    site_or_venue: str | None = None
    authority: Authority = Authority.UNKNOWN
    popularity: Popularity = Popularity.UNKNOWN


@dataclass(slots=True)
class Difficulty:
    level: DifficultyLevel = DifficultyLevel.UNKNOWN
    requires_cot: bool = False  # long-form reasoning needed to follow the text


@dataclass(slots=True)
class SafetyAttributes:
    risk_flag: bool = False
    risk_categories: set[RiskCategory] = field(default_factory=set)
    source_bias_note: str | None = None


@dataclass(slots=True)
class ContextRecord:
    """World context attached to a document; all fields optional/unknown by default."""

    time: str | None = None  # ISO-8601 date, e.g. "2024-05-01"
    location: str | None = None
    author: str | None = None
    category_primary: str | None = None
    category_secondary: str | None = None
    source: SourceInfo | None = None
    dialogue_type: DialogueType = DialogueType.NONE
    audience_level: AudienceLevel = AudienceLevel.UNKNOWN
    sentiment_level: SentimentLevel = SentimentLevel.UNKNOWN
    difficulty: Difficulty = field(default_factory=Difficulty)
    safety: SafetyAttributes = field(default_factory=SafetyAttributes)


@dataclass(slots=True)
class LanguageGuess:
    tag: str  # BCP-47-style primary subtag, e.g. "en", "zh"
    confidence: float


@dataclass(slots=True)
class IndicatorReport:
    stopword_ratio: float = 0.0
    special_symbol_ratio: float = 0.0
    sensitive_term_count: int = 0
    perplexity: float | None = None
    quality: QualityClass = QualityClass.LOW
    audience: AudienceLevel = AudienceLevel.UNKNOWN


@dataclass(slots=True)
class FilterVerdict:
    stage: VerdictStage
    decision: VerdictDecision
    reason_code: str
    detail: str | None = None


@dataclass(slots=True)
class Provenance:
    source_path: str
    record_index: int  # 0-based position within the source


@dataclass(slots=True)
class Document:
    id: str
    text: str
    provenance: Provenance
    url: str | None = None
    language: LanguageGuess | None = None
    context: ContextRecord | None = None
    indicators: IndicatorReport | None = None
    verdicts: list[FilterVerdict] = field(default_factory=list)

    def dropped(self) -> bool:
        return any(v.decision is VerdictDecision.DROP for v in self.verdicts)


_ID_TEXT_PREFIX_BYTES = 256


def make_doc_id(source_path: str, record_index: int, text: str) -> str:
    """Default document id: content hash of provenance plus a text prefix."""
    h = hashlib.sha256()
    h.update(source_path.encode("utf-8"))
    h.update(b"\x00")
    h.update(str(record_index).encode("ascii"))
    h.update(b"\x00")
    h.update(text.encode("utf-8", errors="surrogatepass")[:_ID_TEXT_PREFIX_BYTES])
    return h.hexdigest()[:32]


def validate_document(doc: Document) -> list[str]:
    """Return invariant violations as human-readable strings; never raises."""
    violations: list[str] = []
    if not doc.id:
        violations.append("id is empty")
    try:
        doc.text.encode("utf-8")
    except UnicodeEncodeError:
        violations.append("text contains lone surrogates")
    if doc.provenance.record_index < 0:
        violations.append(f"record_index is negative: {doc.provenance.record_index}")
    if doc.language is not None and not 0.0 <= doc.language.confidence <= 1.0:
        violations.append(f"language confidence out of [0,1]: {doc.language.confidence}")
    if doc.indicators is not None:
        ind = doc.indicators
        if ind.perplexity is not None and ind.perplexity < 1.0:
            violations.append(f"perplexity below 1: {ind.perplexity}")
        for name in ("stopword_ratio", "special_symbol_ratio"):
            value = getattr(ind, name)
            if not 0.0 <= value <= 1.0:
                violations.append(f"{name} out of [0,1]: {value}")
        if ind.sensitive_term_count < 0:
            violations.append("sensitive_term_count is negative")
    return violations


# ---------------------------------------------------------------------------
# JSON conversion
#
# to_json_dict/document_from_dict are hand-rolled rather than dataclasses.asdict
# so that enum values become their strings, sets become sorted lists, and absent
# optional sub-records are omitted entirely.


def context_to_dict(ctx: ContextRecord) -> dict[str, Any]:
    out: dict[str, Any] = {
        "dialogue_type": ctx.dialogue_type.value,
        "audience_level": ctx.audience_level.value,
        "sentiment_level": ctx.sentiment_level.value,
        "difficulty": {
            "level": ctx.difficulty.level.value,
            "requires_cot": ctx.difficulty.requires_cot,
        },
        "safety": {
            "risk_flag": ctx.safety.risk_flag,
            "risk_categories": sorted(c.value for c in ctx.safety.risk_categories),
        },
    }
    if ctx.safety.source_bias_note is not None:
        out["safety"]["source_bias_note"] = ctx.safety.source_bias_note
    for name in ("time", "location", "author", "category_primary", "category_secondary"):
        value = getattr(ctx, name)
        if value is not None:
            out[name] = value
    if ctx.source is not None:
        src: dict[str, Any] = {
            "authority": ctx.source.authority.value,
            "popularity": ctx.source.popularity.value,
        }
        if ctx.source.site_or_venue is not None:
            src["site_or_venue"] = ctx.source.site_or_venue
        out["source"] = src
    return out


def context_from_dict(data: dict[str, Any]) -> ContextRecord:
    source = None
    if "source" in data:
        raw = data["source"]
        source = SourceInfo(
            site_or_venue=raw.get("site_or_venue"),
            authority=Authority(raw.get("authority", "unknown")),
            popularity=Popularity(raw.get("popularity", "unknown")),
        )
    diff_raw = data.get("difficulty", {})
    safety_raw = data.get("safety", {})
    return ContextRecord(
        time=data.get("time"),
        location=data.get("location"),
        author=data.get("author"),
        category_primary=data.get("category_primary"),
        category_secondary=data.get("category_secondary"),
        source=source,
        dialogue_type=DialogueType(data.get("dialogue_type", "none")),
        audience_level=AudienceLevel(data.get("audience_level", "unknown")),
        sentiment_level=SentimentLevel(data.get("sentiment_level", "unknown")),
        difficulty=Difficulty(
            level=DifficultyLevel(diff_raw.get("level", "unknown")),
            requires_cot=bool(diff_raw.get("requires_cot", False)),
        ),
        safety=SafetyAttributes(
            risk_flag=bool(safety_raw.get("risk_flag", False)),
            risk_categories={RiskCategory(c) for c in safety_raw.get("risk_categories", [])},
            source_bias_note=safety_raw.get("source_bias_note"),
        ),
    )


def document_to_dict(doc: Document) -> dict[str, Any]:
    out: dict[str, Any] = {
        "id": doc.id,
        "text": doc.text,
        "provenance": {
            "source_path": doc.provenance.source_path,
            "record_index": doc.provenance.record_index,
        },
        "verdicts": [
            {
                "stage": v.stage.value,
                "decision": v.decision.value,
                "reason_code": v.reason_code,
                **({"detail": v.detail} if v.detail is not None else {}),
            }
            for v in doc.verdicts
        ],
    }
    if doc.url is not None:
        out["url"] = doc.url
    if doc.language is not None:
        out["language"] = {"tag": doc.language.tag, "confidence": doc.language.confidence}
    if doc.context is not None:
        out["context"] = context_to_dict(doc.context)
    if doc.indicators is not None:
        ind: dict[str, Any] = {
            "stopword_ratio": doc.indicators.stopword_ratio,
            "special_symbol_ratio": doc.indicators.special_symbol_ratio,
            "sensitive_term_count": doc.indicators.sensitive_term_count,
            "quality": doc.indicators.quality.value,
            "audience": doc.indicators.audience.value,
        }
        if doc.indicators.perplexity is not None:
            ind["perplexity"] = doc.indicators.perplexity
        out["indicators"] = ind
    return out


def document_from_dict(data: dict[str, Any]) -> Document:
    prov = data["provenance"]
    language = None
    if "language" in data:
        language = LanguageGuess(
            tag=data["language"]["tag"], confidence=float(data["language"]["confidence"])
        )
    indicators = None
    if "indicators" in data:
        raw = data["indicators"]
        indicators = IndicatorReport(
            stopword_ratio=float(raw["stopword_ratio"]),
            special_symbol_ratio=float(raw["special_symbol_ratio"]),
            sensitive_term_count=int(raw["sensitive_term_count"]),
            perplexity=raw.get("perplexity"),
            quality=QualityClass(raw["quality"]),
            audience=AudienceLevel(raw["audience"]),
        )
    return Document(
        id=data["id"],
        text=data["text"],
        provenance=Provenance(
            source_path=prov["source_path"], record_index=int(prov["record_index"])
        ),
        url=data.get("url"),
        language=language,
        context=context_from_dict(data["context"]) if "context" in data else None,
        indicators=indicators,
        verdicts=[
            FilterVerdict(
                stage=VerdictStage(v["stage"]),
                decision=VerdictDecision(v["decision"]),
                reason_code=v["reason_code"],
                detail=v.get("detail"),
            )
            for v in data.get("verdicts", [])
        ],
    )


def copy_document(doc: Document, **changes: Any) -> Document:
    """Shallow field replacement; nested records are shared, treat them as read-only."""
    return dataclasses.replace(doc, **changes)


# ---------------------------------------------------------------------------
# JSON Lines store


def dumps_deterministic(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


class _GzipTextWriter:
    """Gzip text writer with a content-only header.

    mtime=0 and an empty embedded filename keep the bytes reproducible:
    the same documents produce the same file regardless of when or under
    what name they are written.
    """

    def __init__(self, path: Path) -> None:
        self._inner = open(path, "wb")
        self._gz = gzip.GzipFile(filename="", mode="wb", fileobj=self._inner, mtime=0)
        self._text = io.TextIOWrapper(self._gz, encoding="utf-8", newline="\n")

    def write(self, data: str) -> int:
        return self._text.write(data)

    def close(self) -> None:
        self._text.close()
        self._inner.close()

    def __enter__(self) -> "_GzipTextWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def open_text_write(path: Path):
    """Open a text file for writing; .gz paths get reproducible gzip framing."""
    if path.suffix == ".gz":
        return _GzipTextWriter(path)
    return open(path, "w", encoding="utf-8", newline="\n")


def _open_text(path: Path, mode: str):
    if mode == "w":
        return open_text_write(path)
    if path.suffix == ".gz":
        return gzip.open(path, mode + "t", encoding="utf-8", newline="\n")
    return open(path, mode, encoding="utf-8", newline="\n")


def write_documents(path: str | Path, docs: Iterable[Document]) -> int:
    """Write docs as JSON Lines (gzipped iff the path ends in .gz); returns count."""
    path = Path(path)
    count = 0
    with _open_text(path, "w") as fh:
        for doc in docs:
            fh.write(dumps_deterministic(document_to_dict(doc)))
            fh.write("\n")
            count += 1
    return count


def read_documents(path: str | Path) -> Iterator[Document]:
    """Stream documents back from JSON Lines written by :func:`write_documents`."""
    path = Path(path)
    with _open_text(path, "r") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield document_from_dict(json.loads(line))
