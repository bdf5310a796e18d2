"""World-context annotation: taxonomy checks and the text preamble grammar.

A context preamble is the textual form of a :class:`~dwc_curator.model.ContextRecord`,
prepended to the document body at training time:

    preamble   := tagline? headerline* blankline?
    tagline    := ("[" category "]"){1,2} "\\n"
    headerline := key ": " value "\\n"

The blank line is required exactly when at least one tagline or headerline was
emitted, which keeps preambles prefix-free: a body that itself starts with
``[`` cannot be confused with annotation. Header keys appear in a fixed order
and fields that are absent or carry their unknown/default value are omitted,
so a fully unknown context serializes to the empty string.

Free-text values are escaped (backslash, newline, carriage return) so that
``parse_context(serialize_context(ctx))`` reproduces ``ctx`` exactly. The
``source_bias_note`` safety field is deliberately not part of the grammar; it
stays in the JSONL form only.
"""

from __future__ import annotations

import datetime
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .model import (
    AudienceLevel,
    Authority,
    ContextRecord,
    Difficulty,
    DialogueType,
    Document,
    Popularity,
    RiskCategory,
    SafetyAttributes,
    SentimentLevel,
    DifficultyLevel,
    SourceInfo,
)

# Fixed header emission order; parsing accepts any order but rejects duplicates.
HEADER_KEYS = (
    "time",
    "location",
    "author",
    "source",
    "authority",
    "popularity",
    "dialogue",
    "audience",
    "sentiment",
    "difficulty",
    "requires_cot",
    "risk",
    "risk_categories",
)

_TAG_RE = re.compile(r"\[([^\[\]\n]*)\]")
_FORBIDDEN_IN_CATEGORY = ("[", "]", "\n")


class ContextError(ValueError):
    """Invalid context handed to serialization."""


class PreambleParseError(ValueError):
    """Malformed preamble; carries 1-based line and column of the offending spot."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


# ---------------------------------------------------------------------------
# Taxonomy


@dataclass(slots=True)
class Taxonomy:
    """Category inventory: (primary, secondary) pairs, secondary optional."""

    name: str
    entries: set[tuple[str, str | None]] = field(default_factory=set)

    def validate(self) -> list[str]:
        problems = []
        primaries = {p for p, s in self.entries if s is None}
        for primary, secondary in sorted(self.entries, key=lambda e: (e[0], e[1] or "")):
            if secondary is not None and primary not in primaries:
                problems.append(
                    f"secondary ({primary!r}, {secondary!r}) lacks standalone primary entry"
                )
        return problems

    def has(self, primary: str, secondary: str | None = None) -> bool:
        return (primary, secondary) in self.entries

    def primaries(self) -> set[str]:
        return {p for p, s in self.entries if s is None}


def load_taxonomy(path: str | Path) -> Taxonomy:
    """Load {"name": ..., "entries": [[primary, secondary-or-null], ...]}."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    entries: set[tuple[str, str | None]] = set()
    for item in raw["entries"]:
        primary, secondary = item[0], item[1]
        pair = (str(primary), None if secondary is None else str(secondary))
        if pair in entries:
            raise ValueError(f"duplicate taxonomy entry: {pair}")
        entries.add(pair)
    taxonomy = Taxonomy(name=str(raw["name"]), entries=entries)
    problems = taxonomy.validate()
    if problems:
        raise ValueError("invalid taxonomy: " + "; ".join(problems))
    return taxonomy


def save_taxonomy(taxonomy: Taxonomy, path: str | Path) -> None:
    items = sorted(taxonomy.entries, key=lambda e: (e[0], e[1] or ""))
    payload = {"name": taxonomy.name, "entries": [[p, s] for p, s in items]}
    Path(path).write_text(
        json.dumps(payload, ensure_ascii=False, indent=1, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def default_taxonomy_path() -> Path:
    return Path(__file__).parent / "data" / "taxonomy_industrial.json"


# ---------------------------------------------------------------------------
# Validation


def validate_context(ctx: ContextRecord, taxonomy: Taxonomy | None = None) -> list[str]:
    """Return violations as strings; empty list means the record is valid."""
    problems: list[str] = []
    if ctx.category_secondary is not None and ctx.category_primary is None:
        problems.append("category_secondary set without category_primary")
    for name in ("category_primary", "category_secondary"):
        value = getattr(ctx, name)
        if value is None:
            continue
        if value == "":
            problems.append(f"{name} is empty")
        for ch in _FORBIDDEN_IN_CATEGORY:
            if ch in value:
                problems.append(f"{name} contains forbidden character {ch!r}")
                break
    if taxonomy is not None and ctx.category_primary is not None:
        pair = (ctx.category_primary, ctx.category_secondary)
        if pair not in taxonomy.entries:
            problems.append(f"category pair {pair!r} not in taxonomy {taxonomy.name!r}")
    if ctx.time is not None:
        try:
            datetime.date.fromisoformat(ctx.time)
        except ValueError:
            problems.append(f"time is not an ISO-8601 date: {ctx.time!r}")
    if ctx.source is not None and (
        ctx.source.site_or_venue is None
        and ctx.source.authority is Authority.UNKNOWN
        and ctx.source.popularity is Popularity.UNKNOWN
    ):
        problems.append("source record carries no information; use None instead")
    return problems


# ---------------------------------------------------------------------------
# Serialization

_ESCAPES = {"\\": "\\\\", "\n": "\\n", "\r": "\\r"}
_UNESCAPES = {"\\": "\\", "n": "\n", "r": "\r"}
_ESCAPE_RE = re.compile(r"[\\\n\r]")
_UNESCAPE_RE = re.compile(r"\\(.)", re.DOTALL)


def _escape(value: str) -> str:
    return _ESCAPE_RE.sub(lambda m: _ESCAPES[m.group(0)], value)


def serialize_context(ctx: ContextRecord) -> str:
    """Render ctx as its preamble; bit-identical across runs and platforms."""
    for name in ("category_primary", "category_secondary"):
        value = getattr(ctx, name)
        if value is not None and (value == "" or any(c in value for c in _FORBIDDEN_IN_CATEGORY)):
            raise ContextError(f"{name} not serializable as a tag: {value!r}")
    if ctx.category_secondary is not None and ctx.category_primary is None:
        raise ContextError("category_secondary set without category_primary")

    lines: list[str] = []
    if ctx.category_primary is not None:
        tag = f"[{ctx.category_primary}]"
        if ctx.category_secondary is not None:
            tag += f"[{ctx.category_secondary}]"
        lines.append(tag)

    headers: list[tuple[str, str]] = []
    if ctx.time is not None:
        headers.append(("time", _escape(ctx.time)))
    if ctx.location is not None:
        headers.append(("location", _escape(ctx.location)))
    if ctx.author is not None:
        headers.append(("author", _escape(ctx.author)))
    if ctx.source is not None:
        if ctx.source.site_or_venue is not None:
            headers.append(("source", _escape(ctx.source.site_or_venue)))
        if ctx.source.authority is not Authority.UNKNOWN:
            headers.append(("authority", ctx.source.authority.value))
        if ctx.source.popularity is not Popularity.UNKNOWN:
            headers.append(("popularity", ctx.source.popularity.value))
    if ctx.dialogue_type is not DialogueType.NONE:
        headers.append(("dialogue", ctx.dialogue_type.value))
    if ctx.audience_level is not AudienceLevel.UNKNOWN:
        headers.append(("audience", ctx.audience_level.value))
    if ctx.sentiment_level is not SentimentLevel.UNKNOWN:
        headers.append(("sentiment", ctx.sentiment_level.value))
    if ctx.difficulty.level is not DifficultyLevel.UNKNOWN:
        headers.append(("difficulty", ctx.difficulty.level.value))
    if ctx.difficulty.requires_cot:
        headers.append(("requires_cot", "true"))
    if ctx.safety.risk_flag:
        headers.append(("risk", "true"))
    if ctx.safety.risk_categories:
        joined = ",".join(sorted(c.value for c in ctx.safety.risk_categories))
        headers.append(("risk_categories", joined))

    lines.extend(f"{key}: {value}" for key, value in headers)
    if not lines:
        return ""
    return "\n".join(lines) + "\n\n"


# ---------------------------------------------------------------------------
# Parsing


def _unescape(value: str, line_no: int, col_base: int) -> str:
    def replace(match: re.Match[str]) -> str:
        ch = match.group(1)
        if ch not in _UNESCAPES:
            raise PreambleParseError(
                f"unknown escape sequence \\{ch}", line_no, col_base + match.start() + 1
            )
        return _UNESCAPES[ch]

    # A trailing lone backslash cannot form an escape pair.
    stripped = _UNESCAPE_RE.sub("", value)
    if stripped.endswith("\\"):
        raise PreambleParseError("dangling backslash in value", line_no, col_base + len(value))
    return _UNESCAPE_RE.sub(replace, value)


def _parse_bool(value: str, line_no: int, col: int) -> bool:
    if value == "true":
        return True
    if value == "false":
        return False
    raise PreambleParseError(f"expected true/false, got {value!r}", line_no, col)


def _parse_enum(enum_cls, value: str, line_no: int, col: int):
    try:
        return enum_cls(value)
    except ValueError:
        raise PreambleParseError(
            f"invalid {enum_cls.__name__} value {value!r}", line_no, col
        ) from None


def parse_context(preamble: str) -> ContextRecord:
    """Inverse of :func:`serialize_context`; "" parses to the all-unknown record."""
    if preamble == "":
        return ContextRecord()
    lines = preamble.split("\n")
    # A well-formed non-empty preamble ends "...\n\n" -> split yields two trailing "".
    if len(lines) < 3 or lines[-1] != "" or lines[-2] != "":
        raise PreambleParseError(
            "missing blank-line terminator", len(lines), len(lines[-1]) + 1
        )
    content = lines[:-2]
    if not content:
        raise PreambleParseError("blank line without preamble content", 1, 1)
    for line_no, line in enumerate(content, start=1):
        if line == "":
            raise PreambleParseError("blank line before preamble terminator", line_no, 1)

    ctx = ContextRecord()
    seen: set[str] = set()
    source = SourceInfo()
    source_touched = False
    difficulty = Difficulty()
    safety = SafetyAttributes()

    start = 0
    if content[0].startswith("["):
        line = content[0]
        tags = _TAG_RE.findall(line)
        consumed = "".join(f"[{t}]" for t in tags)
        if consumed != line:
            raise PreambleParseError("malformed tagline", 1, len(consumed) + 1)
        if len(tags) > 2:
            third_at = len(f"[{tags[0]}][{tags[1]}]") + 1
            raise PreambleParseError("more than two category tags", 1, third_at)
        if any(t == "" for t in tags):
            raise PreambleParseError("empty category tag", 1, line.index("[]") + 1)
        ctx.category_primary = tags[0]
        if len(tags) == 2:
            ctx.category_secondary = tags[1]
        start = 1

    for offset, line in enumerate(content[start:]):
        line_no = start + offset + 1
        if ": " not in line:
            raise PreambleParseError("header line lacks ': ' separator", line_no, len(line) + 1)
        key, value = line.split(": ", 1)
        col = len(key) + 3  # 1-based column where the value begins
        if key not in HEADER_KEYS:
            raise PreambleParseError(f"unknown header key {key!r}", line_no, 1)
        if key in seen:
            raise PreambleParseError(f"duplicate header key {key!r}", line_no, 1)
        seen.add(key)
        if key == "time":
            ctx.time = _unescape(value, line_no, col - 1)
        elif key == "location":
            ctx.location = _unescape(value, line_no, col - 1)
        elif key == "author":
            ctx.author = _unescape(value, line_no, col - 1)
        elif key == "source":
            source.site_or_venue = _unescape(value, line_no, col - 1)
            source_touched = True
        elif key == "authority":
            source.authority = _parse_enum(Authority, value, line_no, col)
            source_touched = True
        elif key == "popularity":
            source.popularity = _parse_enum(Popularity, value, line_no, col)
            source_touched = True
        elif key == "dialogue":
            ctx.dialogue_type = _parse_enum(DialogueType, value, line_no, col)
        elif key == "audience":
            ctx.audience_level = _parse_enum(AudienceLevel, value, line_no, col)
        elif key == "sentiment":
            ctx.sentiment_level = _parse_enum(SentimentLevel, value, line_no, col)
        elif key == "difficulty":
            difficulty.level = _parse_enum(DifficultyLevel, value, line_no, col)
        elif key == "requires_cot":
            difficulty.requires_cot = _parse_bool(value, line_no, col)
        elif key == "risk":
            safety.risk_flag = _parse_bool(value, line_no, col)
        elif key == "risk_categories":
            cats = set()
            for part in value.split(","):
                cats.add(_parse_enum(RiskCategory, part, line_no, col))
            safety.risk_categories = cats

    if source_touched:
        ctx.source = source
    ctx.difficulty = difficulty
    ctx.safety = safety
    return ctx


# ---------------------------------------------------------------------------
# Training-text composition

DWC_MODES = ("preamble", "none")


def compose_training_text(doc: Document, mode: str = "preamble") -> str:
    """Training-time text of a document: annotated (preamble) or bare (none)."""
    if mode == "none":
        return doc.text
    if mode != "preamble":
        raise ValueError(f"unknown dwc mode {mode!r}")
    if doc.context is None:
        raise ContextError(f"document {doc.id} has no context record for preamble mode")
    return serialize_context(doc.context) + doc.text


def split_training_text(text: str) -> tuple[str, str]:
    """Split a preamble-mode training text back into (preamble, body).

    Only call on texts produced with mode="preamble"; a bare body whose first
    line happens to look like annotation is indistinguishable by design when
    the context was fully unknown.
    """
    first_line, _, _ = text.partition("\n")
    looks_annotated = first_line.startswith("[") and first_line.endswith("]")
    if not looks_annotated:
        head = first_line.split(": ", 1)[0]
        looks_annotated = ": " in first_line and head in HEADER_KEYS
    if not looks_annotated:
        return "", text
    terminator = text.find("\n\n")
    if terminator == -1:
        return "", text
    return text[: terminator + 2], text[terminator + 2 :]
