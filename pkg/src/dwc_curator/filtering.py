"""Quality filtering: statistical indicators, n-gram perplexity, and safety screening.

Each document receives an indicator report (stopword ratio, special symbol
ratio, sensitive term count, perplexity, quality class, audience level).
Threshold tables map indicator values to quality classes; a safety policy
maps per-category sensitive hits to keep/flag/drop verdicts.  An optional
external scoring service can override the heuristic quality and audience
labels; any failure there falls back to the local values.
"""

from __future__ import annotations

import json
import math
import re
import urllib.error
import urllib.request
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .model import (
    AudienceLevel,
    ContextRecord,
    Document,
    FilterVerdict,
    IndicatorReport,
    QualityClass,
    RiskCategory,
    SafetyAttributes,
    VerdictDecision,
    VerdictStage,
)

BOS = "<s>"
UNK = "<unk>"

# Word tokens.  CJK ideographs and kana do not use whitespace, so each such
# character counts as its own token; contiguous runs of other word characters
# form one token.  The negated class keeps \w+ from swallowing CJK runs.
_CJK = "一-鿿぀-ヿ"
_TOKEN_RE = re.compile(f"[{_CJK}]|[^\\W{_CJK}]+")

# Anything that is neither a word character nor whitespace, plus underscore
# (which \w counts as a word character but readers do not).
_SPECIAL_RE = re.compile(r"[^\w\s]|_")

_SENTENCE_END_RE = re.compile(r"[.!?。！？]+")


class ThresholdError(ValueError):
    """Raised when a threshold table is malformed or not properly nested."""


def tokenize(text: str) -> list[str]:
    """Lowercase word tokens; CJK characters tokenize individually."""
    return _TOKEN_RE.findall(text.lower())


# ---------------------------------------------------------------------------
# N-gram language model with additive smoothing.
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class NGramLM:
    """Order-n language model with add-alpha smoothing.

    ``vocab`` holds every token observed in training plus the unknown-word
    symbol.  ``counts`` maps a context tuple of length n-1 to a Counter of
    following tokens; ``context_totals`` caches each context's total count.
    With ``alpha == 0`` the model is unsmoothed maximum likelihood and
    unseen events have probability zero.
    """

    n: int = 2
    alpha: float = 1.0
    vocab: set[str] = field(default_factory=set)
    counts: dict[tuple[str, ...], Counter] = field(default_factory=dict)
    context_totals: dict[tuple[str, ...], int] = field(default_factory=dict)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    def _map(self, token: str) -> str:
        return token if token in self.vocab else UNK

    def probability(self, token: str, context: Sequence[str]) -> float:
        """P(token | context) under add-alpha smoothing.

        Context tokens outside the vocabulary map to the unknown symbol
        before lookup.  A context never seen in training yields 1/V when
        alpha is positive and 0.0 when alpha is zero.
        """
        if len(context) != self.n - 1:
            raise ValueError(
                f"context length {len(context)} does not match order {self.n}"
            )
        ctx = tuple(self._map(t) if t != BOS else BOS for t in context)
        token = self._map(token)
        count = 0
        total = self.context_totals.get(ctx, 0)
        if total:
            count = self.counts[ctx].get(token, 0)
        denom = total + self.alpha * self.vocab_size
        if denom == 0.0:
            return 0.0
        return (count + self.alpha) / denom

    def sequence_log_prob(self, tokens: Sequence[str]) -> float:
        """Sum of log probabilities over tokens with BOS left-padding.

        Returns negative infinity if any event has probability zero.
        """
        history: list[str] = [BOS] * (self.n - 1)
        total = 0.0
        for token in tokens:
            p = self.probability(token, history[-(self.n - 1):] if self.n > 1 else [])
            if p <= 0.0:
                return float("-inf")
            total += math.log(p)
            if self.n > 1:
                history.append(token)
        return total


def train_ngram_lm(corpus: Iterable[str], n: int = 2, alpha: float = 1.0) -> NGramLM:
    """Count n-grams over tokenized documents and return the model.

    Each document is tokenized and padded on the left with n-1 begin
    sentinels, so the first real token is conditioned on document start.
    The vocabulary is every observed token plus the unknown symbol.
    """
    if n < 1:
        raise ValueError(f"order must be >= 1, got {n}")
    if alpha < 0:
        raise ValueError(f"alpha must be >= 0, got {alpha}")
    lm = NGramLM(n=n, alpha=alpha)
    lm.vocab.add(UNK)
    for text in corpus:
        tokens = tokenize(text)
        if not tokens:
            continue
        lm.vocab.update(tokens)
        padded = [BOS] * (n - 1) + tokens
        for i in range(n - 1, len(padded)):
            ctx = tuple(padded[i - n + 1 : i])
            counter = lm.counts.get(ctx)
            if counter is None:
                counter = lm.counts[ctx] = Counter()
            counter[padded[i]] += 1
            lm.context_totals[ctx] = lm.context_totals.get(ctx, 0) + 1
    return lm


def perplexity(lm: NGramLM, text: str) -> float | None:
    """exp(-mean log probability) of the text under the model.

    Returns None for text with no tokens and infinity when an unsmoothed
    model assigns zero probability to any event.
    """
    tokens = tokenize(text)
    if not tokens:
        return None
    logp = lm.sequence_log_prob(tokens)
    if logp == float("-inf"):
        return float("inf")
    return math.exp(-logp / len(tokens))


# ---------------------------------------------------------------------------
# Lexicons: per-language stopwords and per-category sensitive terms.
# ---------------------------------------------------------------------------


def _term_pattern(term: str) -> str:
    """Regex fragment for one sensitive term.

    ASCII word-like terms get word boundaries so substrings inside longer
    words do not count; anything else (CJK, punctuation-bearing terms)
    matches as a literal substring.
    """
    escaped = re.escape(term)
    if re.fullmatch(r"[\w ]+", term, flags=re.ASCII):
        return rf"(?<!\w){escaped}(?!\w)"
    return escaped


@dataclass(slots=True)
class Lexicons:
    """Stopword sets keyed by language tag and sensitive terms by category."""

    stopwords: dict[str, frozenset[str]] = field(default_factory=dict)
    sensitive: dict[str, tuple[str, ...]] = field(default_factory=dict)
    _patterns: dict[str, re.Pattern] = field(default_factory=dict)

    def compile(self) -> None:
        self._patterns = {}
        for category, terms in self.sensitive.items():
            if not terms:
                continue
            joined = "|".join(_term_pattern(t) for t in terms)
            self._patterns[category] = re.compile(joined, re.IGNORECASE)

    def stopword_set(self, language: str) -> frozenset[str]:
        """Stopwords for the language, falling back to English."""
        got = self.stopwords.get(language)
        if got is not None:
            return got
        return self.stopwords.get("en", frozenset())

    def sensitive_hits(self, text: str) -> dict[str, int]:
        """Non-overlapping sensitive term counts per category (zeros omitted)."""
        if not self._patterns and self.sensitive:
            self.compile()
        hits: dict[str, int] = {}
        lowered = text.lower()
        for category, pattern in self._patterns.items():
            n = len(pattern.findall(lowered))
            if n:
                hits[category] = n
        return hits


def load_lexicons(stopword_dir: Path, sensitive_dir: Path) -> Lexicons:
    """Read one term per line from <dir>/<tag>.txt files; # lines are comments."""
    lex = Lexicons()
    for path in sorted(stopword_dir.glob("*.txt")):
        terms = _read_term_file(path)
        lex.stopwords[path.stem] = frozenset(terms)
    for path in sorted(sensitive_dir.glob("*.txt")):
        lex.sensitive[path.stem] = tuple(_read_term_file(path))
    lex.compile()
    return lex


def _read_term_file(path: Path) -> list[str]:
    terms = []
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            terms.append(line)
    return terms


def load_default_lexicons() -> Lexicons:
    base = resources.files("dwc_curator") / "data"
    return load_lexicons(Path(str(base / "stopwords")), Path(str(base / "sensitive")))


# ---------------------------------------------------------------------------
# Threshold tables and quality classification.
# ---------------------------------------------------------------------------

_INDICATOR_NAMES = (
    "stopword_ratio",
    "special_symbol_ratio",
    "sensitive_term_count",
    "perplexity",
)

_CLASS_ORDER = (QualityClass.HIGH, QualityClass.MEDIUM, QualityClass.LOW)


@dataclass(slots=True)
class SafetyPolicy:
    """Hit-count thresholds mapping sensitive term counts to verdicts.

    A category reaching ``flag_at`` hits flags the document; reaching
    ``drop_at`` drops it.  ``per_category`` overrides both levels for
    specific categories.
    """

    flag_at: int = 1
    drop_at: int = 3
    per_category: dict[str, tuple[int, int]] = field(default_factory=dict)

    def levels(self, category: str) -> tuple[int, int]:
        return self.per_category.get(category, (self.flag_at, self.drop_at))


@dataclass(slots=True)
class AudienceBands:
    """Readability score bands for audience level assignment.

    The score is ``word_length_weight * mean_word_length +
    sentence_length_weight * mean_sentence_length + intercept``.  Scores
    below cut_points[0] map to child, then teen, adult, and expert at or
    above cut_points[2].  Texts shorter than ``min_tokens`` give unknown.
    """

    cut_points: tuple[float, float, float] = (5.0, 9.0, 14.0)
    word_length_weight: float = 4.71
    sentence_length_weight: float = 0.5
    intercept: float = -21.43
    min_tokens: int = 10


@dataclass(slots=True)
class Thresholds:
    """Per-class indicator bounds plus the safety policy and audience bands.

    ``quality`` maps each class to {indicator: (lo, hi)} inclusive bounds.
    Classes are ordered high, medium, low; every bound present for a higher
    class must nest inside the corresponding lower-class bound so that the
    acceptance regions form a chain.
    """

    quality: dict[QualityClass, dict[str, tuple[float, float]]] = field(
        default_factory=dict
    )
    safety: SafetyPolicy = field(default_factory=SafetyPolicy)
    audience: AudienceBands = field(default_factory=AudienceBands)

    def validate(self) -> None:
        for cls, bounds in self.quality.items():
            for name, (lo, hi) in bounds.items():
                if name not in _INDICATOR_NAMES:
                    raise ThresholdError(f"{cls.value}: unknown indicator {name!r}")
                if lo > hi:
                    raise ThresholdError(
                        f"{cls.value}.{name}: lower bound {lo} above upper {hi}"
                    )
        for tighter, looser in zip(_CLASS_ORDER, _CLASS_ORDER[1:]):
            for name, (lo, hi) in self.quality.get(tighter, {}).items():
                outer = self.quality.get(looser, {}).get(name)
                if outer is None:
                    continue
                if lo < outer[0] or hi > outer[1]:
                    raise ThresholdError(
                        f"{tighter.value}.{name} bounds [{lo}, {hi}] not nested "
                        f"inside {looser.value} bounds [{outer[0]}, {outer[1]}]"
                    )
        if self.safety.flag_at > self.safety.drop_at:
            raise ThresholdError("safety flag_at must not exceed drop_at")
        for category, (flag_at, drop_at) in self.safety.per_category.items():
            if flag_at > drop_at:
                raise ThresholdError(
                    f"safety per_category {category}: flag_at above drop_at"
                )
        cuts = self.audience.cut_points
        if len(cuts) != 3 or not (cuts[0] < cuts[1] < cuts[2]):
            raise ThresholdError("audience cut_points must be three increasing values")


def thresholds_from_dict(raw: Mapping) -> Thresholds:
    quality: dict[QualityClass, dict[str, tuple[float, float]]] = {}
    for cls_name, bounds in raw.get("quality", {}).items():
        cls = QualityClass(cls_name)
        quality[cls] = {
            name: (float(pair[0]), float(pair[1])) for name, pair in bounds.items()
        }
    safety_raw = raw.get("safety", {})
    safety = SafetyPolicy(
        flag_at=int(safety_raw.get("flag_at", 1)),
        drop_at=int(safety_raw.get("drop_at", 3)),
        per_category={
            cat: (int(v["flag_at"]), int(v["drop_at"]))
            for cat, v in safety_raw.get("per_category", {}).items()
        },
    )
    aud_raw = raw.get("audience", {})
    audience = AudienceBands(
        cut_points=tuple(float(c) for c in aud_raw.get("cut_points", (5.0, 9.0, 14.0))),
        word_length_weight=float(aud_raw.get("word_length_weight", 4.71)),
        sentence_length_weight=float(aud_raw.get("sentence_length_weight", 0.5)),
        intercept=float(aud_raw.get("intercept", -21.43)),
        min_tokens=int(aud_raw.get("min_tokens", 10)),
    )
    thresholds = Thresholds(quality=quality, safety=safety, audience=audience)
    thresholds.validate()
    return thresholds


def load_thresholds(path: Path | None = None) -> Thresholds:
    """Load a threshold table from JSON, or the packaged defaults."""
    if path is None:
        base = resources.files("dwc_curator") / "data" / "default_thresholds.json"
        raw = json.loads(base.read_text(encoding="utf-8"))
    else:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return thresholds_from_dict(raw)


def classify_quality(report: IndicatorReport, thresholds: Thresholds) -> QualityClass:
    """Highest class whose every bound the report satisfies.

    An indicator that is None (for example perplexity without a trained
    model) does not disqualify a class; only measured values are compared.
    """
    values = {
        "stopword_ratio": report.stopword_ratio,
        "special_symbol_ratio": report.special_symbol_ratio,
        "sensitive_term_count": report.sensitive_term_count,
        "perplexity": report.perplexity,
    }
    for cls in _CLASS_ORDER:
        bounds = thresholds.quality.get(cls)
        if bounds is None:
            continue
        ok = True
        for name, (lo, hi) in bounds.items():
            value = values[name]
            if value is None:
                continue
            if not (lo <= value <= hi):
                ok = False
                break
        if ok:
            return cls
    return QualityClass.LOW


# ---------------------------------------------------------------------------
# Indicators.
# ---------------------------------------------------------------------------


def stopword_ratio(text: str, stopwords: frozenset[str]) -> float:
    tokens = tokenize(text)
    if not tokens:
        return 0.0
    hits = sum(1 for t in tokens if t in stopwords)
    return hits / len(tokens)


def special_symbol_ratio(text: str) -> float:
    """Fraction of characters that are neither word characters nor whitespace."""
    if not text:
        return 0.0
    return len(_SPECIAL_RE.findall(text)) / len(text)


def audience_level(text: str, bands: AudienceBands) -> AudienceLevel:
    """Audience level from a grade-level readability score.

    Mean word length and mean sentence length feed a linear score; the
    configured cut points split the score range into child, teen, adult,
    and expert bands.  Sentence count is the number of terminator runs,
    with a minimum of one.
    """
    tokens = tokenize(text)
    if len(tokens) < bands.min_tokens:
        return AudienceLevel.UNKNOWN
    mean_word = sum(len(t) for t in tokens) / len(tokens)
    sentences = len(_SENTENCE_END_RE.findall(text)) or 1
    mean_sentence = len(tokens) / sentences
    score = (
        bands.word_length_weight * mean_word
        + bands.sentence_length_weight * mean_sentence
        + bands.intercept
    )
    if score < bands.cut_points[0]:
        return AudienceLevel.CHILD
    if score < bands.cut_points[1]:
        return AudienceLevel.TEEN
    if score < bands.cut_points[2]:
        return AudienceLevel.ADULT
    return AudienceLevel.EXPERT


def compute_indicators(
    doc: Document,
    lexicons: Lexicons,
    thresholds: Thresholds,
    lm: NGramLM | None = None,
) -> IndicatorReport:
    """Compute the full indicator report for one document.

    Perplexity stays None when no model is supplied.  The quality class is
    assigned from the thresholds; the audience level from the readability
    bands.
    """
    language = doc.language.tag if doc.language is not None else "en"
    hits = lexicons.sensitive_hits(doc.text)
    report = IndicatorReport(
        stopword_ratio=stopword_ratio(doc.text, lexicons.stopword_set(language)),
        special_symbol_ratio=special_symbol_ratio(doc.text),
        sensitive_term_count=sum(hits.values()),
        perplexity=perplexity(lm, doc.text) if lm is not None else None,
    )
    report.quality = classify_quality(report, thresholds)
    report.audience = audience_level(doc.text, thresholds.audience)
    return report


# ---------------------------------------------------------------------------
# Safety screening.
# ---------------------------------------------------------------------------


def safety_screen(
    doc: Document, lexicons: Lexicons, policy: SafetyPolicy
) -> tuple[VerdictDecision, set[RiskCategory]]:
    """Map per-category sensitive hits to a keep/flag/drop verdict.

    Categories at or above their flag level become risk categories; any
    category at or above its drop level drops the document.  When the
    document carries a context record its safety attributes are updated in
    place so downstream serialization sees the screening result.
    """
    hits = lexicons.sensitive_hits(doc.text)
    decision = VerdictDecision.KEEP
    flagged: set[RiskCategory] = set()
    for category, count in sorted(hits.items()):
        flag_at, drop_at = policy.levels(category)
        if count >= drop_at:
            decision = VerdictDecision.DROP
        if count >= flag_at:
            try:
                flagged.add(RiskCategory(category))
            except ValueError:
                continue
    if decision is not VerdictDecision.DROP and flagged:
        decision = VerdictDecision.FLAG
    if flagged or decision is VerdictDecision.DROP:
        # Risk findings must survive to serialization, so a document without
        # a context record gets one here.  Keep decisions leave any upstream
        # risk annotation untouched.
        if doc.context is None:
            doc.context = ContextRecord()
        safety = doc.context.safety
        if safety is None:
            safety = doc.context.safety = SafetyAttributes()
        safety.risk_flag = True
        safety.risk_categories |= flagged
    if decision is not VerdictDecision.KEEP:
        detail = ",".join(
            f"{c}:{n}" for c, n in sorted(hits.items())
        )
        doc.verdicts.append(
            FilterVerdict(
                stage=VerdictStage.SAFETY,
                decision=decision,
                reason_code="sensitive_terms",
                detail=detail,
            )
        )
    return decision, flagged


# ---------------------------------------------------------------------------
# External scoring service client.
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class ScorerConfig:
    """Endpoint for an external quality/audience/safety scorer."""

    url: str
    timeout_s: float = 1.0


def score_document(doc: Document, config: ScorerConfig) -> dict | None:
    """POST {id, text} to the scoring service and return its JSON reply.

    Any transport error, timeout, non-JSON payload, or non-object reply
    returns None so the caller can fall back to heuristic values.
    """
    payload = json.dumps({"id": doc.id, "text": doc.text}).encode("utf-8")
    request = urllib.request.Request(
        config.url,
        data=payload,
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(request, timeout=config.timeout_s) as response:
            raw = response.read()
        reply = json.loads(raw.decode("utf-8"))
    except (urllib.error.URLError, TimeoutError, OSError, ValueError):
        return None
    if not isinstance(reply, dict):
        return None
    return reply


def apply_external_scores(doc: Document, reply: Mapping) -> None:
    """Overlay service-provided labels onto the document's report and context.

    Recognized keys: quality, audience, safety_categories.  Unknown label
    values are ignored rather than raised, since the service is advisory.
    """
    if doc.indicators is None:
        return
    quality = reply.get("quality")
    if isinstance(quality, str):
        try:
            doc.indicators.quality = QualityClass(quality)
        except ValueError:
            pass
    audience = reply.get("audience")
    if isinstance(audience, str):
        try:
            doc.indicators.audience = AudienceLevel(audience)
        except ValueError:
            pass
    categories = reply.get("safety_categories")
    if isinstance(categories, list):
        extra: set[RiskCategory] = set()
        for name in categories:
            if isinstance(name, str):
                try:
                    extra.add(RiskCategory(name))
                except ValueError:
                    continue
        if extra:
            if doc.context is None:
                doc.context = ContextRecord()
            safety = doc.context.safety
            if safety is None:
                safety = doc.context.safety = SafetyAttributes()
            safety.risk_flag = True
            safety.risk_categories |= extra
