"""Exact and near-duplicate removal.

Exact duplicates share a digest of whitespace-normalized text (or a
canonical URL).  Near duplicates are found with word-shingle MinHash
signatures, banded locality-sensitive hashing to propose candidate pairs,
and a signature-similarity verification pass.  Duplicate clusters keep the
earliest document in input order.
"""

from __future__ import annotations

import hashlib
import re
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence
from urllib.parse import parse_qsl, urlencode, urlsplit, urlunsplit

import numpy as np

from .model import Document, FilterVerdict, VerdictDecision, VerdictStage
from .seeds import derived_rng

MERSENNE_61 = (1 << 61) - 1
EMPTY_SLOT = MERSENNE_61
_HASH32_MASK = 0xFFFFFFFF
_SHINGLE_MIX = np.uint64(0x9E3779B97F4A7C15)

DEFAULT_TRACKING_KEYS = frozenset(
    {"gclid", "fbclid", "msclkid", "mc_cid", "mc_eid", "igshid", "ref_src"}
)

_WORD_RE = re.compile(r"\S+")


# ---------------------------------------------------------------------------
# URL canonicalization.
# ---------------------------------------------------------------------------


def canonicalize_url(
    url: str, tracking_keys: frozenset[str] = DEFAULT_TRACKING_KEYS
) -> tuple[str, bool]:
    """Normalize a URL for duplicate detection.

    Lowercases the scheme and host, drops the fragment, removes tracking
    query parameters (any utm_* key plus the configured set), sorts the
    remaining query keys, and strips a trailing path slash.  Returns the
    canonical form and True, or the input unchanged and False when the URL
    cannot be parsed.
    """
    try:
        parts = urlsplit(url)
    except ValueError:
        return url, False
    netloc = parts.netloc
    if "@" in netloc:
        creds, _, hostport = netloc.rpartition("@")
        netloc = creds + "@" + hostport.lower()
    else:
        netloc = netloc.lower()
    path = parts.path
    if path.endswith("/"):
        path = path.rstrip("/")
    pairs = [
        (k, v)
        for k, v in parse_qsl(parts.query, keep_blank_values=True)
        if not k.startswith("utm_") and k not in tracking_keys
    ]
    pairs.sort(key=lambda kv: kv[0])
    query = urlencode(pairs)
    return urlunsplit((parts.scheme.lower(), netloc, path, query, "")), True


# ---------------------------------------------------------------------------
# Exact deduplication.
# ---------------------------------------------------------------------------


def content_digest(text: str) -> str:
    """Digest of the text with all whitespace runs collapsed to one space."""
    normalized = " ".join(text.split())
    return hashlib.sha256(normalized.encode("utf-8")).hexdigest()


@dataclass(slots=True)
class DedupReport:
    docs_in: int = 0
    docs_out: int = 0
    exact_content_removed: int = 0
    exact_url_removed: int = 0
    near_removed: int = 0
    near_clusters: int = 0
    candidates_checked: int = 0

    def to_dict(self) -> dict:
        return {
            "docs_in": self.docs_in,
            "docs_out": self.docs_out,
            "exact_content_removed": self.exact_content_removed,
            "exact_url_removed": self.exact_url_removed,
            "near_removed": self.near_removed,
            "near_clusters": self.near_clusters,
            "candidates_checked": self.candidates_checked,
        }


def dedup_exact(
    docs: Sequence[Document], use_urls: bool = True
) -> tuple[list[Document], DedupReport]:
    """Drop later documents whose content digest or canonical URL repeats.

    The first document with a given key survives; every later holder gets
    a drop verdict naming the survivor.  URL comparison only applies to
    documents whose URL parses.
    """
    report = DedupReport(docs_in=len(docs))
    seen_content: dict[str, str] = {}
    seen_url: dict[str, str] = {}
    kept: list[Document] = []
    for doc in docs:
        digest = content_digest(doc.text)
        survivor = seen_content.get(digest)
        reason = "exact_duplicate"
        if survivor is None and use_urls and doc.url:
            canonical, parsed = canonicalize_url(doc.url)
            if parsed:
                survivor = seen_url.get(canonical)
                if survivor is not None:
                    reason = "url_duplicate"
                else:
                    seen_url[canonical] = doc.id
        if survivor is not None:
            doc.verdicts.append(
                FilterVerdict(
                    stage=VerdictStage.DEDUP,
                    decision=VerdictDecision.DROP,
                    reason_code=reason,
                    detail=survivor,
                )
            )
            if reason == "exact_duplicate":
                report.exact_content_removed += 1
            else:
                report.exact_url_removed += 1
            continue
        seen_content[digest] = doc.id
        kept.append(doc)
    report.docs_out = len(kept)
    return kept, report


# ---------------------------------------------------------------------------
# MinHash signatures.
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class MinHashParams:
    """Signature and banding configuration.

    ``num_perm`` must equal ``bands * rows``.  The S-curve for candidate
    selection is 1 - (1 - s**rows)**bands at signature similarity s, so
    bands and rows set where the selection threshold falls.  Pairs that
    land in a shared band bucket are verified against
    ``verify_threshold`` on full-signature agreement.
    """

    num_perm: int = 128
    shingle_k: int = 5
    bands: int = 16
    rows: int = 8
    verify_threshold: float = 0.8
    seed: int = 0

    def validate(self) -> None:
        if self.num_perm < 1:
            raise ValueError("num_perm must be positive")
        if self.bands * self.rows != self.num_perm:
            raise ValueError(
                f"bands * rows must equal num_perm "
                f"({self.bands} * {self.rows} != {self.num_perm})"
            )
        if self.shingle_k < 1:
            raise ValueError("shingle_k must be positive")
        if not 0.0 <= self.verify_threshold <= 1.0:
            raise ValueError("verify_threshold must lie in [0, 1]")


_word_hash_cache: dict[str, int] = {}


def _word_hash(word: str) -> int:
    got = _word_hash_cache.get(word)
    if got is None:
        digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
        got = int.from_bytes(digest, "little") & _HASH32_MASK
        if len(_word_hash_cache) < 2_000_000:
            _word_hash_cache[word] = got
    return got


def shingle_hashes(text: str, k: int) -> np.ndarray:
    """Distinct 32-bit hashes of the text's k-word shingles.

    Words are whitespace-delimited after lowercasing.  A text with fewer
    than k words has no shingles and yields an empty array.
    """
    words = _WORD_RE.findall(text.lower())
    if len(words) < k:
        return np.empty(0, dtype=np.uint64)
    hashes = np.fromiter(
        (_word_hash(w) for w in words), count=len(words), dtype=np.uint64
    )
    n = len(words) - k + 1
    combined = np.zeros(n, dtype=np.uint64)
    for offset in range(k):
        combined = combined * _SHINGLE_MIX + hashes[offset : offset + n]
    combined &= np.uint64(_HASH32_MASK)
    return np.unique(combined)


def _permutation_tables(params: MinHashParams) -> tuple[np.ndarray, np.ndarray]:
    rng = derived_rng(params.seed, "minhash-permutations")
    a = np.array(
        [rng.randrange(1, MERSENNE_61) for _ in range(params.num_perm)],
        dtype=np.uint64,
    )
    b = np.array(
        [rng.randrange(0, MERSENNE_61) for _ in range(params.num_perm)],
        dtype=np.uint64,
    )
    return a, b


_perm_cache: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}


def _permutations(params: MinHashParams) -> tuple[np.ndarray, np.ndarray]:
    key = (params.num_perm, params.seed)
    got = _perm_cache.get(key)
    if got is None:
        got = _perm_cache[key] = _permutation_tables(params)
    return got


def _mod_mersenne_product(a: np.ndarray, h: np.ndarray) -> np.ndarray:
    """(a[:, None] * h[None, :]) mod (2**61 - 1) without 64-bit overflow.

    ``a`` holds 61-bit coefficients and ``h`` 32-bit shingle hashes.  The
    low 32 bits of ``a`` multiply ``h`` directly (product below 2**64);
    the high 29 bits multiply ``h`` and are then shifted by 32 inside the
    field, using 2**61 == 1 (mod p) to rotate instead of overflow.
    """
    prime = np.uint64(MERSENNE_61)
    a_hi = a >> np.uint64(32)
    a_lo = a & np.uint64(_HASH32_MASK)
    t_hi = (a_hi[:, None] * h[None, :]) % prime
    rotated = ((t_hi & np.uint64((1 << 29) - 1)) << np.uint64(32)) + (
        t_hi >> np.uint64(29)
    )
    t_lo = (a_lo[:, None] * h[None, :]) % prime
    return (rotated + t_lo) % prime


def minhash_signature(text: str, params: MinHashParams) -> np.ndarray:
    """MinHash signature over the text's shingle set.

    Each slot is min over shingles of (a*h + b) mod (2**61 - 1) with a and
    b drawn from the full field, a proper universal family over the 32-bit
    shingle domain.  Texts with no shingles get every slot set to the
    sentinel value, which the LSH stage skips.
    """
    shingles = shingle_hashes(text, params.shingle_k)
    if shingles.size == 0:
        return np.full(params.num_perm, EMPTY_SLOT, dtype=np.uint64)
    a, b = _permutations(params)
    signature = np.full(params.num_perm, np.iinfo(np.uint64).max, dtype=np.uint64)
    prime = np.uint64(MERSENNE_61)
    block = 16384
    for start in range(0, shingles.size, block):
        chunk = shingles[start : start + block]
        values = (_mod_mersenne_product(a, chunk) + b[:, None]) % prime
        np.minimum(signature, values.min(axis=1), out=signature)
    return signature


def signature_similarity(sig_a: np.ndarray, sig_b: np.ndarray) -> float:
    """Fraction of matching slots, an unbiased estimate of shingle Jaccard."""
    if sig_a.shape != sig_b.shape:
        raise ValueError("signatures must have the same length")
    return float(np.count_nonzero(sig_a == sig_b)) / sig_a.size


def jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


# ---------------------------------------------------------------------------
# Banded LSH and near-duplicate clustering.
# ---------------------------------------------------------------------------


def lsh_candidate_pairs(
    signatures: Sequence[np.ndarray], params: MinHashParams
) -> set[tuple[int, int]]:
    """Index pairs that share at least one band bucket.

    Signatures made entirely of the empty-set sentinel are skipped; they
    carry no shingle evidence and would otherwise all collide.
    """
    params.validate()
    buckets: dict[tuple[int, bytes], list[int]] = defaultdict(list)
    for idx, sig in enumerate(signatures):
        if sig.size and int(sig[0]) == EMPTY_SLOT and bool(np.all(sig == EMPTY_SLOT)):
            continue
        for band in range(params.bands):
            chunk = sig[band * params.rows : (band + 1) * params.rows]
            key = (band, chunk.tobytes())
            buckets[key].append(idx)
    pairs: set[tuple[int, int]] = set()
    for members in buckets.values():
        if len(members) < 2:
            continue
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                pairs.add((members[i], members[j]))
    return pairs


class _UnionFind:
    __slots__ = ("parent",)

    def __init__(self, n: int) -> None:
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, x: int, y: int) -> None:
        rx, ry = self.find(x), self.find(y)
        if rx != ry:
            # Smaller index wins so clusters resolve to the earliest document.
            if rx > ry:
                rx, ry = ry, rx
            self.parent[ry] = rx


def dedup_near(
    docs: Sequence[Document],
    params: MinHashParams | None = None,
    signatures: Sequence[np.ndarray] | None = None,
) -> tuple[list[Document], DedupReport]:
    """Cluster near-duplicates and keep the earliest member of each cluster.

    Candidates come from banded LSH; a pair joins a cluster only if its
    full-signature similarity reaches the verify threshold.  Precomputed
    signatures may be passed to skip re-hashing.
    """
    if params is None:
        params = MinHashParams()
    params.validate()
    report = DedupReport(docs_in=len(docs))
    if signatures is None:
        signatures = [minhash_signature(doc.text, params) for doc in docs]
    elif len(signatures) != len(docs):
        raise ValueError("signature count does not match document count")
    pairs = lsh_candidate_pairs(signatures, params)
    report.candidates_checked = len(pairs)
    uf = _UnionFind(len(docs))
    for i, j in sorted(pairs):
        if signature_similarity(signatures[i], signatures[j]) >= params.verify_threshold:
            uf.union(i, j)
    clusters: dict[int, list[int]] = defaultdict(list)
    for idx in range(len(docs)):
        clusters[uf.find(idx)].append(idx)
    drop: dict[int, int] = {}
    for root, members in clusters.items():
        if len(members) > 1:
            report.near_clusters += 1
            for idx in members:
                if idx != root:
                    drop[idx] = root
    kept: list[Document] = []
    for idx, doc in enumerate(docs):
        if idx in drop:
            doc.verdicts.append(
                FilterVerdict(
                    stage=VerdictStage.DEDUP,
                    decision=VerdictDecision.DROP,
                    reason_code="near_duplicate",
                    detail=docs[drop[idx]].id,
                )
            )
            report.near_removed += 1
        else:
            kept.append(doc)
    report.docs_out = len(kept)
    return kept, report
