"""Byte-pair vocabulary training, encoding, decoding, and merging.

Two symbolization modes are supported.  Byte mode maps input bytes to
single characters through the latin-1 bijection, splits the mapped text
into space-terminated pieces, and round-trips exactly.  Whitespace mode
splits on whitespace, appends an end-of-word marker to each word, and is
deliberately lossy: decoding rejoins words with single spaces.

Training repeatedly merges the most frequent adjacent symbol pair, with
ties broken toward the lexicographically smaller pair.  Encoding applies
learned merges in order, replacing occurrences left to right without
overlap.
"""

from __future__ import annotations

import heapq
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

WORD_END = "</w>"
UNKNOWN = "<unk>"

# Published sizes of a widely used multilingual base vocabulary and a
# domain extension trained on top of it; merging the two must give exactly
# their sum when the extension was built to avoid collisions.
REFERENCE_BASE_SIZE = 151_643
REFERENCE_EXTENSION_SIZE = 15_901
REFERENCE_MERGED_SIZE = 167_544

# Pieces end after each space so merges never span a space boundary.
_PIECE_RE = re.compile(r"(?<= )")

_MODES = ("byte", "whitespace")


class VocabError(ValueError):
    """Raised for malformed vocabularies or mode mismatches."""


def _to_byte_chars(text: str) -> str:
    """Map text to one char per UTF-8 byte via the latin-1 bijection."""
    return text.encode("utf-8").decode("latin-1")


def _from_byte_chars(chars: str) -> str:
    return chars.encode("latin-1").decode("utf-8", errors="replace")


def split_pieces(text: str, mode: str) -> list[str]:
    """Break text into the units merges are confined to.

    Byte mode keeps every byte: each piece is a run of byte-chars ending
    just after a space.  Whitespace mode keeps only the words.
    """
    if mode == "byte":
        if not text:
            return []
        return [p for p in _PIECE_RE.split(_to_byte_chars(text)) if p]
    if mode == "whitespace":
        return text.split()
    raise VocabError(f"unknown mode {mode!r}")


def _piece_symbols(piece: str, mode: str) -> tuple[str, ...]:
    if mode == "byte":
        return tuple(piece)
    return tuple(piece) + (WORD_END,)


def _base_symbols(mode: str, pieces: Iterable[str]) -> set[str]:
    if mode == "byte":
        # Pre-seeding all byte values keeps encoding total and stable even
        # for bytes absent from the training sample.
        return {chr(i) for i in range(256)}
    symbols: set[str] = {WORD_END, UNKNOWN}
    for piece in pieces:
        symbols.update(piece)
    return symbols


@dataclass(slots=True)
class Vocabulary:
    """Ordered token table plus the merge list that produced it.

    ``entries`` is the id order: sorted base symbols first, then merge
    products in the order learned.  ``merges`` pairs are applied in list
    order during encoding.
    """

    mode: str
    entries: tuple[str, ...]
    merges: tuple[tuple[str, str], ...]
    token_to_id: dict[str, int] = field(init=False, repr=False)
    ranks: dict[tuple[str, str], int] = field(init=False, repr=False)
    _piece_cache: dict[str, tuple[int, ...]] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if self.mode not in _MODES:
            raise VocabError(f"unknown mode {self.mode!r}")
        self.token_to_id = {tok: i for i, tok in enumerate(self.entries)}
        if len(self.token_to_id) != len(self.entries):
            raise VocabError("vocabulary entries are not unique")
        self.ranks = {pair: i for i, pair in enumerate(self.merges)}
        for left, right in self.merges:
            if left + right not in self.token_to_id:
                raise VocabError(f"merge product {left + right!r} missing from entries")
        self._piece_cache = {}

    @property
    def size(self) -> int:
        return len(self.entries)

    def id_of(self, token: str) -> int:
        return self.token_to_id[token]

    def token_of(self, idx: int) -> str:
        return self.entries[idx]


# ---------------------------------------------------------------------------
# Training.
# ---------------------------------------------------------------------------


def train_bpe(
    corpus: Iterable[str],
    num_merges: int | None = None,
    target_size: int | None = None,
    mode: str = "byte",
) -> Vocabulary:
    """Learn merges by repeatedly joining the most frequent adjacent pair.

    Exactly one of ``num_merges`` and ``target_size`` must be given;
    ``target_size`` counts base symbols plus merges.  Equal counts resolve
    toward the lexicographically smaller pair.  A candidate whose product
    string already names a token is skipped so ids stay unique.  Training
    stops early when no adjacent pair remains.
    """
    if mode not in _MODES:
        raise VocabError(f"unknown mode {mode!r}")
    piece_freq: Counter = Counter()
    for text in corpus:
        piece_freq.update(split_pieces(text, mode))
    base = _base_symbols(mode, piece_freq)
    if target_size is not None:
        if num_merges is not None:
            raise ValueError("give num_merges or target_size, not both")
        num_merges = target_size - len(base)
        if num_merges < 0:
            raise ValueError(
                f"target_size {target_size} below base symbol count {len(base)}"
            )
    elif num_merges is None:
        raise ValueError("one of num_merges or target_size is required")

    sequences: list[list[str]] = []
    freqs: list[int] = []
    for piece, freq in piece_freq.items():
        sequences.append(list(_piece_symbols(piece, mode)))
        freqs.append(freq)

    pair_counts: Counter = Counter()
    pair_sites: dict[tuple[str, str], set[int]] = defaultdict(set)
    for idx, seq in enumerate(sequences):
        freq = freqs[idx]
        for pair in zip(seq, seq[1:]):
            pair_counts[pair] += freq
            pair_sites[pair].add(idx)

    heap: list[tuple[int, tuple[str, str]]] = [
        (-count, pair) for pair, count in pair_counts.items()
    ]
    heapq.heapify(heap)

    entries: list[str] = sorted(base)
    token_set = set(entries)
    merges: list[tuple[str, str]] = []

    def push(pair: tuple[str, str]) -> None:
        count = pair_counts.get(pair, 0)
        if count > 0:
            heapq.heappush(heap, (-count, pair))

    while len(merges) < num_merges and heap:
        neg_count, pair = heapq.heappop(heap)
        current = pair_counts.get(pair, 0)
        if current <= 0:
            continue
        if -neg_count != current:
            # Stale heap entry; the true count was pushed separately.
            continue
        product = pair[0] + pair[1]
        if product in token_set:
            # A different merge path already produced this string.
            del pair_counts[pair]
            continue
        merges.append(pair)
        entries.append(product)
        token_set.add(product)
        changed: set[tuple[str, str]] = set()
        for idx in list(pair_sites.get(pair, ())):
            seq = sequences[idx]
            old_pairs = Counter(zip(seq, seq[1:]))
            if (pair[0], pair[1]) not in old_pairs:
                pair_sites[pair].discard(idx)
                continue
            new_seq = _merge_sequence(seq, pair, product)
            sequences[idx] = new_seq
            new_pairs = Counter(zip(new_seq, new_seq[1:]))
            freq = freqs[idx]
            for p in set(old_pairs) | set(new_pairs):
                delta = new_pairs.get(p, 0) - old_pairs.get(p, 0)
                if delta:
                    pair_counts[p] += delta * freq
                    if pair_counts[p] <= 0:
                        pair_counts.pop(p, None)
                    changed.add(p)
                if new_pairs.get(p, 0):
                    pair_sites[p].add(idx)
        pair_counts.pop(pair, None)
        pair_sites.pop(pair, None)
        for p in changed:
            push(p)

    return Vocabulary(mode=mode, entries=tuple(entries), merges=tuple(merges))


def _merge_sequence(
    seq: Sequence[str], pair: tuple[str, str], product: str
) -> list[str]:
    """Replace left-to-right non-overlapping occurrences of the pair."""
    out: list[str] = []
    i = 0
    left, right = pair
    n = len(seq)
    while i < n:
        if i < n - 1 and seq[i] == left and seq[i + 1] == right:
            out.append(product)
            i += 2
        else:
            out.append(seq[i])
            i += 1
    return out


# ---------------------------------------------------------------------------
# Encoding and decoding.
# ---------------------------------------------------------------------------


_PIECE_CACHE_LIMIT = 262_144


def _encode_piece(piece: str, vocab: Vocabulary) -> tuple[int, ...]:
    symbols = list(_piece_symbols(piece, vocab.mode))
    if vocab.mode == "whitespace":
        known = vocab.token_to_id
        symbols = [s if s in known else UNKNOWN for s in symbols]
    ranks = vocab.ranks
    while len(symbols) > 1:
        best_rank: int | None = None
        best_pair: tuple[str, str] | None = None
        for i in range(len(symbols) - 1):
            rank = ranks.get((symbols[i], symbols[i + 1]))
            if rank is not None and (best_rank is None or rank < best_rank):
                best_rank = rank
                best_pair = (symbols[i], symbols[i + 1])
        if best_pair is None:
            break
        symbols = _merge_sequence(symbols, best_pair, best_pair[0] + best_pair[1])
    return tuple(vocab.token_to_id[s] for s in symbols)


def encode(text: str, vocab: Vocabulary) -> list[int]:
    """Token ids for the text under the vocabulary's merges.

    Applying the lowest-rank adjacent pair repeatedly is equivalent to
    replaying merges in learned order, because a merge product can never
    be an operand of an earlier merge.  Piece encodings are cached on the
    vocabulary, which word-frequency skew makes very effective.
    """
    cache = vocab._piece_cache
    ids: list[int] = []
    for piece in split_pieces(text, vocab.mode):
        got = cache.get(piece)
        if got is None:
            got = _encode_piece(piece, vocab)
            if len(cache) < _PIECE_CACHE_LIMIT:
                cache[piece] = got
        ids.extend(got)
    return ids


def decode(ids: Sequence[int], vocab: Vocabulary) -> str:
    """Inverse of encode for byte mode; space-normalized text otherwise."""
    tokens = "".join(vocab.entries[i] for i in ids)
    if vocab.mode == "byte":
        return _from_byte_chars(tokens)
    text = tokens.replace(WORD_END, " ")
    if text.endswith(" "):
        text = text[:-1]
    return text


# ---------------------------------------------------------------------------
# Merging two vocabularies.
# ---------------------------------------------------------------------------


def merge_vocab(base: Vocabulary, extension: Vocabulary) -> tuple[Vocabulary, int]:
    """Append extension entries to the base, dropping colliding tokens.

    Base ids are preserved exactly; extension tokens already present in
    the base are dropped and counted.  Extension merges survive only when
    their product survived.  Returns the merged vocabulary and the number
    of collisions.
    """
    if base.mode != extension.mode:
        raise VocabError(
            f"cannot merge mode {base.mode!r} with mode {extension.mode!r}"
        )
    entries = list(base.entries)
    existing = set(entries)
    collisions = 0
    for token in extension.entries:
        if token in existing:
            collisions += 1
            continue
        entries.append(token)
        existing.add(token)
    merges = list(base.merges)
    seen_pairs = set(merges)
    for left, right in extension.merges:
        pair = (left, right)
        if pair in seen_pairs:
            continue
        if left + right in existing and left in existing and right in existing:
            merges.append(pair)
            seen_pairs.add(pair)
    merged = Vocabulary(mode=base.mode, entries=tuple(entries), merges=tuple(merges))
    return merged, collisions


# ---------------------------------------------------------------------------
# File formats.
# ---------------------------------------------------------------------------

_ESCAPES = {"\\": "\\\\", "\n": "\\n", "\r": "\\r", "\t": "\\t", " ": "\\s"}
_UNESCAPES = {"\\": "\\", "n": "\n", "r": "\r", "t": "\t", "s": " "}


def _escape_token(token: str) -> str:
    return "".join(_ESCAPES.get(ch, ch) for ch in token)


def _unescape_token(raw: str) -> str:
    out: list[str] = []
    i = 0
    while i < len(raw):
        ch = raw[i]
        if ch == "\\":
            if i + 1 >= len(raw):
                raise VocabError(f"dangling escape in {raw!r}")
            key = raw[i + 1]
            if key not in _UNESCAPES:
                raise VocabError(f"unknown escape \\{key} in {raw!r}")
            out.append(_UNESCAPES[key])
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def save_vocab(vocab: Vocabulary, vocab_path: Path, merges_path: Path) -> None:
    """Write the token table and merge list as escaped text files."""
    with open(vocab_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"dwc-vocab v1 mode={vocab.mode}\n")
        for token in vocab.entries:
            fh.write(_escape_token(token) + "\n")
    with open(merges_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"dwc-merges v1 mode={vocab.mode}\n")
        for left, right in vocab.merges:
            fh.write(f"{_escape_token(left)} {_escape_token(right)}\n")


def load_vocab(vocab_path: Path, merges_path: Path) -> Vocabulary:
    vocab_lines = Path(vocab_path).read_text(encoding="utf-8").split("\n")
    if not vocab_lines or not vocab_lines[0].startswith("dwc-vocab v1 mode="):
        raise VocabError(f"{vocab_path}: missing vocabulary header")
    mode = vocab_lines[0].split("mode=", 1)[1]
    entries = tuple(_unescape_token(line) for line in vocab_lines[1:] if line)
    merges_lines = Path(merges_path).read_text(encoding="utf-8").split("\n")
    if not merges_lines or not merges_lines[0].startswith("dwc-merges v1 mode="):
        raise VocabError(f"{merges_path}: missing merges header")
    if merges_lines[0].split("mode=", 1)[1] != mode:
        raise VocabError("vocabulary and merges files disagree on mode")
    merges = []
    for line in merges_lines[1:]:
        if not line:
            continue
        parts = line.split(" ")
        if len(parts) != 2:
            raise VocabError(f"malformed merge line {line!r}")
        merges.append((_unescape_token(parts[0]), _unescape_token(parts[1])))
    return Vocabulary(mode=mode, entries=entries, merges=tuple(merges))
