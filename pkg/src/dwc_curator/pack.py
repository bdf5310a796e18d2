"""Sequence packing: chunking, best-fit bin placement, and shard output.

Token streams are chunked to the training length, then chunks are placed
into bins by a best-fit policy: each chunk goes to the bin with the
smallest residual capacity that still holds it, most recently used bin
first among equals, or opens a new bin.  A segment tree over residual
capacities makes each placement logarithmic.

Two simpler baselines are included for comparison: concatenating all
tokens and slicing at the training length, and filling bins greedily in
document order.  Packed bins serialize to fixed-width binary shards with
a JSON sidecar of checksums.
"""

from __future__ import annotations

import hashlib
import json
import struct
from array import array
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .seeds import derived_rng


def chunk_tokens(ids: Sequence[int], length: int) -> list[Sequence[int]]:
    """Split ids into consecutive chunks; all but the last have full length."""
    if length < 1:
        raise ValueError(f"chunk length must be positive, got {length}")
    return [ids[i : i + length] for i in range(0, len(ids), length)]


class CapacityIndex:
    """Find-first structure over bin residual capacities.

    Residuals range over 0..capacity.  ``pop_best(needed)`` removes and
    returns the bin id with the smallest residual at least ``needed``,
    preferring the most recently pushed bin at that residual; ``push``
    files a bin under its current residual.  A segment tree of occupancy
    counts over the residual range answers first-at-least queries in
    logarithmic time.
    """

    __slots__ = ("capacity", "_size", "_count", "_stacks")

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        size = 1
        while size < capacity + 1:
            size *= 2
        self._size = size
        self._count = [0] * (2 * size)
        self._stacks: list[list[int]] = [[] for _ in range(capacity + 1)]

    def push(self, residual: int, bin_id: int) -> None:
        if not 0 <= residual <= self.capacity:
            raise ValueError(f"residual {residual} outside 0..{self.capacity}")
        self._stacks[residual].append(bin_id)
        node = self._size + residual
        while node:
            self._count[node] += 1
            node //= 2

    def pop_best(self, needed: int) -> int | None:
        if needed > self.capacity:
            return None
        residual = self._first_at_least(1, 0, self._size, max(needed, 0))
        if residual < 0:
            return None
        bin_id = self._stacks[residual].pop()
        node = self._size + residual
        while node:
            self._count[node] -= 1
            node //= 2
        return bin_id

    def _first_at_least(self, node: int, lo: int, hi: int, s: int) -> int:
        if self._count[node] == 0 or hi <= s or lo > self.capacity:
            return -1
        if lo + 1 == hi:
            return lo
        mid = (lo + hi) // 2
        got = self._first_at_least(2 * node, lo, mid, s)
        if got >= 0:
            return got
        return self._first_at_least(2 * node + 1, mid, hi, s)


@dataclass(slots=True)
class PackStats:
    capacity: int
    order: str
    items: int = 0
    bins: int = 0
    data_tokens: int = 0
    pad_tokens: int = 0

    @property
    def pad_ratio(self) -> float:
        total = self.bins * self.capacity
        return self.pad_tokens / total if total else 0.0

    def to_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "order": self.order,
            "items": self.items,
            "bins": self.bins,
            "data_tokens": self.data_tokens,
            "pad_tokens": self.pad_tokens,
            "pad_ratio": self.pad_ratio,
        }


_ORDERS = ("size_desc", "input")


def pack_best_fit(
    lengths: Sequence[int], capacity: int, order: str = "size_desc"
) -> tuple[list[list[int]], PackStats]:
    """Place each item in the fullest bin that still fits it.

    Returns bins as lists of input indices in placement order, plus
    summary statistics.  ``size_desc`` processes items largest first with
    a stable sort, ``input`` in given order.  Lengths must lie in
    1..capacity; chunked token streams satisfy this by construction.
    """
    if order not in _ORDERS:
        raise ValueError(f"unknown order {order!r}")
    for length in lengths:
        if not 1 <= length <= capacity:
            raise ValueError(f"length {length} outside 1..{capacity}")
    if order == "size_desc":
        sequence = sorted(range(len(lengths)), key=lambda i: -lengths[i])
    else:
        sequence = list(range(len(lengths)))
    index = CapacityIndex(capacity)
    bins: list[list[int]] = []
    residuals: list[int] = []
    for i in sequence:
        s = lengths[i]
        bin_id = index.pop_best(s)
        if bin_id is None:
            bin_id = len(bins)
            bins.append([])
            residuals.append(capacity)
        bins[bin_id].append(i)
        residuals[bin_id] -= s
        index.push(residuals[bin_id], bin_id)
    stats = PackStats(
        capacity=capacity,
        order=order,
        items=len(lengths),
        bins=len(bins),
        data_tokens=sum(lengths),
        pad_tokens=sum(residuals),
    )
    return bins, stats


# ---------------------------------------------------------------------------
# Baselines.
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class BaselineStats:
    capacity: int
    bins: int = 0
    data_tokens: int = 0
    pad_tokens: int = 0
    split_docs: int = 0

    @property
    def pad_ratio(self) -> float:
        total = self.bins * self.capacity
        return self.pad_tokens / total if total else 0.0


def concat_then_slice(doc_lengths: Sequence[int], capacity: int) -> BaselineStats:
    """Concatenate every document and cut at each capacity boundary.

    Only the final bin carries padding, but any document crossing a cut
    is broken mid-stream; ``split_docs`` counts documents split at least
    once.
    """
    stats = BaselineStats(capacity=capacity)
    total = sum(doc_lengths)
    stats.data_tokens = total
    if total == 0:
        return stats
    stats.bins = -(-total // capacity)
    stats.pad_tokens = stats.bins * capacity - total
    offset = 0
    for length in doc_lengths:
        first_bin = offset // capacity
        last_bin = (offset + length - 1) // capacity
        if last_bin > first_bin:
            stats.split_docs += 1
        offset += length
    return stats


def greedy_doc_fill(doc_lengths: Sequence[int], capacity: int) -> BaselineStats:
    """Fill bins in document order, padding when the next document misses.

    A document longer than the full capacity is sliced across bins; other
    documents stay whole, so a bin closes with padding whenever the next
    whole document does not fit.
    """
    stats = BaselineStats(capacity=capacity)
    fill = 0
    opened = False
    for length in doc_lengths:
        stats.data_tokens += length
        if length > capacity:
            # Slice: top up the current bin, then stream full bins.
            if opened:
                take = capacity - fill
                length -= take
                stats.bins += 1
                opened = False
                fill = 0
            full, rest = divmod(length, capacity)
            stats.bins += full
            if rest:
                opened = True
                fill = rest
            continue
        if not opened:
            opened = True
            fill = length
        elif length <= capacity - fill:
            fill += length
        else:
            stats.pad_tokens += capacity - fill
            stats.bins += 1
            fill = length
        if fill == capacity:
            stats.bins += 1
            opened = False
            fill = 0
    if opened:
        stats.pad_tokens += capacity - fill
        stats.bins += 1
    return stats


# ---------------------------------------------------------------------------
# Mixed training lengths.
# ---------------------------------------------------------------------------


def assign_lengths(
    doc_lengths: Sequence[int],
    choices: Sequence[int],
    ratios: Sequence[float],
    seed: int = 0,
) -> list[int]:
    """Choose a training length per document by weighted draw.

    Ratios are token-share weights and must all be positive; each
    document draws independently from one seeded stream, so the realized
    token share of each length converges on its ratio.
    """
    if len(choices) != len(ratios):
        raise ValueError("choices and ratios differ in length")
    if not choices:
        raise ValueError("at least one training length is required")
    if any(r <= 0 for r in ratios):
        raise ValueError("ratios must be positive")
    rng = derived_rng(seed, "pack-length-assignment")
    total = float(sum(ratios))
    weights = [r / total for r in ratios]
    return [rng.choices(choices, weights=weights)[0] for _ in doc_lengths]


def pack_mixed(
    doc_lengths: Sequence[int],
    choices: Sequence[int],
    ratios: Sequence[float],
    seed: int = 0,
    order: str = "size_desc",
) -> tuple[list[int], dict[int, tuple[list[list[int]], PackStats]]]:
    """Assign documents to training lengths, then best-fit pack each group.

    Returns the per-document length assignment and, per training length,
    the packed bins (as document indices) with their statistics.  The
    chunking step runs inside each group: a document landing at length L
    contributes ceil(len/L) chunks.
    """
    assignment = assign_lengths(doc_lengths, choices, ratios, seed)
    packed: dict[int, tuple[list[list[int]], PackStats]] = {}
    for target in sorted(set(choices)):
        members = [i for i, chosen in enumerate(assignment) if chosen == target]
        chunk_lengths: list[int] = []
        chunk_owner: list[int] = []
        for doc_idx in members:
            remaining = doc_lengths[doc_idx]
            while remaining > target:
                chunk_lengths.append(target)
                chunk_owner.append(doc_idx)
                remaining -= target
            if remaining:
                chunk_lengths.append(remaining)
                chunk_owner.append(doc_idx)
        bins, stats = pack_best_fit(chunk_lengths, target, order=order)
        owner_bins = [[chunk_owner[i] for i in bin_members] for bin_members in bins]
        packed[target] = (owner_bins, stats)
    return assignment, packed


# ---------------------------------------------------------------------------
# Token storage.
# ---------------------------------------------------------------------------


class TokenStore:
    """Append-only store of per-document token streams.

    ``tokens.bin`` holds little-endian u32 ids end to end; the JSON index
    maps document id to (offset, length) in tokens.  Lengths are cheap to
    read without touching the binary file.
    """

    def __init__(self, directory: Path) -> None:
        self.directory = Path(directory)
        self.bin_path = self.directory / "tokens.bin"
        self.index_path = self.directory / "tokens_index.json"
        self._index: dict[str, tuple[int, int]] = {}
        self._offset = 0
        self._handle = None

    def __enter__(self) -> "TokenStore":
        self.directory.mkdir(parents=True, exist_ok=True)
        self._handle = open(self.bin_path, "wb")
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def append(self, doc_id: str, ids: Sequence[int]) -> None:
        if self._handle is None:
            raise RuntimeError("TokenStore is not open for writing")
        if doc_id in self._index:
            raise ValueError(f"duplicate document id {doc_id!r}")
        data = array("I", ids)
        data.tofile(self._handle)
        self._index[doc_id] = (self._offset, len(ids))
        self._offset += len(ids)

    def close(self) -> None:
        if self._handle is not None:
            self._handle.close()
            self._handle = None
            payload = {doc_id: list(span) for doc_id, span in self._index.items()}
            self.index_path.write_text(
                json.dumps(payload, sort_keys=True, separators=(",", ":")),
                encoding="utf-8",
            )

    @classmethod
    def open_read(cls, directory: Path) -> "TokenStore":
        store = cls(directory)
        raw = json.loads(store.index_path.read_text(encoding="utf-8"))
        store._index = {doc_id: (span[0], span[1]) for doc_id, span in raw.items()}
        return store

    @property
    def lengths(self) -> dict[str, int]:
        return {doc_id: span[1] for doc_id, span in self._index.items()}

    def doc_ids(self) -> list[str]:
        return list(self._index)

    def get(self, doc_id: str) -> array:
        offset, length = self._index[doc_id]
        with open(self.bin_path, "rb") as fh:
            fh.seek(offset * 4)
            data = array("I")
            data.fromfile(fh, length)
        return data


# ---------------------------------------------------------------------------
# Shard files.
# ---------------------------------------------------------------------------


@dataclass(slots=True)
class Span:
    """One contiguous run of a document's tokens inside a packed bin."""

    doc_id: str
    chunk_index: int
    start: int
    end: int


@dataclass(slots=True)
class PackedBin:
    capacity: int
    ids: list[int]
    spans: list[Span] = field(default_factory=list)

    @property
    def pad_tokens(self) -> int:
        return self.capacity - len(self.ids)


def _encode_bin(bin_: PackedBin) -> bytes:
    if len(bin_.ids) > bin_.capacity:
        raise ValueError("bin holds more tokens than its capacity")
    out = bytearray()
    out += struct.pack("<II", bin_.capacity, bin_.pad_tokens)
    padded = list(bin_.ids) + [0] * bin_.pad_tokens
    out += array("I", padded).tobytes()
    out += struct.pack("<I", len(bin_.spans))
    for span in bin_.spans:
        raw_id = span.doc_id.encode("utf-8")
        if len(raw_id) > 0xFFFF:
            raise ValueError("document id too long for span table")
        out += struct.pack("<H", len(raw_id))
        out += raw_id
        out += struct.pack("<III", span.chunk_index, span.start, span.end)
    return bytes(out)


def _decode_bins(blob: bytes) -> Iterator[PackedBin]:
    view = memoryview(blob)
    pos = 0
    while pos < len(view):
        capacity, pad = struct.unpack_from("<II", view, pos)
        pos += 8
        ids = array("I")
        ids.frombytes(view[pos : pos + 4 * capacity])
        pos += 4 * capacity
        (n_spans,) = struct.unpack_from("<I", view, pos)
        pos += 4
        spans = []
        for _ in range(n_spans):
            (id_len,) = struct.unpack_from("<H", view, pos)
            pos += 2
            doc_id = bytes(view[pos : pos + id_len]).decode("utf-8")
            pos += id_len
            chunk_index, start, end = struct.unpack_from("<III", view, pos)
            pos += 12
            spans.append(Span(doc_id, chunk_index, start, end))
        data_len = capacity - pad
        yield PackedBin(capacity=capacity, ids=list(ids[:data_len]), spans=spans)


def write_shards(
    directory: Path,
    bins: Iterable[PackedBin],
    bins_per_shard: int = 1024,
    prefix: str = "shard",
) -> dict:
    """Write packed bins to numbered shard files plus a JSON sidecar.

    The sidecar records per-shard bin counts, byte sizes, and sha256
    digests, making byte-identity between runs easy to verify.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    sidecar: dict = {"format": "dwc-shards-v1", "shards": []}
    buffer: list[bytes] = []
    shard_idx = 0
    totals = {"bins": 0, "data_tokens": 0, "pad_tokens": 0}

    def flush() -> None:
        nonlocal shard_idx, buffer
        if not buffer:
            return
        name = f"{prefix}-{shard_idx:05d}.bin"
        blob = b"".join(buffer)
        (directory / name).write_bytes(blob)
        sidecar["shards"].append(
            {
                "file": name,
                "bins": len(buffer),
                "bytes": len(blob),
                "sha256": hashlib.sha256(blob).hexdigest(),
            }
        )
        shard_idx += 1
        buffer = []

    for bin_ in bins:
        totals["bins"] += 1
        totals["data_tokens"] += len(bin_.ids)
        totals["pad_tokens"] += bin_.pad_tokens
        buffer.append(_encode_bin(bin_))
        if len(buffer) >= bins_per_shard:
            flush()
    flush()
    sidecar.update(totals)
    (directory / "shards.json").write_text(
        json.dumps(sidecar, sort_keys=True, indent=2), encoding="utf-8"
    )
    return sidecar


def read_shards(directory: Path) -> Iterator[PackedBin]:
    """Yield packed bins back from a shard directory in written order."""
    directory = Path(directory)
    sidecar = json.loads((directory / "shards.json").read_text(encoding="utf-8"))
    if sidecar.get("format") != "dwc-shards-v1":
        raise ValueError("unrecognized shard sidecar format")
    for entry in sidecar["shards"]:
        blob = (directory / entry["file"]).read_bytes()
        digest = hashlib.sha256(blob).hexdigest()
        if digest != entry["sha256"]:
            raise ValueError(f"checksum mismatch in {entry['file']}")
        yield from _decode_bins(blob)
