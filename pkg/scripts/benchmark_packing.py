#!/usr/bin/env python3
"""Benchmark best-fit packing against the two baseline packers.

Reports placement throughput for the best-fit packer across several
capacities, plus padding and document-splitting comparisons against
concat-then-slice and greedy whole-document filling on the same inputs.
"""

from __future__ import annotations

import argparse
import random
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from dwc_curator.pack import (
    chunk_tokens,
    concat_then_slice,
    greedy_doc_fill,
    pack_best_fit,
)


def sample_doc_lengths(rng: random.Random, n_docs: int, capacity: int) -> list[int]:
    """Mixed-length corpus: mostly short docs with a long tail."""
    lengths = []
    for _ in range(n_docs):
        if rng.random() < 0.05:
            lengths.append(rng.randint(capacity, capacity * 6))
        else:
            lengths.append(max(1, int(rng.lognormvariate(5.0, 1.0))))
    return lengths


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--docs", type=int, default=50_000)
    parser.add_argument(
        "--capacities", default="512,2048,8192", help="Comma separated."
    )
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = random.Random(args.seed)
    capacities = [int(x) for x in args.capacities.split(",") if x]

    header = (
        f"{'L':>6}  {'chunks':>8}  {'kplace/s':>9}  "
        f"{'bfp pad%':>8}  {'greedy pad%':>11}  {'slice splits':>12}"
    )
    print(header)
    print("-" * len(header))

    for capacity in capacities:
        doc_lengths = sample_doc_lengths(rng, args.docs, capacity)

        chunk_lengths = []
        for length in doc_lengths:
            chunk_lengths.extend(len(c) for c in chunk_tokens(range(length), capacity))

        start = time.perf_counter()
        _, stats = pack_best_fit(chunk_lengths, capacity)
        elapsed = time.perf_counter() - start

        greedy = greedy_doc_fill(doc_lengths, capacity)
        sliced = concat_then_slice(doc_lengths, capacity)

        rate = len(chunk_lengths) / elapsed / 1e3
        print(
            f"{capacity:>6}  {len(chunk_lengths):>8}  {rate:>9.1f}  "
            f"{stats.pad_ratio * 100:>8.3f}  {greedy.pad_ratio * 100:>11.3f}  "
            f"{sliced.split_docs:>12}"
        )
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
