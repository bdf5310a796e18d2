#!/usr/bin/env python3
"""Generate a synthetic corpus and run the full pipeline over it.

Writes the corpus, a pipeline configuration, and all artifacts under a
working directory, then prints the per-phase report and a short summary
of what landed on disk.  Useful as a quick end-to-end check and as a
worked example of the configuration format.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from dwc_curator.pipeline import config_from_dict, run_pipeline
from dwc_curator.synth import SynthConfig, write_corpus


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--work-dir", default="demo_out", help="Working directory.")
    parser.add_argument("--docs", type=int, default=2000, help="Synthetic corpus size.")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument(
        "--lengths", default="256,1024", help="Comma separated pack lengths."
    )
    args = parser.parse_args()

    work = Path(args.work_dir)
    work.mkdir(parents=True, exist_ok=True)

    corpus = work / "corpus.jsonl.gz"
    count, raw_bytes = write_corpus(
        corpus, SynthConfig(n_docs=args.docs, seed=args.seed)
    )
    print(f"corpus: {count} docs, {raw_bytes / 1e6:.1f} MB raw -> {corpus}")

    lengths = [int(x) for x in args.lengths.split(",") if x]
    raw_config = {
        "inputs": [{"path": str(corpus), "format": "jsonl_gz", "text_field": "text"}],
        "out_dir": str(work / "out"),
        "seed": args.seed,
        "workers": args.workers,
        "clean": {"strip_emoji": True},
        "filter": {"min_quality": "low"},
        "annotate": {"on_invalid": "flag"},
        "dedup": {"near": True},
        "lm": {"order": 2, "alpha": 1.0, "sample_docs": 512},
        "vocab": {"mode": "byte", "num_merges": 256, "sample_docs": 512},
        "pack": {"lengths": lengths},
        "mix": {},
    }
    config_path = work / "pipeline_config.json"
    config_path.write_text(json.dumps(raw_config, indent=2, sort_keys=True))
    print(f"config: {config_path}")

    config = config_from_dict(raw_config, base_dir=Path.cwd())
    report = run_pipeline(config)

    print()
    for phase in report.phases:
        print(
            f"{phase.name:<8} in={phase.docs_in:<6} out={phase.docs_out:<6} "
            f"dropped={phase.dropped:<5} {phase.seconds:.2f}s"
        )

    out = Path(config.out_dir)
    print()
    print("artifacts:")
    for pattern in (
        "report.json",
        "vocab/vocab.txt",
        "vocab/merges.txt",
        "tokens/*/tokens.bin",
        "shards/*/*/shards.json",
        "mix/*.jsonl",
    ):
        for path in sorted(out.glob(pattern)):
            size = path.stat().st_size
            print(f"  {path.relative_to(out)}  ({size} bytes)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
