"""Deterministic curation pipeline for context-annotated pre-training corpora.

The package turns raw text sources into packed, stage-mixed training shards:

    ingest -> clean -> filter -> annotate -> dedup -> vocab/encode -> pack -> mix

Every stage is a pure, seedable transformation over :class:`~dwc_curator.model.Document`
streams, so a run is reproducible byte-for-byte from its config and inputs.
"""

__version__ = "0.1.0"
