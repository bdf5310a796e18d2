"""Shared fixtures for the test suite."""

from __future__ import annotations

import pytest

from dwc_curator.model import Document, Provenance


def make_doc(doc_id: str, text: str, url: str | None = None, **kwargs) -> Document:
    return Document(
        id=doc_id,
        text=text,
        provenance=Provenance(source_path="test.jsonl", record_index=0),
        url=url,
        **kwargs,
    )


@pytest.fixture
def doc_factory():
    return make_doc
