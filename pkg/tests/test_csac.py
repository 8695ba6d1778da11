import pytest

from src.core.errors import InconclusiveError
from src.core.models import MetadataSnapshot, Route
from src.parsing.bibliography import parse_reference_string
from src.services.metadata_service import FixtureMetadataClient, normalize_doi
from src.verification.csac import (
    author_overlap,
    classify_accessibility,
    is_parseable,
    match_surrogate,
    reference_overlap,
    title_similarity,
)

from conftest import ATTENTION_TEXT


def test_title_similarity_ignores_case_and_version():
    assert title_similarity("Attention Is All You Need (v2)", "attention is all you need") == 1.0
    assert title_similarity("", "anything") == 0.0
    assert title_similarity("Attention is all you need", "Gardening for beginners") < 0.5


def test_author_overlap_uses_the_shorter_list(citing_doc):
    entry = citing_doc.bibliography[0]
    assert author_overlap(["Ashish Vaswani", "Noam Shazeer", "Niki Parmar"], entry) == 1.0
    assert author_overlap(["Vaswani, A."], entry) == 1.0
    assert author_overlap(["John Doe"], entry) == 0.0
    assert author_overlap([], entry) == 0.0


def test_reference_overlap():
    assert reference_overlap(["a", "b"], ["b", "c"]) == pytest.approx(1 / 3)
    assert reference_overlap([], ["a"]) is None


def test_surrogate_needs_title_and_authors(citing_doc):
    entry = citing_doc.bibliography[0]
    ok, report = match_surrogate(MetadataSnapshot(title="Attention Is All You Need", authors=["A. Vaswani"]), entry)
    assert ok and report.title_similarity == 1.0
    ok, report = match_surrogate(MetadataSnapshot(title="Attention Is All You Need", authors=["John Doe"]), entry)
    assert not ok and report.author_overlap == 0.0
    ok, _ = match_surrogate(MetadataSnapshot(title="Attention for sequence models", authors=["A. Vaswani"]), entry)
    assert not ok


def test_open_surrogate_is_accessible(citing_doc, client):
    verdict = classify_accessibility(citing_doc.bibliography[0], client)
    assert verdict.route == Route.ACCESSIBLE
    assert verdict.via == "surrogate"
    assert verdict.full_text == ATTENTION_TEXT
    assert verdict.equivalence.accepted


def test_closed_record_is_metadata_only(citing_doc, client):
    verdict = classify_accessibility(citing_doc.bibliography[1], client)
    assert verdict.route == Route.INACCESSIBLE
    assert verdict.full_text is None
    assert verdict.snapshot.record_id == "W-rag"
    assert verdict.snapshot.abstract


def test_unknown_reference_is_ghost(citing_doc, client):
    verdict = classify_accessibility(citing_doc.bibliography[2], client)
    assert verdict.route == Route.GHOST
    assert verdict.via == "none"


def test_same_title_by_other_authors_is_not_accepted(citing_doc):
    impostor = FixtureMetadataClient(records=[{
        "record_id": "W-x", "title": "Attention Is All You Need", "authors": ["John Doe"],
        "open_access": True, "full_text": ATTENTION_TEXT,
    }])
    assert classify_accessibility(citing_doc.bibliography[0], impostor).route == Route.GHOST


def test_doi_route_comes_first():
    entry = parse_reference_string(
        "A. Vaswani, N. Shazeer. Attention is all you need. NeurIPS, 2017. doi:10.5555/attn", key="ref1"
    )
    client = FixtureMetadataClient(records=[
        {"record_id": "W-doi", "doi": "https://doi.org/10.5555/ATTN", "title": "Attention Is All You Need",
         "open_access": True, "full_text": ATTENTION_TEXT},
    ])
    verdict = classify_accessibility(entry, client)
    assert verdict.route == Route.ACCESSIBLE
    assert verdict.via == "doi"


def test_doi_record_without_text_is_metadata_only():
    entry = parse_reference_string("Q. Nobody. Something else entirely. Venue, 2001. doi:10.5555/closed", key="k")
    client = FixtureMetadataClient(records=[{"record_id": "W-c", "doi": "10.5555/closed", "title": "Closed paper"}])
    verdict = classify_accessibility(entry, client)
    assert verdict.route == Route.INACCESSIBLE
    assert verdict.via == "doi"


def test_transport_failure_is_inconclusive_not_ghost(citing_doc, records):
    down = FixtureMetadataClient(records=records, simulate_transport_error=True)
    with pytest.raises(InconclusiveError) as err:
        classify_accessibility(citing_doc.bibliography[2], down)
    assert err.value.key == "ref3"


def test_unparseable_text_is_not_accessible():
    assert not is_parseable("")
    assert not is_parseable("# Only a heading")
    assert is_parseable(ATTENTION_TEXT)


def test_normalize_doi():
    assert normalize_doi("https://doi.org/10.1/ABC") == "10.1/abc"
    assert normalize_doi("doi: 10.1/x") == "10.1/x"
    assert normalize_doi(None) is None
