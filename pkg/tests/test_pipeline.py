import asyncio
import json

from src.core.config import GatewaySettings
from src.core.gateway import ModelGateway
from src.core.models import CitationEdge, CitationStyle, Route, TaxonomyCode, VerdictLabel
from src.services.metadata_service import FixtureMetadataClient
from src.verification.pipeline import CitationVerifier, VerificationConfig
from src.verification.report import bundle_filename, integrity_summary, markdown_digest, write_reports

from conftest import AMBIGUOUS_PAPER, build_doc, CITING_PAPER

SUPPORT_RULE = {"kind": "nli", "premise_contains": "relies entirely on self-attention", "distribution": [0.95, 0.04, 0.01]}
ENTAILS_RULE = {"tag": "icsv/relation", "responses": ['{"label": "ENTAILS", "justification": "same finding"}']}


def _gateway(tmp_path, name="cache"):
    gateway = ModelGateway(GatewaySettings(cache_dir=str(tmp_path / name)))
    stub = gateway.backends["stub"]
    stub.add_rule(SUPPORT_RULE)
    stub.add_rule(ENTAILS_RULE)
    return gateway


def _run(gateway, client, **cfg):
    verifier = CitationVerifier(gateway, client, config=VerificationConfig(**cfg))
    results = asyncio.run(verifier.verify_document(build_doc(CITING_PAPER)))
    return {r.target_key: r for r in results}


def test_full_paper_takes_every_route(tmp_path, client):
    results = _run(_gateway(tmp_path), client)
    assert set(results) == {"ref1", "ref2", "ref3"}

    full_text = results["ref1"]
    assert full_text.verdict.route == Route.ACCESSIBLE
    assert full_text.verdict.label == VerdictLabel.SUPPORTED
    assert full_text.stage_log[0] == "csac: Accessible via surrogate"

    committee = results["ref2"]
    assert committee.verdict.route == Route.INACCESSIBLE
    assert committee.verdict.label == VerdictLabel.SUPPORTED
    assert committee.evidence.committee_evidence is not None
    assert committee.token_usage.total > 0

    ghost = results["ref3"]
    assert ghost.verdict.route == Route.GHOST
    assert ghost.verdict.label == VerdictLabel.MISCITATION
    assert ghost.taxonomy.code == TaxonomyCode.ATTRIBUTION
    assert ghost.token_usage.total == 0
    assert ghost.stage_log[-1].startswith("taxonomy: AttributionTraceability")


def test_runs_are_deterministic(tmp_path, client):
    def digest(results):
        return sorted(
            (k, r.verdict.label, round(r.verdict.confidence, 9), r.taxonomy.code if r.taxonomy else None)
            for k, r in results.items()
        )

    first = _run(_gateway(tmp_path, "a"), client)
    second = _run(_gateway(tmp_path, "b"), client)
    assert digest(first) == digest(second)


def test_forced_accessible_route_without_text_is_recorded_as_error(tmp_path, client):
    results = _run(_gateway(tmp_path), client, route="accessible")
    failed = results["ref2"]
    assert failed.verdict.label == VerdictLabel.UNDECIDABLE
    assert failed.error.startswith("ContractViolation")
    assert results["ref1"].verdict.label == VerdictLabel.SUPPORTED
    assert results["ref3"].verdict.route == Route.GHOST


def test_forced_inaccessible_route_uses_the_committee(tmp_path, client):
    results = _run(_gateway(tmp_path), client, route="inaccessible")
    forced = results["ref1"]
    assert forced.verdict.route == Route.INACCESSIBLE
    # nobody in the fixture index cites the attention paper
    assert forced.verdict.label == VerdictLabel.UNDECIDABLE
    assert forced.error is None


def test_unknown_key_is_a_ghost(tmp_path):
    doc = build_doc(CITING_PAPER)
    edge = CitationEdge(occurrence_id="paper#s0-0-0", sentence_index=0, surface_text="[9]",
                        style=CitationStyle.NUMERIC, target_keys=["ref9"])
    verifier = CitationVerifier(_gateway(tmp_path), FixtureMetadataClient(records=[]))
    [result] = asyncio.run(verifier.verify_edges([edge], doc))
    assert result.verdict.route == Route.GHOST
    assert "unknown key" in result.evidence.notes


def test_accessibility_is_looked_up_once_per_key(tmp_path, client):
    doc = build_doc(CITING_PAPER)
    edges = [
        CitationEdge(occurrence_id=f"paper#s0-0-{i}", sentence_index=0, surface_text="[1]",
                     style=CitationStyle.NUMERIC, target_keys=["ref1"])
        for i in range(3)
    ]
    calls = []
    original = client.query_by_metadata

    def counting(*args, **kwargs):
        calls.append(args)
        return original(*args, **kwargs)

    client.query_by_metadata = counting
    verifier = CitationVerifier(_gateway(tmp_path), client)
    results = asyncio.run(verifier.verify_edges(edges, doc))
    assert len(results) == 3
    assert len(calls) == 1


def test_reports(tmp_path, client):
    results = list(_run(_gateway(tmp_path), client).values())
    summary = write_reports(str(tmp_path / "out"), "paper", results)

    assert summary["verdicts"] == {"Supported": 2, "Miscitation": 1, "Undecidable": 0}
    assert summary["taxonomy"]["AttributionTraceability"] == 1
    assert summary["routes"] == {"Accessible": 1, "Ghost": 1, "Inaccessible": 1}
    assert summary["errors"] == 0

    root = tmp_path / "out" / "paper"
    bundles = sorted((root / "bundles").glob("*.json"))
    assert len(bundles) == 3
    assert json.loads((root / "summary.json").read_text()) == summary
    digest = (root / "summary.md").read_text()
    assert "Attribution & Traceability Error" in digest
    assert "## Flagged citations" in digest


def test_summary_of_nothing():
    summary = integrity_summary("empty", [])
    assert summary["citations"] == 0
    assert summary["mean_confidence"] == 0.0
    assert "## Flagged citations" not in markdown_digest(summary, [])


def test_ambiguous_author_year_is_undecidable_not_ghost(tmp_path, client):
    verifier = CitationVerifier(_gateway(tmp_path), client)
    [result] = asyncio.run(verifier.verify_document(build_doc(AMBIGUOUS_PAPER)))
    assert result.verdict.label == VerdictLabel.UNDECIDABLE
    assert result.verdict.route is None
    assert result.taxonomy is None
    assert result.error is None
    assert "ambiguous" in result.stage_log[0]
    assert result.to_bundle_json()["route"] is None

    summary = integrity_summary("paper", [result])
    assert summary["routes"] == {}
    assert summary["unrouted"] == 1


def test_inconclusive_lookups_stay_out_of_route_counts(tmp_path, records):
    client = FixtureMetadataClient(records=records, simulate_transport_error=True)
    results = list(_run(_gateway(tmp_path), client).values())
    assert len(results) == 3
    assert all(r.error.startswith("InconclusiveError") for r in results)
    assert all(r.verdict.route is None for r in results)

    summary = integrity_summary("paper", results)
    assert summary["errors"] == 3
    assert summary["routes"] == {}
    assert summary["verdicts"]["Undecidable"] == 3


def test_failed_task_keeps_the_route_it_reached(tmp_path, client, monkeypatch):
    async def broken(*args, **kwargs):
        raise RuntimeError("committee exploded")

    monkeypatch.setattr("src.verification.pipeline.verify_inaccessible", broken)
    results = _run(_gateway(tmp_path), client)
    assert results["ref2"].error == "RuntimeError: committee exploded"
    assert results["ref2"].verdict.route == Route.INACCESSIBLE
    assert integrity_summary("paper", list(results.values()))["routes"] == {"Accessible": 1, "Ghost": 1}


def test_bundle_filenames_never_collide():
    ids = ["a:b", "a_b", "a/b", "a#b", "paper#s0-0-0:ref1"]
    names = [bundle_filename(i) for i in ids]
    assert len(set(names)) == len(ids)
    assert all(n.endswith(".json") and "/" not in n for n in names)
    assert names[-1].startswith("paper_s0-0-0_ref1-")
