# src/verification/icsv/verifier.py
"""
Verification of citations whose target has metadata but no readable full text.

    citing claim → committee → clusters → evidence → γ → relations → v_final → calibration
"""

from typing import Dict, List, Optional

from loguru import logger

from src.core.errors import UnderspecifiedClaim
from src.core.gateway import ModelGateway
from src.core.models import (
    AbstentionTrigger,
    CitationEdge,
    CommitteeArtifacts,
    CommitteeVerdict,
    EvidenceBundle,
    MetadataSnapshot,
    ParsedDocument,
    Route,
    VerificationResult,
    WitnessPaper,
    WitnessSummary,
)
from src.services.metadata_service import MetadataClient
from src.verification.acsv import citing_sentence_of
from src.verification.icsv.claims import extract_atomic_claim
from src.verification.icsv.clustering import cluster_claims, distill_all
from src.verification.icsv.committee import assemble_committee
from src.verification.icsv.consensus import (
    K_MIN,
    abstained,
    aggregate_consensus,
    assign_credibility,
    calibrate_confidence,
    classify_all,
    dominant_voters,
)
from src.verification.icsv.influence import Influence, ReferenceStats, influence_table


def _summaries(witnesses: List[WitnessPaper], influences: Dict[str, Influence]) -> List[WitnessSummary]:
    return [
        WitnessSummary(
            paper_id=w.paper_id,
            title=w.metadata.title or "",
            influence=influences[w.paper_id].influence,
            c_norm=influences[w.paper_id].c_norm,
            v_norm=influences[w.paper_id].v_norm,
            fallback=influences[w.paper_id].fallback,
            claim_count=len(w.claims),
        )
        for w in witnesses
    ]


def _result(
    edge: CitationEdge,
    citing_doc: ParsedDocument,
    target: MetadataSnapshot,
    target_key: Optional[str],
    committee: CommitteeVerdict,
    artifacts: CommitteeArtifacts,
    stage_log: List[str],
    notes: str = "",
) -> VerificationResult:
    artifacts = artifacts.model_copy(update={"committee_verdict": committee})
    bundle = EvidenceBundle(
        route=Route.INACCESSIBLE,
        citing_context=citing_sentence_of(edge, citing_doc),
        committee_evidence=artifacts,
        metadata=target,
        notes=notes,
    )
    return VerificationResult(
        occurrence_id=edge.occurrence_id,
        citing_doc_id=citing_doc.doc_id,
        target_key=target_key or (edge.target_keys[0] if edge.target_keys else None),
        verdict=committee.verdict,
        evidence=bundle,
        stage_log=stage_log,
    )


async def verify_inaccessible(
    edge: CitationEdge,
    target: MetadataSnapshot,
    citing_doc: ParsedDocument,
    client: MetadataClient,
    gateway: ModelGateway,
    stats: Optional[ReferenceStats] = None,
    k_min: int = K_MIN,
    target_key: Optional[str] = None,
) -> VerificationResult:
    stats = stats or ReferenceStats()
    log = logger.bind(stage="icsv", occurrence=edge.occurrence_id)
    stage_log: List[str] = []

    try:
        claim = await extract_atomic_claim(citing_doc, edge, gateway)
    except UnderspecifiedClaim as e:
        log.info("citing claim underspecified at radius {}; Undecidable", e.radius)
        stage_log.append(f"claim: underspecified at radius {e.radius}")
        return _result(
            edge, citing_doc, target, target_key,
            abstained(0, AbstentionTrigger.UNDERSPECIFIED_CLAIM), CommitteeArtifacts(), stage_log,
            notes="citing claim could not be made self-contained",
        )
    stage_log.append(f"claim (r={claim.window_radius_used}): {claim.text}")
    log.debug("citing claim: {}", claim.text)

    witnesses, inspected = await assemble_committee(target, client, gateway)
    size = len(witnesses)
    stage_log.append(f"committee: {size} witnesses of {inspected} citing works")
    if not witnesses:
        log.info("empty committee; Undecidable")
        artifacts = CommitteeArtifacts(citing_claim=claim)
        return _result(
            edge, citing_doc, target, target_key,
            abstained(0, AbstentionTrigger.INSUFFICIENT_WITNESSES), artifacts, stage_log,
            notes="no citing paper passed the witness check",
        )

    influences = influence_table(witnesses, stats)
    for w in witnesses:
        inf = influences[w.paper_id]
        log.debug("witness {} I={:.3f} (C={:.3f}, V={:.3f}{})", w.paper_id, inf.influence, inf.c_norm, inf.v_norm,
                  ", pool fallback" if inf.fallback else "")
    claims = [c for w in witnesses for c in w.claims]

    clusters, degraded = await cluster_claims(claims, target, gateway)
    clusters = await distill_all(clusters, claims, target, gateway)
    clusters = assign_credibility(clusters, {pid: inf.influence for pid, inf in influences.items()})
    stage_log.append(f"clusters: {len(clusters)}{' (degraded)' if degraded else ''}")
    for c in clusters:
        log.debug("cluster {} γ={:.3f} papers={} evidence={!r}", c.cluster_id, c.gamma, c.source_papers, c.evidence_statement)

    relations = await classify_all(claim, clusters, gateway)
    for r in relations:
        log.debug("relation {} {} (a={:.2f}, runs={})", r.cluster_id, r.label.value, r.stability, r.runs)
    v_final, provisional = aggregate_consensus(clusters, relations)
    committee = calibrate_confidence(clusters, relations, v_final, size, k_min=k_min)
    stage_log.append(
        f"consensus: v_final={v_final:.3f} ({provisional.value}) n_eff={committee.n_eff:.2f}"
        f" H={committee.entropy:.3f} a_bar={committee.a_bar:.2f} conf={committee.conf:.3f}"
    )
    if committee.abstention_triggers:
        stage_log.append("abstain: " + ", ".join(t.value for t in committee.abstention_triggers))
    stage_log.append(f"dominant aspect voters: {dominant_voters(clusters)}")
    log.info("{} (conf={:.3f}, committee={})", committee.verdict.label.value, committee.conf, size)

    artifacts = CommitteeArtifacts(
        citing_claim=claim,
        committee_size=size,
        witnesses=_summaries(witnesses, influences),
        claims=claims,
        clusters=clusters,
        relations=relations,
        degraded_clustering=degraded,
        influence_fallback=any(inf.fallback for inf in influences.values()),
    )
    return _result(edge, citing_doc, target, target_key, committee, artifacts, stage_log)
