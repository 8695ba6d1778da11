# src/verification/pipeline.py
"""
End-to-end verification of one citing paper.

Every (citation occurrence, cited key) pair becomes one task:

    CSAC route ─┬─ Accessible    → full-text funnel
                ├─ Inaccessible  → Evidence Committee
                └─ Ghost         → Miscitation, no model calls
    Miscitation → taxonomy code

An author-year citation tied between real entries is not a Ghost: it stays
Undecidable with no route. Failures are captured per task and recorded in
that task's result, with the route reached so far (None if CSAC never finished).
"""

import asyncio
from typing import Dict, List, Literal, Optional, Tuple

from loguru import logger
from pydantic import BaseModel, Field

from src.core.errors import ContractViolation
from src.core.gateway import ModelGateway
from src.core.models import (
    AccessibilityVerdict,
    BibEntry,
    CitationEdge,
    EvidenceBundle,
    ParsedDocument,
    Route,
    Verdict,
    VerdictLabel,
    VerificationResult,
)
from src.parsing.align import align_citations
from src.parsing.citations import detect_citations
from src.parsing.document import parse_markdown
from src.services.metadata_service import MetadataClient
from src.verification.acsv import FunnelConfig, citing_sentence_of, verify_accessible
from src.verification.csac import classify_accessibility
from src.verification.icsv.consensus import K_MIN
from src.verification.icsv.influence import ReferenceStats
from src.verification.icsv.verifier import verify_inaccessible
from src.verification.taxonomy import LabelerConfig, assign_error_code

RouteMode = Literal["auto", "accessible", "inaccessible"]


class VerificationConfig(BaseModel):
    route: RouteMode = "auto"
    seed: int = 0
    funnel: FunnelConfig = Field(default_factory=FunnelConfig)
    labeler: LabelerConfig = Field(default_factory=LabelerConfig)
    k_min: int = Field(default=K_MIN, ge=1)


class CitationVerifier:
    def __init__(
        self,
        gateway: ModelGateway,
        client: MetadataClient,
        stats: Optional[ReferenceStats] = None,
        config: Optional[VerificationConfig] = None,
    ):
        self.gateway = gateway
        self.client = client
        self.stats = stats or ReferenceStats()
        self.config = config or VerificationConfig()
        self._routes: Dict[str, "asyncio.Future[AccessibilityVerdict]"] = {}
        self._cited_docs: Dict[str, ParsedDocument] = {}

    # ---------------------------------------------------------
    # shared per-key work
    # ---------------------------------------------------------

    async def accessibility(self, entry: BibEntry) -> AccessibilityVerdict:
        """One CSAC lookup per bibliography key, shared by every occurrence citing it."""
        task = self._routes.get(entry.key)
        if task is None:
            task = asyncio.ensure_future(self.gateway.run_blocking(classify_accessibility, entry, self.client))
            self._routes[entry.key] = task
        return await task

    def cited_document(self, key: str, verdict: AccessibilityVerdict) -> ParsedDocument:
        doc = self._cited_docs.get(key)
        if doc is None:
            doc = parse_markdown(verdict.full_text or "", doc_id=f"cited:{key}")
            self._cited_docs[key] = doc
        return doc

    # ---------------------------------------------------------
    # per-task
    # ---------------------------------------------------------

    def _ghost(self, edge: CitationEdge, citing_doc: ParsedDocument, key: Optional[str], why: str) -> VerificationResult:
        return VerificationResult(
            occurrence_id=edge.occurrence_id,
            citing_doc_id=citing_doc.doc_id,
            target_key=key,
            verdict=Verdict(label=VerdictLabel.MISCITATION, confidence=1.0, route=Route.GHOST),
            evidence=EvidenceBundle(route=Route.GHOST, citing_context=citing_sentence_of(edge, citing_doc), notes=why),
            stage_log=[f"csac: Ghost ({why})"],
        )

    def _unrouted(self, edge: CitationEdge, citing_doc: ParsedDocument, why: str) -> VerificationResult:
        return VerificationResult(
            occurrence_id=edge.occurrence_id,
            citing_doc_id=citing_doc.doc_id,
            verdict=Verdict(label=VerdictLabel.UNDECIDABLE, confidence=0.0),
            stage_log=[f"align: {why}"],
        )

    def _forced(self, verdict: AccessibilityVerdict) -> Route:
        mode = self.config.route
        if verdict.route == Route.GHOST or mode == "auto":
            return verdict.route
        if mode == "accessible":
            if not verdict.full_text:
                raise ContractViolation("route forced to accessible but no full text was retrieved")
            return Route.ACCESSIBLE
        return Route.INACCESSIBLE

    async def _verify_pair(
        self, edge: CitationEdge, key: Optional[str], citing_doc: ParsedDocument
    ) -> VerificationResult:
        if key is None and not edge.unresolved:
            # tied between real entries; the citation may still be sound
            return self._unrouted(edge, citing_doc, "ambiguous between bibliography entries, not verified")
        entry = citing_doc.entry(key) if key else None
        if entry is None:
            why = "citation not aligned to any bibliography entry" if key is None else f"unknown key {key!r}"
            result = self._ghost(edge, citing_doc, key, why)
        else:
            verdict = await self.accessibility(entry)
            route = self._forced(verdict)
            if route == Route.GHOST:
                result = self._ghost(edge, citing_doc, key, "no record matches the reference metadata")
            elif route == Route.ACCESSIBLE:
                result = await verify_accessible(
                    edge, self.cited_document(key, verdict), citing_doc, self.gateway,
                    config=self.config.funnel, seed=self.config.seed, target_key=key,
                )
            else:
                result = await verify_inaccessible(
                    edge, verdict.snapshot, citing_doc, self.client, self.gateway, self.stats,
                    k_min=self.config.k_min, target_key=key,
                )
            result = result.model_copy(update={"stage_log": [f"csac: {verdict.route.value} via {verdict.via}"] + result.stage_log})

        if result.verdict.label == VerdictLabel.MISCITATION:
            access = AccessibilityVerdict(route=Route.GHOST) if entry is None else await self.accessibility(entry)
            decision = await assign_error_code(
                result.evidence, access, self.gateway, config=self.config.labeler, seed=self.config.seed,
            )
            result = result.model_copy(update={
                "taxonomy": decision,
                "stage_log": result.stage_log + [f"taxonomy: {decision.code.value} ({decision.confidence:.2f})"],
            })
        return result

    def _reached(self, key: Optional[str]) -> Optional[Route]:
        """The non-Ghost route a failed task had reached; None when its CSAC lookup never finished."""
        task = self._routes.get(key) if key else None
        if task is None or not task.done() or task.cancelled() or task.exception() is not None:
            return None
        try:
            route = self._forced(task.result())
        except ContractViolation:
            return None
        return None if route == Route.GHOST else route

    async def verify_task(self, edge: CitationEdge, key: Optional[str], citing_doc: ParsedDocument) -> VerificationResult:
        occurrence = edge.occurrence_id if key is None or len(edge.target_keys) <= 1 else f"{edge.occurrence_id}:{key}"
        with self.gateway.scope(occurrence) as meter:
            try:
                result = await self._verify_pair(edge, key, citing_doc)
            except Exception as e:  # noqa: BLE001 - recorded in the bundle, never aborts the run
                logger.bind(stage="pipeline", occurrence=occurrence).exception("verification failed")
                result = VerificationResult(
                    occurrence_id=edge.occurrence_id,
                    citing_doc_id=citing_doc.doc_id,
                    target_key=key,
                    verdict=Verdict(label=VerdictLabel.UNDECIDABLE, confidence=0.0, route=self._reached(key)),
                    stage_log=[f"error: {type(e).__name__}: {e}"],
                    error=f"{type(e).__name__}: {e}",
                )
            return result.model_copy(update={"occurrence_id": occurrence, "token_usage": meter.usage()})

    async def verify_edges(self, edges: List[CitationEdge], citing_doc: ParsedDocument) -> List[VerificationResult]:
        pairs: List[Tuple[CitationEdge, Optional[str]]] = []
        for edge in edges:
            if not edge.target_keys:
                pairs.append((edge, None))
            pairs.extend((edge, k) for k in edge.target_keys)
        logger.bind(stage="pipeline").info("{}: verifying {} citation pairs", citing_doc.doc_id, len(pairs))

        async def run(pair: Tuple[CitationEdge, Optional[str]]) -> VerificationResult:
            # a fresh task per pair keeps scope meters apart
            return await self.verify_task(pair[0], pair[1], citing_doc)

        return list(await asyncio.gather(*(asyncio.ensure_future(run(p)) for p in pairs)))

    async def verify_document(self, citing_doc: ParsedDocument) -> List[VerificationResult]:
        _, drafts = detect_citations(citing_doc)
        edges = await align_citations(drafts, citing_doc.bibliography, self.gateway, doc=citing_doc)
        return await self.verify_edges(edges, citing_doc)
