# src/verification/icsv/committee.py
"""
Evidence Committee assembly: open-access citing papers that verifiably
mention the target in their text, each reduced to the atomic claims it
attributes to the target.
"""

import asyncio
from typing import List, Optional, Tuple

from loguru import logger

from src.core.errors import InconclusiveError, TransportError, UnderspecifiedClaim
from src.core.gateway import ModelGateway
from src.core.models import BibEntry, MetadataSnapshot, ParsedDocument, VenueType, WitnessPaper
from src.core.text import normalize_title
from src.parsing.align import align_citations
from src.parsing.bibliography import parse_bibliography
from src.parsing.citations import detect_citations
from src.parsing.document import parse_markdown
from src.services.metadata_service import MetadataClient, normalize_doi
from src.verification.csac import TITLE_THRESHOLD, title_similarity
from src.verification.icsv.claims import collapse_near_duplicates, extract_atomic_claim


def paper_id_of(snapshot: MetadataSnapshot) -> str:
    return snapshot.record_id or normalize_doi(snapshot.doi) or normalize_title(snapshot.title or "") or "unknown"


def dedupe_works(works: List[MetadataSnapshot]) -> List[MetadataSnapshot]:
    seen = set()
    out = []
    for w in works:
        keys = {k for k in (normalize_doi(w.doi), normalize_title(w.title or "")) if k}
        if keys & seen:
            continue
        seen |= keys
        out.append(w)
    return out


def find_target_entry(entries: List[BibEntry], target: MetadataSnapshot) -> Optional[BibEntry]:
    """DOI match first, then a high-similarity title match."""
    doi = normalize_doi(target.doi)
    if doi:
        for e in entries:
            if normalize_doi(e.doi) == doi:
                return e
    best, best_score = None, 0.0
    for e in entries:
        score = title_similarity(e.title or e.raw, target.title or "")
        if score > best_score:
            best, best_score = e, score
    return best if best_score >= TITLE_THRESHOLD else None


async def _witness(
    work: MetadataSnapshot,
    target: MetadataSnapshot,
    client: MetadataClient,
    gateway: ModelGateway,
) -> Optional[WitnessPaper]:
    pid = paper_id_of(work)
    log = logger.bind(stage="icsv", witness=pid)
    if not work.open_access:
        log.debug("not open access; skipped")
        return None
    text = await gateway.run_blocking(client.fetch_full_text, work)
    if not text:
        return None
    doc: ParsedDocument = parse_markdown(text, doc_id=pid)
    if not doc.paragraphs():
        log.debug("full text not parseable; skipped")
        return None

    entries = parse_bibliography(doc)
    entry = find_target_entry(entries, target)
    if entry is None:
        log.debug("bibliography lacks the target; false witness")
        return None
    doc = doc.model_copy(update={"bibliography": entries})
    _, drafts = detect_citations(doc)
    edges = await align_citations(drafts, entries, gateway, doc=doc)
    mentions = [e for e in edges if entry.key in e.target_keys]
    if not mentions:
        log.debug("target listed but never cited in text; false witness")
        return None

    claims = []
    for k, edge in enumerate(mentions, start=1):
        try:
            claims.append(await extract_atomic_claim(doc, edge, gateway, claim_id=f"{pid}#{k}", source_id=pid))
        except UnderspecifiedClaim as e:
            log.debug("mention {} underspecified: {}", k, e)
    claims = await collapse_near_duplicates(claims, gateway)
    if not claims:
        return None
    return WitnessPaper(
        paper_id=pid,
        metadata=work,
        venue_type=work.venue_type or VenueType.JOURNAL,
        citation_count=work.citation_count,
        field_id=work.field_id or "unknown",
        year=work.year,
        claims=claims,
        mention_count=len(mentions),
    )


async def assemble_committee(
    target: MetadataSnapshot, client: MetadataClient, gateway: ModelGateway
) -> Tuple[List[WitnessPaper], int]:
    """(admitted witnesses, number of citing works inspected)."""
    key = paper_id_of(target)
    try:
        works = dedupe_works(await gateway.run_blocking(client.citing_works, target))
        results = await asyncio.gather(*(_witness(w, target, client, gateway) for w in works))
    except TransportError as e:
        raise InconclusiveError(key, str(e)) from e
    witnesses = [w for w in results if w is not None]
    logger.bind(stage="icsv").info("committee for {}: {} of {} citing works admitted", key, len(witnesses), len(works))
    return witnesses, len(works)
