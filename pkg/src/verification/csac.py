# src/verification/csac.py
"""
Accessibility routing for one bibliography entry.

    DOI record with retrievable full text       → Accessible
    open-access surrogate passing equivalence   → Accessible
    any convincing record without text          → Inaccessible (metadata only)
    nothing plausible anywhere                  → Ghost

Transport failures surface as InconclusiveError, never as Ghost.
"""

from typing import List, Optional, Tuple

from loguru import logger
from rapidfuzz import fuzz

from src.core.errors import InconclusiveError, TransportError
from src.core.models import AccessibilityVerdict, BibEntry, MatchReport, MetadataSnapshot, Route
from src.core.text import normalize_family_name, normalize_title
from src.parsing.document import parse_markdown
from src.services.metadata_service import MetadataClient

TITLE_THRESHOLD = 0.9
AUTHOR_THRESHOLD = 0.5


def _family(name: str) -> str:
    name = name.strip()
    if "," in name:
        name = name.split(",", 1)[0]
    else:
        name = name.split()[-1] if name.split() else ""
    return normalize_family_name(name)


def title_similarity(a: str, b: str) -> float:
    na, nb = normalize_title(a or ""), normalize_title(b or "")
    if not na or not nb:
        return 0.0
    return fuzz.ratio(na, nb) / 100.0


def author_overlap(candidate: List[str], entry: BibEntry) -> float:
    """Shared family names over the shorter list; 0 when either side is empty."""
    cand = {_family(n) for n in candidate if n.strip()}
    cited = {normalize_family_name(f) for f in entry.family_names if f}
    cand.discard("")
    cited.discard("")
    if not cand or not cited:
        return 0.0
    return len(cand & cited) / min(len(cand), len(cited))


def reference_overlap(a: List[str], b: List[str]) -> Optional[float]:
    if not a or not b:
        return None
    sa, sb = set(a), set(b)
    return len(sa & sb) / len(sa | sb)


def match_surrogate(
    candidate: MetadataSnapshot,
    entry: BibEntry,
    entry_references: Optional[List[str]] = None,
) -> Tuple[bool, MatchReport]:
    title = title_similarity(candidate.title or "", entry.title)
    authors = author_overlap(candidate.authors, entry)
    report = MatchReport(
        title_similarity=round(title, 6),
        author_overlap=round(authors, 6),
        abstract_present=bool(candidate.abstract),
        reference_overlap=reference_overlap(candidate.reference_signatures, entry_references or []),
        accepted=title >= TITLE_THRESHOLD and authors >= AUTHOR_THRESHOLD,
    )
    return report.accepted, report


def is_parseable(text: Optional[str]) -> bool:
    if not text or not text.strip():
        return False
    return bool(parse_markdown(text, "parseability-check").paragraphs())


def _accessible(client: MetadataClient, snapshot: MetadataSnapshot) -> Optional[str]:
    if not (snapshot.open_access or snapshot.full_text_ref):
        return None
    text = client.fetch_full_text(snapshot)
    return text if is_parseable(text) else None


def classify_accessibility(entry: BibEntry, client: MetadataClient) -> AccessibilityVerdict:
    """Blocking; run it through the gateway's worker threads."""
    log = logger.bind(stage="csac", key=entry.key)
    try:
        by_doi = client.query_by_doi(entry.doi) if entry.doi else None
        if by_doi is not None:
            text = _accessible(client, by_doi)
            if text:
                return AccessibilityVerdict(route=Route.ACCESSIBLE, snapshot=by_doi, full_text=text, via="doi")

        best: Optional[Tuple[MetadataSnapshot, MatchReport]] = None
        if entry.title:
            authors = [a.family for a in entry.authors]
            for candidate in client.query_by_metadata(entry.title, authors, entry.year):
                accepted, report = match_surrogate(candidate, entry)
                if not accepted:
                    log.debug("surrogate {!r} rejected: {}", candidate.title, report)
                    continue
                text = _accessible(client, candidate)
                if text:
                    return AccessibilityVerdict(
                        route=Route.ACCESSIBLE, snapshot=candidate, full_text=text,
                        equivalence=report, via="surrogate",
                    )
                if best is None:
                    best = (candidate, report)
    except TransportError as e:
        raise InconclusiveError(entry.key, str(e)) from e

    if by_doi is not None:
        return AccessibilityVerdict(route=Route.INACCESSIBLE, snapshot=by_doi, via="doi")
    if best is not None:
        return AccessibilityVerdict(route=Route.INACCESSIBLE, snapshot=best[0], equivalence=best[1], via="surrogate")
    log.info("no record found; Ghost")
    return AccessibilityVerdict(route=Route.GHOST, via="none")
