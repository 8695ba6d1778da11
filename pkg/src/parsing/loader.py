# src/parsing/loader.py
"""
One entry point per input kind, all ending in (ParsedDocument, anomalies)
with the bibliography attached.

    .tex (+ optional .bib sidecar)   → markup
    .html / .xml / .nxml             → markup
    directory of page images         → transcribe → merge → Markdown
    directory of page .md files      → merge → Markdown
    .md / .txt                       → Markdown
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from loguru import logger

from src.core.errors import ContractViolation
from src.core.gateway import ModelGateway
from src.core.models import CitationStyle, ExtractionAnomaly, PageTranscript, ParsedDocument
from src.parsing.bibliography import parse_bibliography, with_entries
from src.parsing.document import DEFAULT_BIB_HEADINGS, parse_markdown
from src.parsing.markup import normalize_markup
from src.parsing.merge import merge_with_offsets
from src.parsing.transcribe import list_page_images, load_transcripts, transcribe_page, transcribe_pages
from src.parsing.verifier import audit_anomalies, verify_extraction

MARKUP_SUFFIXES = {".tex", ".html", ".htm", ".xml", ".nxml"}


@dataclass
class LoadedDocument:
    doc: ParsedDocument
    anomalies: List[ExtractionAnomaly] = field(default_factory=list)
    transcripts: List[PageTranscript] = field(default_factory=list)


def _same(a: ExtractionAnomaly, b: ExtractionAnomaly) -> bool:
    return a.kind == b.kind and a.detail == b.detail


async def _from_transcripts(
    transcripts: List[PageTranscript], gateway: ModelGateway, doc_id: str, bib_headings=DEFAULT_BIB_HEADINGS
) -> ParsedDocument:
    text, starts = await merge_with_offsets(transcripts, gateway)
    return parse_markdown(text, doc_id, source_kind="transcript", page_starts=starts, bib_headings=bib_headings)


async def reparse_flagged_pages(
    doc: ParsedDocument,
    anomalies: List[ExtractionAnomaly],
    transcripts: List[PageTranscript],
    images: List[str],
    gateway: ModelGateway,
    seed: int,
) -> tuple:
    """
    Re-transcribe only the pages an anomaly spans (next seed) and keep the
    new reading when that anomaly disappears without adding new ones.
    """
    for anomaly in list(anomalies):
        if anomaly not in anomalies or not anomaly.pages:
            continue
        pages = [p for p in anomaly.pages if 1 <= p <= len(images)]
        if not pages:
            continue
        fresh = {p: await transcribe_page(images[p - 1], p, gateway, seed=seed + 1) for p in pages}
        candidate_pages = [fresh.get(t.page_index, t) for t in transcripts]
        candidate = await _from_transcripts(candidate_pages, gateway, doc.doc_id)
        found = verify_extraction(candidate)
        resolved = not any(_same(anomaly, a) for a in found)
        if resolved and len(found) < len(anomalies):
            logger.bind(stage="dpcm").info("re-parse of pages {} resolved: {}", pages, anomaly.detail)
            doc, anomalies, transcripts = candidate, found, candidate_pages
    return doc, anomalies, transcripts


async def load_document(
    path: str,
    gateway: ModelGateway,
    style: CitationStyle = CitationStyle.NUMERIC,
    doc_id: Optional[str] = None,
    bib_path: Optional[str] = None,
    seed: int = 0,
    audit: bool = True,
    bib_headings=DEFAULT_BIB_HEADINGS,
) -> LoadedDocument:
    source = Path(path)
    if not source.exists():
        raise ContractViolation(f"input {path} does not exist")
    doc_id = doc_id or source.stem
    transcripts: List[PageTranscript] = []

    if source.is_dir():
        images = list_page_images(str(source))
        if images:
            transcripts = await transcribe_pages(images, gateway, seed=seed)
        else:
            transcripts = load_transcripts(str(source))
        if not transcripts:
            raise ContractViolation(f"{path} holds neither page images nor page transcripts")
        doc = await _from_transcripts(transcripts, gateway, doc_id, bib_headings)
        anomalies = verify_extraction(doc)
        if anomalies and images:
            doc, anomalies, transcripts = await reparse_flagged_pages(doc, anomalies, transcripts, images, gateway, seed)
        if anomalies and audit:
            anomalies = anomalies + await audit_anomalies(doc, anomalies, gateway)
    elif source.suffix.lower() in MARKUP_SUFFIXES:
        bib_source = None
        sidecar = Path(bib_path) if bib_path else source.with_suffix(".bib")
        if sidecar.exists():
            bib_source = sidecar.read_text(encoding="utf-8")
        doc = normalize_markup(source.read_text(encoding="utf-8"), style=style, doc_id=doc_id, bib_source=bib_source)
        anomalies = verify_extraction(doc)
    else:
        doc = parse_markdown(source.read_text(encoding="utf-8"), doc_id, source_kind="text", bib_headings=bib_headings)
        anomalies = verify_extraction(doc)

    entries = parse_bibliography(doc, anomalies)
    doc = with_entries(doc, entries)
    for a in anomalies:
        logger.bind(stage="dpcm").warning("{}: {} at blocks {}-{} ({})", doc_id, a.kind.value, a.block_start, a.block_end, a.detail)
    return LoadedDocument(doc=doc, anomalies=anomalies, transcripts=transcripts)
