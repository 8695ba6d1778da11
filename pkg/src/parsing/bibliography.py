import re
from typing import Dict, List, Optional, Tuple

import bibtexparser
from bibtexparser.bparser import BibTexParser
from bibtexparser.customization import convert_to_unicode
from loguru import logger

from src.core.models import AnomalyKind, Author, BibEntry, BlockKind, ExtractionAnomaly, ParsedDocument
from src.core.text import collapse_ws, title_tokens

DOI = re.compile(r"\b(10\.\d{4,9}/[^\s,;\"<>]+)", re.I)
ARXIV = re.compile(r"(?:arxiv:\s*|arxiv\.org/abs/)(\d{4}\.\d{4,5}(?:v\d+)?|[a-z\-]+/\d{7})", re.I)
PAREN_YEAR = re.compile(r"\((\d{4})[a-z]?\)")
BARE_YEAR = re.compile(r"\b((?:1[89]|20)\d{2})[a-z]?\b")
INITIALS = re.compile(r"^(?:[A-Z]\.?\s*-?\s*)+$")
# a segment boundary is a period after a word of two or more letters (not an initial)
_SEGMENT = re.compile(r"(?<=[a-z0-9\)\]\"”?!]{2})[.?!]\s+|(?<=[A-Z]{2})\.\s+")


def _strip_ids(text: str) -> str:
    text = DOI.sub("", text)
    text = ARXIV.sub("", text)
    text = re.sub(r"https?://\S+", "", text)
    return text


def _split_author(name: str) -> Optional[Author]:
    name = collapse_ws(name.strip().strip(".,"))
    if not name or name.lower() in {"et al", "et al.", "others"}:
        return None
    if "," in name:
        family, _, given = name.partition(",")
        initials = "".join(w[0] for w in re.split(r"[\s.\-]+", given) if w)
        return Author(family=family.strip(), initials=initials.upper())
    words = name.split()
    given = [w for w in words[:-1]]
    family = words[-1]
    # "Smith A" / "Smith AB" (Vancouver)
    if len(words) >= 2 and re.fullmatch(r"[A-Z]{1,3}", words[-1]):
        family = " ".join(words[:-1])
        return Author(family=family, initials=words[-1])
    # keep particles with the family name: "van der Berg"
    while given and given[-1].lower() in {"van", "von", "der", "de", "la", "del", "di", "da", "le"}:
        family = f"{given.pop()} {family}"
    initials = "".join(w[0] for w in given if w and w[0].isalpha())
    return Author(family=family.strip(), initials=initials.upper())


def parse_authors(segment: str) -> List[Author]:
    """Handles 'A. Smith, B. Jones, and C. Lee', 'Smith, A., Jones, B., & Lee, C.' and 'Smith A, Jones B'."""
    segment = re.sub(r"\bet\s+al\.?", "", segment)
    segment = re.sub(r",?\s*(?:\band\b|&)\s+", ", ", segment).strip().strip(",")
    tokens = [t.strip() for t in segment.split(",") if t.strip()]
    if ";" in segment:
        tokens = [t.strip() for t in re.split(r";", segment) if t.strip()]
        return [a for a in (_split_author(t) for t in tokens) if a]

    authors: List[Author] = []
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        nxt = tokens[i + 1] if i + 1 < len(tokens) else None
        # "Smith, A." pairs
        if nxt is not None and INITIALS.match(nxt) and not INITIALS.match(tok) and len(tok.split()) <= 3:
            a = _split_author(f"{tok}, {nxt}")
            i += 2
        else:
            a = _split_author(tok)
            i += 1
        if a:
            authors.append(a)
    return authors


def parse_reference_string(raw: str, key: str, entry_index: Optional[int] = None) -> BibEntry:
    """Best-effort structured view of one free-text reference."""
    text = collapse_ws(raw)
    text = re.sub(r"^\s*(?:\[\d+\]|\d+[.)])\s*", "", text)

    doi_m = DOI.search(text)
    doi = doi_m.group(1).rstrip(".") if doi_m else None
    arxiv_m = ARXIV.search(text)
    arxiv_id = arxiv_m.group(1) if arxiv_m else None
    body = collapse_ws(_strip_ids(text))

    year = None
    authors_seg, title, venue = "", "", ""
    paren = PAREN_YEAR.search(body)
    if paren:
        year = int(paren.group(1))
        authors_seg = body[: paren.start()].strip().rstrip(",")
        rest = body[paren.end():].lstrip(" .:,")
        parts = [p for p in _SEGMENT.split(rest) if p.strip()]
        title = parts[0] if parts else ""
        venue = parts[1] if len(parts) > 1 else ""
    else:
        parts = [p for p in _SEGMENT.split(body) if p.strip()]
        if parts:
            authors_seg = parts[0]
        if len(parts) > 1:
            title = parts[1]
        if len(parts) > 2:
            venue = parts[2]
        years = BARE_YEAR.findall(body)
        if years:
            year = int(years[-1])

    title = title.strip().strip("\"“”'").rstrip(".,")
    venue = BARE_YEAR.sub("", venue).strip(" .,;:")
    return BibEntry(
        key=key,
        authors=parse_authors(authors_seg),
        year=year,
        title=title,
        title_tokens=title_tokens(title),
        venue=venue,
        doi=doi,
        arxiv_id=arxiv_id,
        entry_index=entry_index,
        raw=text,
    )


# ---------------------------------------------------------
# BIBTEX
# ---------------------------------------------------------

def _bibtex_authors(field: str) -> List[Author]:
    out = []
    for name in re.split(r"\s+and\s+", field or ""):
        name = name.strip().strip("{}")
        if not name or name.lower() == "others":
            continue
        a = _split_author(name)
        if a:
            out.append(a)
    return out


def parse_bibtex(text: str) -> Dict[str, BibEntry]:
    """BibTeX sidecar → BibEntry per key (entry_index assigned later by citation order)."""
    parser = BibTexParser(common_strings=True)
    parser.customization = convert_to_unicode
    entries = bibtexparser.loads(text, parser=parser).entries
    out: Dict[str, BibEntry] = {}
    for e in entries:
        title = (e.get("title") or "").replace("{", "").replace("}", "")
        year_m = BARE_YEAR.search(e.get("year") or "")
        eprint = e.get("eprint") if (e.get("archiveprefix") or "").lower() == "arxiv" else None
        out[e["ID"]] = BibEntry(
            key=e["ID"],
            authors=_bibtex_authors(e.get("author", "")),
            year=int(year_m.group(1)) if year_m else None,
            title=collapse_ws(title),
            title_tokens=title_tokens(title),
            venue=e.get("journal") or e.get("booktitle") or e.get("publisher") or "",
            doi=e.get("doi"),
            arxiv_id=eprint,
            raw=collapse_ws(f"{e.get('author', '')}. {title}. {e.get('year', '')}"),
        )
    return out


# ---------------------------------------------------------
# DOCUMENT LEVEL
# ---------------------------------------------------------

def parse_bibliography(
    doc: ParsedDocument, anomalies: Optional[List[ExtractionAnomaly]] = None
) -> List[BibEntry]:
    """
    Markup inputs already carry their bibliography; otherwise each
    bibliography-entry block is parsed. No section → [] and an anomaly.
    """
    if doc.bibliography:
        return list(doc.bibliography)

    blocks = [b for b in doc.blocks if b.kind == BlockKind.BIBLIOGRAPHY_ENTRY]
    if not blocks:
        logger.warning("{}: no bibliography section found", doc.doc_id)
        if anomalies is not None:
            last = max(0, len(doc.blocks) - 1)
            anomalies.append(ExtractionAnomaly(
                kind=AnomalyKind.SUSPICIOUS_SEGMENT, block_start=last, block_end=last,
                pages=[doc.blocks[last].span.page] if doc.blocks else [],
                detail="no bibliography section found",
            ))
        return []

    entries: List[BibEntry] = []
    seen = set()
    for pos, block in enumerate(blocks, start=1):
        key = block.key or f"ref{pos}"
        if key in seen:
            key = f"{key}_{pos}"
        seen.add(key)
        index = int(block.label) if block.label and block.label.isdigit() else pos
        entries.append(parse_reference_string(block.text, key=key, entry_index=index))
    return entries


def with_entries(doc: ParsedDocument, entries: List[BibEntry]) -> ParsedDocument:
    return doc.model_copy(update={"bibliography": entries})


def entries_by_key(entries: List[BibEntry]) -> Dict[str, BibEntry]:
    return {e.key: e for e in entries}


def index_map(entries: List[BibEntry]) -> Dict[int, BibEntry]:
    return {e.entry_index: e for e in entries if e.entry_index is not None}


def split_name_year(label: str) -> Tuple[List[str], Optional[int]]:
    """natbib optional label 'Smith et al.(2020)' → ([Smith], 2020)."""
    m = re.search(r"\((\d{4})[a-z]?\)", label or "")
    names = re.sub(r"\(.*", "", label or "")
    names = re.sub(r"\bet\s+al\.?", "", names)
    fams = [n.strip() for n in re.split(r"\s*(?:,|\band\b|&)\s*", names) if n.strip()]
    return fams, int(m.group(1)) if m else None
