import asyncio
import re
from typing import Dict, List, Optional, Tuple

from loguru import logger

from src.core.gateway import CompletionRequest, DecodingConfig, ModelGateway
from src.core.models import BibEntry, CitationDraft, CitationEdge, CitationStyle, ParsedDocument
from src.core.prompts import load_prompt
from src.core.text import content_tokens, normalize_family_name

NAME_WEIGHT = 0.5
YEAR_WEIGHT = 0.3
TITLE_WEIGHT = 0.2
ACCEPT_THRESHOLD = 0.8
MAX_CANDIDATES = 5


def author_year_score(draft: CitationDraft, entry: BibEntry, sentence_text: str = "") -> float:
    """0.5 · last-name overlap + 0.3 · year equality + 0.2 · title-token overlap with the sentence."""
    cited = {normalize_family_name(n) for n in draft.names if n}
    listed = {normalize_family_name(f) for f in entry.family_names}
    name = len(cited & listed) / len(cited) if cited else 0.0
    year = 1.0 if draft.year is not None and entry.year == draft.year else 0.0
    title = 0.0
    if entry.title_tokens and sentence_text:
        sent = content_tokens(sentence_text)
        title = len(set(entry.title_tokens) & sent) / len(set(entry.title_tokens))
    return NAME_WEIGHT * name + YEAR_WEIGHT * year + TITLE_WEIGHT * title


def _suffix_preference(draft: CitationDraft, entry: BibEntry) -> bool:
    return bool(draft.year_suffix) and f"{draft.year}{draft.year_suffix}" in entry.raw


def _candidate_line(i: int, e: BibEntry) -> str:
    authors = ", ".join(f"{a.family} {a.initials}".strip() for a in e.authors) or "unknown authors"
    year = e.year if e.year is not None else "n.d."
    return f"{i}. {authors} ({year}). {e.title}. {e.venue}".strip()


async def disambiguate(
    draft: CitationDraft, sentence_text: str, candidates: List[BibEntry], gateway: ModelGateway
) -> Optional[BibEntry]:
    """Constrained choice among the listed candidates; None means abstain."""
    prompt = load_prompt("citation_disambiguation")
    system, user = prompt.render(
        surface=draft.surface_text,
        sentence=sentence_text,
        candidates="\n".join(_candidate_line(i, e) for i, e in enumerate(candidates, start=1)),
    )
    req = CompletionRequest(
        system_text=system,
        user_text=user,
        decoding=DecodingConfig(temperature=0.0),
        call_tag="dpcm/disambiguate",
        context={"surface": draft.surface_text, "candidates": [e.key for e in candidates]},
    )
    [(reply, _)] = await gateway.complete(req)
    m = re.search(r"\b(\d+)\b", reply or "")
    if "ABSTAIN" in (reply or "").upper() or not m:
        return None
    choice = int(m.group(1))
    if not 1 <= choice <= len(candidates):
        logger.warning("disambiguator chose {} outside the candidate list", choice)
        return None
    return candidates[choice - 1]


def _edge(draft: CitationDraft, keys: List[str], ambiguous: bool = False, unresolved: bool = False) -> CitationEdge:
    return CitationEdge(
        occurrence_id=draft.occurrence_id,
        span_id=draft.span_id,
        sentence_index=draft.sentence_index,
        surface_text=draft.surface_text,
        style=draft.style,
        target_keys=keys,
        ambiguity_flag=ambiguous or not keys,
        from_anchor=draft.from_anchor,
        unresolved=unresolved,
    )


async def _align_author_year(
    draft: CitationDraft, entries: List[BibEntry], sentence_text: str, gateway: ModelGateway
) -> CitationEdge:
    scored: List[Tuple[float, int, BibEntry]] = []
    for pos, e in enumerate(entries):
        s = author_year_score(draft, e, sentence_text)
        if _suffix_preference(draft, e):
            s += 1e-6
        if s > 0:
            scored.append((s, pos, e))
    if not scored:
        return _edge(draft, [], unresolved=True)
    scored.sort(key=lambda x: (-x[0], x[1]))

    best = scored[0]
    tied = len(scored) > 1 and abs(scored[1][0] - best[0]) < 1e-9
    if best[0] >= ACCEPT_THRESHOLD and not tied:
        return _edge(draft, [best[2].key])

    candidates = [e for _, _, e in scored[:MAX_CANDIDATES]]
    choice = await disambiguate(draft, sentence_text, candidates, gateway)
    if choice is None:
        return _edge(draft, [], ambiguous=True)
    return _edge(draft, [choice.key])


async def align_citations(
    drafts: List[CitationDraft],
    entries: List[BibEntry],
    gateway: ModelGateway,
    doc: Optional[ParsedDocument] = None,
) -> List[CitationEdge]:
    """
    Anchors map exactly; numeric and footnote markers map by entry index;
    author-year citations are scored and, when unsure, disambiguated.
    """
    by_key: Dict[str, BibEntry] = {e.key: e for e in entries}
    by_index: Dict[int, BibEntry] = {e.entry_index: e for e in entries if e.entry_index is not None}

    def sentence_text(d: CitationDraft) -> str:
        if doc is None:
            return ""
        s = doc.sentence(d.sentence_index)
        return s.text if s else ""

    async def one(d: CitationDraft) -> CitationEdge:
        if d.from_anchor:
            missing = [k for k in d.anchor_keys if k not in by_key]
            return _edge(d, list(d.anchor_keys), unresolved=bool(missing))
        if d.style == CitationStyle.NUMERIC:
            e = by_index.get(d.index)
            return _edge(d, [e.key]) if e else _edge(d, [], unresolved=True)
        if d.style == CitationStyle.FOOTNOTE:
            e = by_key.get(f"fn{d.marker}") if d.marker else None
            if e is None and d.index is not None:
                e = by_index.get(d.index)
            return _edge(d, [e.key]) if e else _edge(d, [], unresolved=True)
        return await _align_author_year(d, entries, sentence_text(d), gateway)

    return list(await asyncio.gather(*(one(d) for d in drafts)))
