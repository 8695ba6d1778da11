import re
from collections import Counter
from typing import List, Optional, Tuple

from src.core.models import CitationDraft, CitationStyle, ParsedDocument

YEAR = r"(?:1[89]|20)\d{2}"

NUMERIC = re.compile(
    r"\[(\s*\d+(?:\s*[-–—]\s*\d+)?(?:\s*[,;]\s*\d+(?:\s*[-–—]\s*\d+)?)*\s*)\](?!\()"
)
FOOTNOTE = re.compile(r"\[\^(\w+)\]|<sup>\s*(\d+)\s*</sup>")
PARENTHETICAL = re.compile(r"\(([^()]*?\b" + YEAR + r"[a-z]?\b[^()]*?)\)")
NARRATIVE = re.compile(
    r"(?P<names>[A-Z][\w'’\-]+(?:\s+(?:and|&)\s+[A-Z][\w'’\-]+|\s+et\s+al\.?)?)\s+"
    r"\((?P<years>" + YEAR + r"[a-z]?(?:\s*[,;]\s*" + YEAR + r"[a-z]?)*)\)"
)
_PART = re.compile(
    r"^(?:(?:see(?:\s+also)?|e\.g\.,?|cf\.|i\.e\.,?)\s+)?(?P<names>.*?[A-Z][^,]*?),?\s+"
    r"(?P<years>" + YEAR + r"[a-z]?(?:\s*,\s*" + YEAR + r"[a-z]?)*)\b"
)
_YEAR_TOKEN = re.compile(r"(" + YEAR + r")([a-z]?)")
_MATH = re.compile(r"\$\$.*?\$\$|\$[^$]+\$", re.S)
# widest numeric range still read as a citation
MAX_RANGE_SPAN = 500


def expand_range(a: int, b: int) -> List[int]:
    """Inclusive numeric range; a reversed range yields just its endpoints."""
    if b >= a:
        return list(range(a, b + 1))
    return [a, b]


def parse_numeric(inner: str) -> List[int]:
    """Indices in a numeric bracket; empty when a range is implausibly wide."""
    out: List[int] = []
    for part in re.split(r"[,;]", inner):
        part = part.strip()
        if not part:
            continue
        m = re.fullmatch(r"(\d+)\s*[-–—]\s*(\d+)", part)
        if m:
            a, b = int(m.group(1)), int(m.group(2))
            if abs(b - a) >= MAX_RANGE_SPAN:
                return []
            out.extend(expand_range(a, b))
        else:
            out.append(int(part))
    return out


def family_names(names: str) -> List[str]:
    """'Smith et al.' → [Smith]; 'Brown & Lee' → [Brown, Lee]; 'Smith, Jones and Lee' → three."""
    names = re.sub(r"\bet\s+al\.?", "", names).strip().rstrip(",")
    parts = re.split(r"\s*(?:,|\band\b|&)\s*", names)
    return [p.strip() for p in parts if p.strip() and p.strip()[0].isupper()]


def _mask_math(text: str) -> str:
    return _MATH.sub(lambda m: " " * len(m.group(0)), text)


def _spans_in_sentence(text: str) -> List[Tuple[int, CitationStyle, list]]:
    """(position, style, items) for every citation span in one sentence."""
    masked = _mask_math(text)
    found: List[Tuple[int, CitationStyle, list]] = []
    taken: List[Tuple[int, int]] = []

    def free(a: int, b: int) -> bool:
        return all(b <= x or a >= y for x, y in taken)

    for m in FOOTNOTE.finditer(masked):
        marker = m.group(1) or m.group(2)
        found.append((m.start(), CitationStyle.FOOTNOTE, [marker]))
        taken.append(m.span())

    for m in NUMERIC.finditer(masked):
        if not free(*m.span()):
            continue
        indices = parse_numeric(m.group(1))
        # intervals like [0, 1] are math, not citations
        if not indices or min(indices) < 1:
            continue
        found.append((m.start(), CitationStyle.NUMERIC, indices))
        taken.append(m.span())

    for m in NARRATIVE.finditer(masked):
        if not free(*m.span()):
            continue
        names = family_names(m.group("names"))
        items = [(names, int(y), s) for y, s in _YEAR_TOKEN.findall(m.group("years"))]
        found.append((m.start(), CitationStyle.AUTHOR_YEAR, items))
        taken.append(m.span())

    for m in PARENTHETICAL.finditer(masked):
        if not free(*m.span()):
            continue
        items = []
        for part in m.group(1).split(";"):
            pm = _PART.match(part.strip())
            if not pm:
                continue
            names = family_names(pm.group("names"))
            if not names:
                continue
            for y, s in _YEAR_TOKEN.findall(pm.group("years")):
                items.append((names, int(y), s))
        if items:
            found.append((m.start(), CitationStyle.AUTHOR_YEAR, items))
            taken.append(m.span())

    found.sort(key=lambda x: x[0])
    return found


def _surface(text: str, pos: int, style: CitationStyle) -> str:
    masked = _mask_math(text)
    patterns = {
        CitationStyle.NUMERIC: [NUMERIC],
        CitationStyle.FOOTNOTE: [FOOTNOTE],
        CitationStyle.AUTHOR_YEAR: [NARRATIVE, PARENTHETICAL],
    }[style]
    for pattern in patterns:
        m = pattern.match(masked, pos)
        if m:
            return text[m.start():m.end()]
    return ""


def detect_citations(doc: ParsedDocument) -> Tuple[CitationStyle, List[CitationDraft]]:
    """
    Find every in-text citation and attach it to its sentence.
    Markup-derived documents carry exact anchors, so those are used verbatim.
    """
    if doc.anchors:
        drafts = []
        for occ, keys in doc.anchors.items():
            drafts.append(CitationDraft(
                occurrence_id=f"{doc.doc_id}#{occ}",
                span_id=occ,
                sentence_index=doc.anchor_sentences.get(occ, -1),
                surface_text=doc.anchor_surfaces.get(occ, ""),
                style=doc.anchor_style or CitationStyle.NUMERIC,
                anchor_keys=list(keys),
                from_anchor=True,
            ))
        return doc.anchor_style or CitationStyle.NUMERIC, drafts

    drafts: List[CitationDraft] = []
    style_counts: Counter = Counter()
    for sentence in doc.sentences:
        for j, (pos, style, items) in enumerate(_spans_in_sentence(sentence.text)):
            style_counts[style] += 1
            span_id = f"s{sentence.index}-{j}"
            surface = _surface(sentence.text, pos, style)
            for k, item in enumerate(items):
                base = dict(
                    occurrence_id=f"{doc.doc_id}#{span_id}-{k}",
                    span_id=span_id,
                    sentence_index=sentence.index,
                    surface_text=surface,
                    style=style,
                )
                if style == CitationStyle.NUMERIC:
                    drafts.append(CitationDraft(index=item, **base))
                elif style == CitationStyle.FOOTNOTE:
                    idx = int(item) if str(item).isdigit() else None
                    drafts.append(CitationDraft(index=idx, marker=str(item), **base))
                else:
                    names, year, suffix = item
                    drafts.append(CitationDraft(names=names, year=year, year_suffix=suffix, **base))

    return dominant_style(style_counts, doc.anchor_style), drafts


def dominant_style(counts: Counter, fallback: Optional[CitationStyle] = None) -> CitationStyle:
    if not counts:
        return fallback or CitationStyle.NUMERIC
    order = [CitationStyle.NUMERIC, CitationStyle.AUTHOR_YEAR, CitationStyle.FOOTNOTE]
    return max(order, key=lambda s: (counts.get(s, 0), -order.index(s)))


def numeric_indices_in_order(doc: ParsedDocument) -> List[Tuple[int, int]]:
    """(index, block index) for every numeric citation in reading order."""
    out = []
    for sentence in doc.sentences:
        for _, style, items in _spans_in_sentence(sentence.text):
            if style == CitationStyle.NUMERIC:
                out.extend((i, sentence.block_index) for i in items)
    return out
