import re
import string
from typing import List, Set

from unidecode import unidecode

_PREPRINT_SUFFIX = re.compile(r"(\s*[\(\[]?\s*(v\d+|preprint|arxiv preprint)\s*[\)\]]?)+\s*$", re.I)
_WS = re.compile(r"\s+")
_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation + "“”‘’–—"})

STOPWORDS = {
    "a", "an", "the", "of", "and", "or", "in", "on", "for", "to", "with", "by",
    "from", "at", "as", "is", "are", "via", "its", "into", "we", "our",
}


def collapse_ws(text: str) -> str:
    return _WS.sub(" ", text).strip()


def normalize_title(title: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace, drop version/preprint suffixes."""
    if not title:
        return ""
    t = unidecode(title).lower()
    t = collapse_ws(t.translate(_PUNCT_TABLE))
    t = _PREPRINT_SUFFIX.sub("", t)
    return collapse_ws(t)


def normalize_text(text: str) -> str:
    """Whitespace collapse + punctuation normalisation; used for claim stability."""
    t = unidecode(text or "").lower()
    t = t.translate(_PUNCT_TABLE)
    return collapse_ws(t)


def title_tokens(title: str) -> List[str]:
    return [w for w in normalize_title(title).split() if w not in STOPWORDS]


def normalize_family_name(name: str) -> str:
    n = unidecode(name or "").lower()
    n = re.sub(r"[^a-z\s-]", "", n)
    return collapse_ws(n.replace("-", " "))


def content_tokens(text: str) -> Set[str]:
    return {w for w in normalize_text(text).split() if w not in STOPWORDS and len(w) > 1}


def token_overlap(a: str, b: str) -> float:
    """|A ∩ B| / |A| over content tokens of a; 0 when a has none."""
    ta = content_tokens(a)
    if not ta:
        return 0.0
    return len(ta & content_tokens(b)) / len(ta)


def first_sentence(text: str) -> str:
    text = collapse_ws(text)
    m = re.search(r"(?<=[.!?])\s+(?=[A-Z0-9\"(])", text)
    return text[: m.start()].strip() if m else text


_CITE_STRIP = re.compile(
    r"\s*\[\s*\d+(?:\s*[-–,;]\s*\d+)*\s*\]"
    r"|\s*\((?:[^()]*?\b(?:1[89]|20)\d{2}[a-z]?)(?:;[^()]*?\b(?:1[89]|20)\d{2}[a-z]?)*\)"
    r"|\s*\[\^\w+\]"
    r"|\s*<sup>\s*\d+\s*</sup>"
)
_NARRATIVE_CITE = re.compile(
    r"\b[A-Z][\w'\-]+(?:\s+et al\.?|\s+(?:and|&)\s+[A-Z][\w'\-]+)?\s*\((?:1[89]|20)\d{2}[a-z]?\)"
)


def strip_citations(sentence: str) -> str:
    """Drop citation markers; narrative author mentions become 'prior work'."""
    cleaned = _NARRATIVE_CITE.sub("prior work", sentence or "")
    cleaned = _CITE_STRIP.sub("", cleaned)
    return re.sub(r"\s+([.,;:])", r"\1", cleaned).strip()
