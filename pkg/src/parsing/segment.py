import re
from typing import List, Tuple

# Frozen rule table for the punctuation splitter. Changing it changes every
# sentence index downstream, so fixtures depend on it.
ABBREVIATIONS = {
    "e.g", "i.e", "et al", "al", "etc", "cf", "vs", "fig", "figs", "eq", "eqs",
    "sec", "secs", "tab", "no", "nos", "vol", "pp", "p", "dr", "mr", "ms", "prof",
    "approx", "resp", "ref", "refs", "ch", "app", "appx", "st", "jr", "sr", "inc",
    "ltd", "co", "dept", "univ", "def", "thm", "lem", "prop", "cor",
}

# Private-use characters wrap citation placeholders during markup parsing;
# they may start a sentence.
CITE_OPEN = "\ue000"
CITE_CLOSE = "\ue001"

_BOUNDARY = re.compile(r"([.!?])([\"'”’)\]]*)(\s+)(?=[A-Z0-9\"'“‘(\[$\\" + CITE_OPEN + r"*_])")
_MATH = re.compile(r"\$\$.*?\$\$|\$[^$]+\$|\\\(.*?\\\)", re.S)
_WORD_BEFORE = re.compile(r"([A-Za-z][A-Za-z.]*)$")


def _protected_spans(text: str) -> List[Tuple[int, int]]:
    return [m.span() for m in _MATH.finditer(text)]


def _inside(pos: int, spans: List[Tuple[int, int]]) -> bool:
    return any(a <= pos < b for a, b in spans)


def _is_abbreviation(prefix: str) -> bool:
    m = _WORD_BEFORE.search(prefix)
    if not m:
        # a number like "3.5" never reaches here (no space after the dot)
        return False
    word = m.group(1).rstrip(".").lower()
    if word in ABBREVIATIONS:
        return True
    if "et al" in prefix[-8:].lower():
        return True
    # single initials: "A. Smith", and dotted forms like "U.S."
    tail = m.group(1)
    if len(word) == 1 and tail[0].isupper():
        return True
    if re.fullmatch(r"(?:[A-Za-z]\.)+[A-Za-z]?", tail):
        return True
    return False


def split_sentences(text: str) -> List[str]:
    """
    Punctuation-based sentence splitter. Never splits inside inline math,
    after a listed abbreviation, or after a single initial.
    """
    text = text.strip()
    if not text:
        return []
    spans = _protected_spans(text)
    out: List[str] = []
    start = 0
    for m in _BOUNDARY.finditer(text):
        punct_pos = m.start(1)
        if _inside(punct_pos, spans):
            continue
        if m.group(1) == "." and _is_abbreviation(text[start:punct_pos]):
            continue
        end = m.end(2)
        piece = text[start:end].strip()
        if piece:
            out.append(piece)
        start = m.end(3)
    rest = text[start:].strip()
    if rest:
        out.append(rest)
    return out
