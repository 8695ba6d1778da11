# src/parsing/merge.py
"""
Cross-page merging of per-page transcripts.

Each boundary is tagged first: a page tail is complete when it ends a
sentence, closes display math, ends on a citation or is a heading/caption;
a page head continues the previous page when it starts lowercase, with a
connective, or with an opening bracket. Hyphenated splits and plain
continuations are joined by rule; anything else goes to the repair prompt.
"""

import re
from typing import List, Optional, Tuple

from loguru import logger

from src.core.gateway import CompletionRequest, DecodingConfig, ModelGateway
from src.core.models import PageTranscript
from src.core.prompts import load_prompt

CONNECTIVES = {
    "and", "or", "but", "nor", "which", "that", "where", "whereas", "while", "whose", "whom",
    "because", "since", "although", "though", "than", "thus", "hence", "therefore", "with",
    "without", "of", "to", "in", "for", "by", "as", "from", "into", "via",
}

_SENTENCE_END = re.compile(r"[.!?:][\"'”’)\]*_]*$")
_CLOSES_MATH = re.compile(r"(\$\$|\\\])$")
_ENDS_WITH_CITATION = re.compile(r"(\[\s*\d+(?:\s*[-–,;]\s*\d+)*\s*\]|\([^()]*\b(?:1[89]|20)\d{2}[a-z]?\)|\[\^\w+\])$")
_HEADING_OR_CAPTION = re.compile(r"^(#{1,6}\s|\**(Figure|Fig\.|Table|Tab\.)\s*\d+)", re.I)
_COMPLETE_START = re.compile(r"^(#{1,6}\s|[-*+]\s|\d+[.)]\s|\$\$|\\\[|\**(Figure|Fig\.|Table|Tab\.)\s*\d+)")
_HYPHEN_TAIL = re.compile(r"[A-Za-z]-$")
_DEBUG_TAG = re.compile(r"\s*<INCOMPLETE_(?:START|END)_P\d+>\s*")
_REPLY = re.compile(r"PREV_FIXED:\s*\n?(.*?)\n?\s*---\s*\n?\s*NEXT_FIXED:\s*\n?(.*)$", re.S)


def tail_paragraph(text: str) -> str:
    parts = [p for p in re.split(r"\n\s*\n", text.strip()) if p.strip()]
    return parts[-1].strip() if parts else ""


def head_paragraph(text: str) -> str:
    parts = [p for p in re.split(r"\n\s*\n", text.strip()) if p.strip()]
    return parts[0].strip() if parts else ""


def tail_is_complete(tail: str) -> bool:
    tail = tail.rstrip()
    if not tail:
        return True
    last_line = tail.splitlines()[-1].strip()
    if _HEADING_OR_CAPTION.match(last_line) or _HEADING_OR_CAPTION.match(tail):
        return True
    return bool(_SENTENCE_END.search(tail) or _CLOSES_MATH.search(tail) or _ENDS_WITH_CITATION.search(tail))


def head_is_continuation(head: str) -> bool:
    head = head.lstrip()
    if not head:
        return False
    if head[0] in "([{,;)]" or head[0].islower():
        return True
    first = re.match(r"[A-Za-z]+", head)
    return bool(first) and first.group(0).lower() in CONNECTIVES


def head_is_complete_start(head: str) -> bool:
    return bool(_COMPLETE_START.match(head.lstrip()))


def tag_boundaries(transcripts: List[PageTranscript]) -> List[PageTranscript]:
    """Set incomplete_start / incomplete_end on each non-empty page."""
    pages = [t for t in transcripts if t.markdown.strip()]
    out = []
    for i, t in enumerate(pages):
        end = not tail_is_complete(tail_paragraph(t.markdown)) if i + 1 < len(pages) else False
        start = head_is_continuation(head_paragraph(t.markdown)) if i > 0 else False
        out.append(t.model_copy(update={"incomplete_start": start, "incomplete_end": end}))
    return out


def tagged_text(t: PageTranscript) -> str:
    """Page markdown with its debug boundary tags, as logged at DEBUG."""
    text = t.markdown.strip()
    if t.incomplete_start:
        text = f"<INCOMPLETE_START_P{t.page_index}> {text}"
    if t.incomplete_end:
        text = f"{text} <INCOMPLETE_END_P{t.page_index}>"
    return text


def strip_debug_tags(text: str) -> str:
    return _DEBUG_TAG.sub(" ", text).strip() if _DEBUG_TAG.search(text) else text


def parse_repair_reply(reply: str) -> Optional[Tuple[str, str]]:
    m = _REPLY.search(reply or "")
    if not m:
        return None
    return m.group(1).strip(), m.group(2).strip()


async def repair_boundary(prev: str, nxt: str, gateway: ModelGateway) -> Optional[Tuple[str, str]]:
    """LLM repair of one junction. None when the reply is unusable or changes nothing."""
    prompt = load_prompt("boundary_repair")
    system, user = prompt.render(prev=prev, next=nxt)
    req = CompletionRequest(
        system_text=system, user_text=user, decoding=DecodingConfig(temperature=0.0),
        call_tag="dpcm/boundary", context={"prev": prev, "next": nxt},
    )
    [(reply, _)] = await gateway.complete(req)
    fixed = parse_repair_reply(reply)
    if fixed is None:
        logger.bind(stage="dpcm").warning("boundary repair reply lacks PREV_FIXED/NEXT_FIXED; keeping originals")
        return None
    if fixed == (prev.strip(), nxt.strip()):
        return None
    return fixed


def _join(tail: str, head: str) -> str:
    if not tail:
        return head
    if not head:
        return tail
    if tail_is_complete(tail):
        return f"{tail}\n\n{head}"
    return f"{tail} {head}"


async def merge_with_offsets(
    transcripts: List[PageTranscript], gateway: ModelGateway
) -> Tuple[str, List[int]]:
    """(merged text, start offset of every page in the merged text)."""
    ordered = sorted(transcripts, key=lambda t: t.page_index)
    tagged = {t.page_index: t for t in tag_boundaries(ordered)}
    for t in tagged.values():
        logger.bind(stage="dpcm").debug("page {}: {}", t.page_index, tagged_text(t)[:120])

    text = ""
    starts: List[int] = []
    for t in ordered:
        page = t.markdown.strip()
        if not page:
            starts.append(len(text))
            continue
        if not text:
            starts.append(0)
            text = page
            continue

        head_tags = tagged.get(t.page_index)
        tail = tail_paragraph(text)
        head = head_paragraph(page)
        body_before = text[: len(text) - len(tail)].rstrip()
        rest_after = page[len(head):].lstrip()

        if tail_is_complete(tail) or head_is_complete_start(head):
            starts.append(len(text) + 2)
            text = f"{text}\n\n{page}"
            continue

        if _HYPHEN_TAIL.search(tail) and head[:1].isalpha():
            junction = f"{tail}{head}"
        elif head_tags is not None and head_tags.incomplete_start:
            junction = f"{tail} {head}"
        else:
            fixed = await repair_boundary(tail, head, gateway)
            if fixed is None:
                junction = f"{tail}\n\n{head}"
            else:
                junction = _join(*fixed)

        prefix = f"{body_before}\n\n" if body_before else ""
        starts.append(len(prefix) + len(tail))
        text = prefix + junction + (f"\n\n{rest_after}" if rest_after else "")

    return strip_debug_tags(text), starts


async def merge_pages(transcripts: List[PageTranscript], gateway: ModelGateway) -> str:
    text, _ = await merge_with_offsets(transcripts, gateway)
    return text
