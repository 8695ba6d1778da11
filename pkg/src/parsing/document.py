# src/parsing/document.py
"""
Markdown → ParsedDocument.

Shared by every input kind: LaTeX/HTML are normalised into blocks by
src.parsing.markup, page transcripts are merged into Markdown first, and
plain Markdown full texts come straight here.
"""

import bisect
import re
from typing import Dict, List, Optional, Sequence, Tuple

from src.core.models import Block, BlockKind, ParsedDocument, Sentence, SourceSpan
from src.parsing.segment import split_sentences

DEFAULT_BIB_HEADINGS = ("references", "bibliography", "works cited", "literature cited", "reference list")

SENTENCE_KINDS = {BlockKind.PARAGRAPH, BlockKind.LIST_ITEM, BlockKind.CAPTION}

_HEADING = re.compile(r"^(#{1,6})\s+(.*?)\s*#*\s*$")
_LIST_ITEM = re.compile(r"^\s*(?:[-*+]|(\d+)[.)])\s+(.*)$")
_FOOTNOTE_DEF = re.compile(r"^\[\^(\w+)\]:\s*(.*)$")
_CAPTION = re.compile(r"^\**(Figure|Fig\.|Table|Tab\.)\s*\d+", re.I)
_BIB_MARKER = re.compile(r"^\s*(?:\[(\d+)\]|(\d+)[.)])\s+(.*)$")
_EQ_TAG = re.compile(r"\\tag\{([^}]*)\}|\((\d+(?:\.\d+)?)\)\s*$")


def is_bibliography_heading(text: str, variants: Sequence[str] = DEFAULT_BIB_HEADINGS) -> bool:
    t = re.sub(r"^[\d.\s]+", "", text.strip().lower()).rstrip(":").strip()
    t = t.strip("*_ ")
    return t in variants


class DocumentBuilder:
    """Accumulates blocks and sentences in reading order, then freezes them."""

    def __init__(self, doc_id: str, source_kind: str = "text"):
        self.doc_id = doc_id
        self.source_kind = source_kind
        self.blocks: List[Dict] = []
        self.sentences: List[Dict] = []

    def add_block(
        self,
        kind: BlockKind,
        text: str,
        level: Optional[int] = None,
        key: Optional[str] = None,
        label: Optional[str] = None,
        page: int = 1,
    ) -> int:
        text = text.strip()
        index = len(self.blocks)
        self.blocks.append({"index": index, "kind": kind, "text": text, "level": level,
                            "key": key, "label": label, "page": page})
        if kind in SENTENCE_KINDS:
            for s in split_sentences(text):
                self.sentences.append({"index": len(self.sentences), "block_index": index, "text": s})
        return index

    def build(self, **extra) -> ParsedDocument:
        blocks = []
        offset = 0
        parts = []
        for b in self.blocks:
            start = offset
            end = start + len(b["text"])
            blocks.append(Block(
                index=b["index"], kind=b["kind"], text=b["text"], level=b["level"],
                key=b["key"], label=b["label"], span=SourceSpan(page=b["page"], start=start, end=end),
            ))
            parts.append(b["text"])
            offset = end + 2
        sentences = [Sentence(**s) for s in self.sentences]
        return ParsedDocument(
            doc_id=self.doc_id,
            source_kind=self.source_kind,
            text="\n\n".join(parts),
            blocks=blocks,
            sentences=sentences,
            **extra,
        )


# ---------------------------------------------------------
# MARKDOWN
# ---------------------------------------------------------

def _page_of(offset: int, page_starts: Optional[List[int]]) -> int:
    if not page_starts:
        return 1
    return max(1, bisect.bisect_right(page_starts, offset))


def _split_bibliography(lines: List[Tuple[str, int]]) -> List[Tuple[Optional[int], str, int]]:
    """
    Segment reference-list lines into entries using typography cues:
    numbering ([7] / 7.), bullets, hanging indentation and blank lines.
    Returns (number or None, entry text, offset).
    """
    entries: List[List] = []
    numbered = any(_BIB_MARKER.match(l) for l, _ in lines)
    current: Optional[List] = None
    for line, off in lines:
        if not line.strip():
            current = None
            continue
        m = _BIB_MARKER.match(line)
        bullet = re.match(r"^\s*[-*+•]\s+(.*)$", line)
        if m:
            current = [int(m.group(1) or m.group(2)), m.group(3).strip(), off]
            entries.append(current)
        elif bullet:
            current = [None, bullet.group(1).strip(), off]
            entries.append(current)
        elif current is not None and (line[:1].isspace() or numbered):
            current[1] = f"{current[1]} {line.strip()}"
        else:
            current = [None, line.strip(), off]
            entries.append(current)
    return [(e[0], e[1], e[2]) for e in entries]


def parse_markdown(
    text: str,
    doc_id: str,
    source_kind: str = "text",
    page_starts: Optional[List[int]] = None,
    bib_headings: Sequence[str] = DEFAULT_BIB_HEADINGS,
) -> ParsedDocument:
    builder = DocumentBuilder(doc_id, source_kind)

    raw_lines = text.split("\n")
    lines: List[Tuple[str, int]] = []
    off = 0
    for raw in raw_lines:
        lines.append((raw.rstrip(), off))
        off += len(raw) + 1

    para: List[str] = []
    para_off = 0
    bib_level: Optional[int] = None
    bib_lines: List[Tuple[str, int]] = []
    bib_position = 0

    def flush_para():
        nonlocal para
        if para:
            body = " ".join(p.strip() for p in para).strip()
            if body:
                kind = BlockKind.CAPTION if _CAPTION.match(body) else BlockKind.PARAGRAPH
                builder.add_block(kind, body, page=_page_of(para_off, page_starts))
        para = []

    def flush_bib():
        nonlocal bib_lines, bib_position
        for number, entry, eoff in _split_bibliography(bib_lines):
            bib_position += 1
            idx = number if number is not None else bib_position
            builder.add_block(
                BlockKind.BIBLIOGRAPHY_ENTRY, entry, key=f"ref{idx}", label=str(idx),
                page=_page_of(eoff, page_starts),
            )
        bib_lines = []

    i = 0
    while i < len(lines):
        line, loff = lines[i]
        stripped = line.strip()

        heading = _HEADING.match(stripped)
        if heading:
            flush_para()
            level = len(heading.group(1))
            if bib_level is not None and level <= bib_level:
                flush_bib()
                bib_level = None
            builder.add_block(BlockKind.HEADING, heading.group(2), level=level, page=_page_of(loff, page_starts))
            if is_bibliography_heading(heading.group(2), bib_headings):
                bib_level = level
            i += 1
            continue

        fn = _FOOTNOTE_DEF.match(stripped)
        if fn:
            flush_para()
            body = [fn.group(2)]
            i += 1
            while i < len(lines) and lines[i][0][:1].isspace() and lines[i][0].strip():
                body.append(lines[i][0].strip())
                i += 1
            builder.add_block(
                BlockKind.BIBLIOGRAPHY_ENTRY, " ".join(body), key=f"fn{fn.group(1)}", label=fn.group(1),
                page=_page_of(loff, page_starts),
            )
            continue

        if bib_level is not None:
            bib_lines.append((line, loff))
            i += 1
            continue

        if stripped.startswith("$$") or stripped.startswith("\\["):
            flush_para()
            closer = "$$" if stripped.startswith("$$") else "\\]"
            chunk = [stripped]
            rest = stripped[2:]
            if closer not in rest:
                i += 1
                while i < len(lines):
                    chunk.append(lines[i][0].strip())
                    if closer in lines[i][0]:
                        break
                    i += 1
            body = "\n".join(chunk)
            tag = _EQ_TAG.search(body)
            label = f"({tag.group(1) or tag.group(2)})" if tag else None
            builder.add_block(BlockKind.DISPLAY_MATH, body, label=label, page=_page_of(loff, page_starts))
            i += 1
            continue

        item = _LIST_ITEM.match(line)
        if item:
            flush_para()
            body = [item.group(2)]
            i += 1
            while i < len(lines):
                nxt = lines[i][0]
                if not nxt.strip() or _LIST_ITEM.match(nxt) or not nxt[:1].isspace():
                    break
                body.append(nxt.strip())
                i += 1
            builder.add_block(BlockKind.LIST_ITEM, " ".join(body), page=_page_of(loff, page_starts))
            continue

        if not stripped:
            flush_para()
            i += 1
            continue

        if not para:
            para_off = loff
        para.append(stripped)
        i += 1

    flush_para()
    if bib_level is not None:
        flush_bib()
    return builder.build()
