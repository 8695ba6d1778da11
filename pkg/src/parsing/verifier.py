import asyncio
import re
from typing import Dict, List, Optional, Tuple

from loguru import logger

from src.core.gateway import CompletionRequest, DecodingConfig, ModelGateway
from src.core.models import AnomalyKind, BlockKind, ExtractionAnomaly, ParsedDocument
from src.core.prompts import load_prompt
from src.parsing.citations import numeric_indices_in_order

MAX_TOLERATED_GAP = 1  # numbering: one missing number is fine
CITATION_GAP = 10  # > 10 consecutive missing citation indices
OUT_OF_ORDER_RATIO = 0.2

_FLOAT = re.compile(r"^\**(Figure|Fig\.|Table|Tab\.)\s*(\d+)", re.I)
_EQ_NUMBER = re.compile(r"^\((\d+)\)$")
AUDIT_LABELS = ("SUSPICIOUS_MISSING", "SUSPICIOUS_DUPLICATE", "SUSPICIOUS_ORDER", "OK")


def _pages(doc: ParsedDocument, start: int, end: int) -> List[int]:
    pages = sorted({doc.blocks[i].span.page for i in range(start, end + 1) if 0 <= i < len(doc.blocks)})
    return pages


def _anomaly(doc: ParsedDocument, kind: AnomalyKind, start: int, end: int, detail: str) -> ExtractionAnomaly:
    start, end = min(start, end), max(start, end)
    return ExtractionAnomaly(kind=kind, block_start=start, block_end=end, pages=_pages(doc, start, end), detail=detail)


def check_headings(doc: ParsedDocument) -> List[ExtractionAnomaly]:
    """
    Deeper by more than one level is a jump. Going back up is fine when it
    closes open subsections; landing on a level never opened on the current
    path is an abrupt regression.
    """
    out = []
    path: List[int] = []
    prev: Optional[Tuple[int, int]] = None
    for block in doc.heading_blocks():
        level = block.level or 1
        if prev is not None:
            prev_index, prev_level = prev
            if level > prev_level + 1:
                out.append(_anomaly(doc, AnomalyKind.HEADING_JUMP, prev_index, block.index,
                                    f"heading level {prev_level} -> {level}"))
            elif level < prev_level - 1 and level not in path:
                out.append(_anomaly(doc, AnomalyKind.HEADING_JUMP, prev_index, block.index,
                                    f"heading level regresses {prev_level} -> {level}"))
        while path and path[-1] >= level:
            path.pop()
        path.append(level)
        prev = (block.index, level)
    return out


def _check_sequence(doc: ParsedDocument, name: str, seq: List[Tuple[int, int]]) -> List[ExtractionAnomaly]:
    out = []
    seen: Dict[int, int] = {}
    prev: Optional[Tuple[int, int]] = None
    for number, block_index in seq:
        if number in seen:
            out.append(_anomaly(doc, AnomalyKind.NUMBERING_GAP, seen[number], block_index,
                                f"{name} {number} duplicated"))
        else:
            seen[number] = block_index
        last_number, last_block = prev if prev else (0, block_index)
        if number < last_number:
            out.append(_anomaly(doc, AnomalyKind.NUMBERING_GAP, last_block, block_index,
                                f"{name} {number} after {last_number}"))
        elif number - last_number - 1 > MAX_TOLERATED_GAP:
            out.append(_anomaly(doc, AnomalyKind.NUMBERING_GAP, last_block, block_index,
                                f"{name} numbering jumps {last_number} -> {number}"))
        prev = (number, block_index)
    return out


def check_numbering(doc: ParsedDocument) -> List[ExtractionAnomaly]:
    equations, figures, tables = [], [], []
    for block in doc.blocks:
        if block.kind == BlockKind.DISPLAY_MATH and block.label:
            m = _EQ_NUMBER.match(block.label)
            if m:
                equations.append((int(m.group(1)), block.index))
        elif block.kind == BlockKind.CAPTION:
            m = _FLOAT.match(block.text)
            if m:
                target = tables if m.group(1).lower().startswith("tab") else figures
                target.append((int(m.group(2)), block.index))
    return (
        _check_sequence(doc, "equation", equations)
        + _check_sequence(doc, "figure", figures)
        + _check_sequence(doc, "table", tables)
    )


def check_citation_sequence(doc: ParsedDocument) -> List[ExtractionAnomaly]:
    """Numeric citation indices should be roughly monotone and dense."""
    seq = numeric_indices_in_order(doc)
    if not seq:
        return []
    out = []

    first_seen: Dict[int, int] = {}
    for idx, block in seq:
        first_seen.setdefault(idx, block)
    ordered = sorted(first_seen)
    for a, b in zip(ordered, ordered[1:]):
        if b - a - 1 > CITATION_GAP:
            out.append(_anomaly(doc, AnomalyKind.CITATION_SEQUENCE_GAP, first_seen[a], first_seen[b],
                                f"no citations between [{a}] and [{b}]"))

    firsts = list(first_seen.items())  # insertion order = first appearance
    pairs = list(zip(firsts, firsts[1:]))
    if pairs:
        backwards = [(x, y) for x, y in pairs if y[0] < x[0]]
        if len(backwards) / len(pairs) > OUT_OF_ORDER_RATIO:
            start = min(x[1] for x, _ in backwards)
            end = max(y[1] for _, y in backwards)
            out.append(_anomaly(doc, AnomalyKind.CITATION_SEQUENCE_GAP, start, end,
                                f"{len(backwards)}/{len(pairs)} citation first-appearances out of order"))
    return out


def verify_extraction(doc: ParsedDocument) -> List[ExtractionAnomaly]:
    """Level 1: deterministic structural checks. Pure."""
    return check_headings(doc) + check_numbering(doc) + check_citation_sequence(doc)


# ---------------------------------------------------------
# LEVEL 3: SEMANTIC AUDIT
# ---------------------------------------------------------

def _structure_hint(doc: ParsedDocument, start: int, end: int) -> str:
    before = next((b.text for b in reversed(doc.blocks[:start]) if b.kind == BlockKind.HEADING), "document start")
    after = next((b.text for b in doc.blocks[end + 1:] if b.kind == BlockKind.HEADING), "document end")
    return f'between "{before}" and "{after}"'


def parse_audit_reply(reply: str) -> Tuple[str, str]:
    text = (reply or "").strip()
    first, _, rest = text.partition("\n")
    label = "OK"
    for candidate in AUDIT_LABELS:
        if candidate in first.upper():
            label = candidate
            break
    return label, rest.strip()


async def audit_anomalies(
    doc: ParsedDocument, anomalies: List[ExtractionAnomaly], gateway: ModelGateway
) -> List[ExtractionAnomaly]:
    """Ask the audit prompt about each residual region; suspicious labels become SuspiciousSegment."""
    prompt = load_prompt("extraction_audit")

    async def one(a: ExtractionAnomaly) -> Optional[ExtractionAnomaly]:
        lo, hi = max(0, a.block_start - 1), min(len(doc.blocks) - 1, a.block_end + 1)
        segment = "\n\n".join(b.text for b in doc.blocks[lo:hi + 1])
        system, user = prompt.render(structure=_structure_hint(doc, lo, hi), segment=segment)
        req = CompletionRequest(
            system_text=system, user_text=user, decoding=DecodingConfig(temperature=0.0),
            call_tag="dpcm/audit", context={"segment": segment},
        )
        [(reply, _)] = await gateway.complete(req)
        label, why = parse_audit_reply(reply)
        if label == "OK":
            return None
        logger.bind(stage="dpcm").warning("audit flagged blocks {}-{}: {}", lo, hi, label)
        return ExtractionAnomaly(
            kind=AnomalyKind.SUSPICIOUS_SEGMENT, block_start=lo, block_end=hi,
            pages=a.pages, detail=f"{label}: {why}" if why else label,
        )

    results = await asyncio.gather(*(one(a) for a in anomalies))
    return [r for r in results if r is not None]
