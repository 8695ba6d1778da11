# src/verification/taxonomy.py
"""
Primary error code for a miscitation.

Metadata settles the two highest levels without a model call (Ghost →
Attribution, retracted or secondary source → Validity); everything else
goes to the classifier prompt, sampled for self-consistency.
"""

import re
from collections import Counter
from typing import List, Optional, Tuple

from loguru import logger
from pydantic import BaseModel, Field

from src.core.errors import LabelingError
from src.core.gateway import CompletionRequest, DecodingConfig, ModelGateway
from src.core.models import (
    AccessibilityVerdict,
    EvidenceBundle,
    LabelDecision,
    MetadataSnapshot,
    Route,
    TaxonomyCode,
    precedence_min,
)
from src.core.prompts import load_prompt

_CATEGORY = re.compile(r"^\W*category\W*:\s*(.+?)\s*$", re.I | re.M)
_RATIONALE = re.compile(r"^\W*rationale\W*:\s*(.+?)\s*$", re.I | re.M)


class LabelerConfig(BaseModel):
    samples: int = Field(default=5, ge=1)
    temperature: float = Field(default=0.7, ge=0.0)
    top_p: float = Field(default=0.95, gt=0.0, le=1.0)


def parse_label_reply(reply: str) -> Tuple[Optional[TaxonomyCode], str]:
    text = reply or ""
    m = _CATEGORY.search(text)
    code = TaxonomyCode.try_parse(m.group(1)) if m else None
    if code is None:
        # bare category name on the first non-empty line
        first = next((ln for ln in text.splitlines() if ln.strip()), "")
        code = TaxonomyCode.try_parse(first)
    r = _RATIONALE.search(text)
    return code, (r.group(1) if r else "")


def _short_circuit(code: TaxonomyCode, rationale: str) -> LabelDecision:
    return LabelDecision(code=code, rationale=rationale, votes={code: 1}, total_samples=1, confidence=1.0)


def metadata_failure(snapshot: Optional[MetadataSnapshot]) -> Optional[str]:
    if snapshot is None:
        return None
    if snapshot.is_retracted:
        return "the cited source is retracted"
    if snapshot.is_secondary_source:
        return "the cited source is a secondary source standing in for primary evidence"
    return None


def majority_code(codes: List[TaxonomyCode]) -> TaxonomyCode:
    """Strict majority, else the most frequent code, ties broken by precedence."""
    counts = Counter(codes)
    top = max(counts.values())
    return precedence_min([c for c, n in counts.items() if n == top])


def _evidence_text(bundle: EvidenceBundle) -> str:
    if bundle.accessible_evidence:
        return "\n".join(f"- {w.text}" for w in bundle.accessible_evidence[:5])
    com = bundle.committee_evidence
    if com and com.clusters:
        return "\n".join(f"- {c.evidence_statement or c.aspect_summary}" for c in com.clusters)
    return "(none)"


def _metadata_text(snapshot: Optional[MetadataSnapshot]) -> str:
    if snapshot is None:
        return "(none)"
    parts = [
        f"title: {snapshot.title or 'unknown'}",
        f"authors: {', '.join(snapshot.authors) or 'unknown'}",
        f"year: {snapshot.year or 'unknown'}",
        f"venue: {snapshot.venue or 'unknown'}",
    ]
    if snapshot.article_type:
        parts.append(f"article type: {snapshot.article_type}")
    return "\n".join(parts)


async def assign_error_code(
    bundle: EvidenceBundle,
    accessibility: AccessibilityVerdict,
    gateway: ModelGateway,
    config: Optional[LabelerConfig] = None,
    seed: int = 0,
) -> LabelDecision:
    config = config or LabelerConfig()
    log = logger.bind(stage="taxonomy")

    if accessibility.route == Route.GHOST or bundle.route == Route.GHOST:
        return _short_circuit(TaxonomyCode.ATTRIBUTION, "the reference does not resolve to any real source")
    snapshot = accessibility.snapshot or bundle.metadata
    failure = metadata_failure(snapshot)
    if failure:
        return _short_circuit(TaxonomyCode.VALIDITY, failure)

    prompt = load_prompt("taxonomy_classifier")
    system, user = prompt.render(
        citing_context=bundle.citing_context,
        metadata=_metadata_text(snapshot),
        evidence=_evidence_text(bundle),
        notes=bundle.notes or "(none)",
    )
    req = CompletionRequest(
        system_text=system,
        user_text=user,
        decoding=DecodingConfig(
            temperature=config.temperature, nucleus_mass=config.top_p, sample_count=config.samples, seed=seed,
        ),
        call_tag="taxonomy/classify",
    )
    replies = [text for text, _ in await gateway.complete(req)]
    parsed = [parse_label_reply(r) for r in replies]
    codes = [c for c, _ in parsed if c is not None]
    if not codes:
        raise LabelingError("no taxonomy sample named a known category", replies)
    if len(codes) < len(parsed):
        log.warning("{} of {} taxonomy samples unparseable", len(parsed) - len(codes), len(parsed))

    code = majority_code(codes)
    votes = dict(Counter(codes))
    rationale = next((r for c, r in parsed if c == code and r), "")
    return LabelDecision(
        code=code, rationale=rationale, votes=votes, total_samples=len(parsed),
        confidence=votes[code] / len(parsed),
    )
