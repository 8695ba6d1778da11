from typing import List, Optional, Tuple

from loguru import logger
from pydantic import ValidationError

from src.core.embeddings import cosine
from src.core.errors import UnderspecifiedClaim
from src.core.gateway import CompletionRequest, DecodingConfig, ModelGateway
from src.core.models import AtomicClaim, CitationEdge, ParsedDocument, Sentence
from src.core.prompts import load_prompt
from src.core.text import first_sentence, normalize_text

STABILITY_COSINE = 0.95
INSUFFICIENT = "INSUFFICIENT_CONTEXT"


def context_window(doc: ParsedDocument, sentence_index: int, radius: int) -> Tuple[List[Sentence], bool]:
    """
    Sentences within `radius` of the target inside its paragraph. Once the
    radius covers the whole paragraph, the next step adds the neighbouring
    paragraphs. Returns (window, exhausted).
    """
    para = doc.paragraph_of(sentence_index)
    if not para:
        return [], True
    pos = next(i for i, s in enumerate(para) if s.index == sentence_index)
    reach = max(1, pos, len(para) - 1 - pos)
    if radius <= reach:
        lo, hi = max(0, pos - radius), min(len(para), pos + radius + 1)
        return para[lo:hi], False

    paragraphs = doc.paragraphs()
    where = next((i for i, p in enumerate(paragraphs) if p[0].block_index == para[0].block_index), None)
    if where is None:
        return para, True
    window: List[Sentence] = []
    for p in paragraphs[max(0, where - 1): where + 2]:
        window.extend(p)
    return window, True


def max_radius(doc: ParsedDocument, sentence_index: int) -> int:
    para = doc.paragraph_of(sentence_index)
    if not para:
        return 1
    pos = next(i for i, s in enumerate(para) if s.index == sentence_index)
    return max(1, pos, len(para) - 1 - pos) + 1


async def paraphrase_at(
    doc: ParsedDocument, target: Sentence, radius: int, gateway: ModelGateway
) -> Optional[str]:
    """One paraphrase attempt; None when the context is insufficient."""
    window, _ = context_window(doc, target.index, radius)
    window_text = " ".join(s.text for s in window)
    prompt = load_prompt("claim_paraphrase")
    system, user = prompt.render(W_A=window_text, s_A=target.text)
    req = CompletionRequest(
        system_text=system, user_text=user, decoding=DecodingConfig(temperature=0.0),
        call_tag="icsv/paraphrase", context={"target": target.text, "window": window_text, "radius": radius},
    )
    [(reply, _)] = await gateway.complete(req)
    reply = (reply or "").strip()
    if not reply or INSUFFICIENT in reply.upper():
        return None
    return reply


async def claims_agree(a: str, b: str, gateway: ModelGateway) -> bool:
    if normalize_text(a) == normalize_text(b):
        return True
    va, vb = await gateway.embed([a, b], call_tag="icsv/claim-stability")
    return cosine(va, vb) >= STABILITY_COSINE


async def extract_atomic_claim(
    doc: ParsedDocument,
    edge: CitationEdge,
    gateway: ModelGateway,
    claim_id: Optional[str] = None,
    source_id: str = "citing",
) -> AtomicClaim:
    """
    Widen the context one radius at a time until two consecutive radii give
    the same paraphrase; the earlier one is kept.
    """
    target = doc.sentence(edge.sentence_index)
    if target is None:
        raise UnderspecifiedClaim(edge.occurrence_id, 0)
    log = logger.bind(stage="icsv", occurrence=edge.occurrence_id)

    previous: Optional[AtomicClaim] = None
    last = max_radius(doc, target.index)
    for radius in range(1, last + 1):
        text = await paraphrase_at(doc, target, radius, gateway)
        if text is None:
            log.debug("radius {}: insufficient context", radius)
            previous = None
            continue
        text = first_sentence(text)
        try:
            claim = AtomicClaim(
                claim_id=claim_id or edge.occurrence_id, text=text, window_radius_used=radius,
                occurrence_id=edge.occurrence_id, source_id=source_id,
            )
        except ValidationError as e:
            log.warning("radius {}: paraphrase rejected ({})", radius, e.errors()[0]["msg"])
            previous = None
            continue
        if previous is not None and await claims_agree(previous.text, claim.text, gateway):
            return previous
        previous = claim
    raise UnderspecifiedClaim(edge.occurrence_id, last)


async def collapse_near_duplicates(claims: List[AtomicClaim], gateway: ModelGateway) -> List[AtomicClaim]:
    """Drop claims within STABILITY_COSINE of an earlier claim."""
    if len(claims) < 2:
        return list(claims)
    vectors = await gateway.embed([c.text for c in claims], call_tag="icsv/dedup")
    kept: List[int] = []
    for i, v in enumerate(vectors):
        if all(cosine(v, vectors[j]) < STABILITY_COSINE for j in kept):
            kept.append(i)
    return [claims[i] for i in kept]
