# src/verification/acsv.py
"""
Full-text verification funnel.

    I    dense retrieval       cosine(citing sentence, paragraph) → top K
    II   cross-encoder rerank  top N paragraphs → sliding windows of W sentences
    III  NLI gate              early exit above tau_high, else expand the
                               hypothesis with neighbouring sentences and retry
    IV   LRM adjudication      M samples, majority vote, safety threshold
"""

import asyncio
import re
from collections import Counter
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

from loguru import logger
from pydantic import BaseModel, Field, model_validator

from src.core.embeddings import cosine
from src.core.errors import ContractViolation
from src.core.gateway import CompletionRequest, DecodingConfig, ModelGateway
from src.core.models import (
    CitationEdge,
    EvidenceBundle,
    EvidenceWindow,
    FunnelPhase,
    FunnelTrace,
    ParsedDocument,
    Route,
    Sentence,
    Verdict,
    VerdictLabel,
    VerificationResult,
)
from src.core.prompts import load_prompt
from src.core.text import strip_citations


class FunnelConfig(BaseModel):
    top_k: int = Field(default=10, ge=1)
    focus_n: int = Field(default=3, ge=1)
    window_size: int = Field(default=3, ge=1)
    tau_high: float = Field(default=0.9, gt=0.0, lt=1.0)
    sc_samples: int = Field(default=5, ge=1)
    sc_temperature: float = Field(default=0.7, ge=0.0)
    sc_top_p: float = Field(default=0.95, gt=0.0, le=1.0)
    safety_threshold: float = Field(default=0.6, gt=0.0, le=1.0)

    @model_validator(mode="after")
    def _focus_within_top_k(self):
        if self.focus_n > self.top_k:
            raise ValueError("focus_n must not exceed top_k")
        return self


@dataclass
class RankedParagraph:
    paragraph_id: int  # block index of the paragraph
    order: int  # position in the document
    sentences: List[Sentence]
    retrieval_score: float
    rerank_score: float = 0.0

    @property
    def text(self) -> str:
        return " ".join(s.text for s in self.sentences)


@dataclass
class GateOutcome:
    verdict: Optional[Verdict]
    trace: FunnelTrace
    windows: List[EvidenceWindow]
    expanded_hypothesis: Optional[str] = None

    @property
    def early_exit(self) -> bool:
        return self.verdict is not None


# ---------------------------------------------------------
# PHASE I / II
# ---------------------------------------------------------

async def retrieve_candidates(
    citing_sentence: str, cited_doc: ParsedDocument, gateway: ModelGateway, config: FunnelConfig
) -> List[RankedParagraph]:
    paragraphs = cited_doc.paragraphs()
    if not paragraphs:
        raise ContractViolation(f"cited document {cited_doc.doc_id} has no paragraphs")
    texts = [" ".join(s.text for s in p) for p in paragraphs]
    vectors = await gateway.embed([citing_sentence] + texts, call_tag="acsv/retrieve")
    query, para_vecs = vectors[0], vectors[1:]
    ranked = [
        RankedParagraph(paragraph_id=p[0].block_index, order=i, sentences=p, retrieval_score=cosine(query, v))
        for i, (p, v) in enumerate(zip(paragraphs, para_vecs))
    ]
    ranked.sort(key=lambda r: (-r.retrieval_score, r.order))
    return ranked[: min(config.top_k, len(ranked))]


def slide_windows(paragraph: RankedParagraph, size: int) -> List[EvidenceWindow]:
    sents = paragraph.sentences
    spans = [sents] if len(sents) <= size else [sents[i:i + size] for i in range(len(sents) - size + 1)]
    return [
        EvidenceWindow(
            text=" ".join(s.text for s in span),
            paragraph_id=paragraph.paragraph_id,
            sentence_indices=[s.index for s in span],
            retrieval_score=paragraph.retrieval_score,
            rerank_score=paragraph.rerank_score,
        )
        for span in spans
    ]


async def rerank_and_window(
    citing_sentence: str, candidates: List[RankedParagraph], gateway: ModelGateway, config: FunnelConfig
) -> Tuple[List[RankedParagraph], List[EvidenceWindow]]:
    """(focus paragraphs, their windows)."""
    if not candidates:
        raise ContractViolation("rerank needs at least one candidate paragraph")
    scores = await asyncio.gather(
        *(gateway.score_pair(citing_sentence, c.text, call_tag="acsv/rerank") for c in candidates)
    )
    for c, s in zip(candidates, scores):
        c.rerank_score = float(s)
    focus = sorted(candidates, key=lambda c: (-c.rerank_score, c.order))[: config.focus_n]
    windows = [w for p in focus for w in slide_windows(p, config.window_size)]
    return focus, windows


# ---------------------------------------------------------
# PHASE III
# ---------------------------------------------------------

def _decide(m_e: float, m_c: float, tau: float) -> Tuple[Optional[VerdictLabel], float, bool]:
    """(label or None, triggering probability, conflict flag)."""
    if m_e > tau and m_c > tau:
        if m_e == m_c:
            return None, 0.0, True
        return (VerdictLabel.SUPPORTED, m_e, True) if m_e > m_c else (VerdictLabel.MISCITATION, m_c, True)
    if m_e > tau:
        return VerdictLabel.SUPPORTED, m_e, False
    if m_c > tau:
        return VerdictLabel.MISCITATION, m_c, False
    return None, 0.0, False


def expand_hypothesis(citing_sentence: str, neighbors: Tuple[str, str]) -> str:
    prev, nxt = neighbors
    return " ".join(part for part in (prev or "", citing_sentence, nxt or "") if part)


async def nli_gate(
    windows: List[EvidenceWindow],
    citing_sentence: str,
    cited_neighbors: Tuple[str, str],
    gateway: ModelGateway,
    config: FunnelConfig,
) -> GateOutcome:
    if not windows:
        raise ContractViolation("nli_gate needs at least one window")
    log = logger.bind(stage="acsv")

    first = await asyncio.gather(*(gateway.nli_classify(w.text, citing_sentence, call_tag="acsv/nli") for w in windows))
    windows = [w.model_copy(update={"nli": d}) for w, d in zip(windows, first)]
    m_e = max(d.p_entail for d in first)
    m_c = max(d.p_contradict for d in first)
    label, p, conflict = _decide(m_e, m_c, config.tau_high)
    if conflict:
        log.warning("entailment {:.3f} and contradiction {:.3f} both exceed tau_high", m_e, m_c)
    if label is not None:
        trace = FunnelTrace(phase_reached=FunnelPhase.NLI_EARLY_EXIT, m_entail=m_e, m_contradict=m_c,
                            conflict=conflict, confidence=p)
        return GateOutcome(Verdict(label=label, confidence=p, route=Route.ACCESSIBLE), trace, windows)

    expanded = expand_hypothesis(citing_sentence, cited_neighbors)
    second = await asyncio.gather(*(gateway.nli_classify(w.text, expanded, call_tag="acsv/nli") for w in windows))
    windows = [w.model_copy(update={"nli_expanded": d}) for w, d in zip(windows, second)]
    m_e = max(d.p_entail for d in second)
    m_c = max(d.p_contradict for d in second)
    label, p, second_conflict = _decide(m_e, m_c, config.tau_high)
    conflict = conflict or second_conflict
    if second_conflict:
        log.warning("expanded pass: entailment {:.3f} and contradiction {:.3f} both exceed tau_high", m_e, m_c)
    trace = FunnelTrace(
        phase_reached=FunnelPhase.EXPANDED, m_entail=m_e, m_contradict=m_c, conflict=conflict,
        expanded_hypothesis=expanded, confidence=p,
    )
    if label is not None:
        return GateOutcome(Verdict(label=label, confidence=p, route=Route.ACCESSIBLE), trace, windows, expanded)
    return GateOutcome(None, trace, windows, expanded)


# ---------------------------------------------------------
# PHASE IV
# ---------------------------------------------------------

_LABEL_LINE = re.compile(r"^[\s*_#>`\-]*(supported|miscitation|undecidable)[\s*_.`:]*$", re.I)


def parse_lrm_label(reply: str) -> Optional[VerdictLabel]:
    """The last line that holds exactly one label; None when there is none."""
    for line in reversed((reply or "").strip().splitlines()):
        m = _LABEL_LINE.match(line)
        if m:
            return VerdictLabel.try_parse(m.group(1))
    return None


def majority_verdict(votes: List[VerdictLabel], safety_threshold: float) -> Tuple[VerdictLabel, float]:
    """Strict majority or Undecidable; below the safety threshold the answer is Undecidable too."""
    if not votes:
        return VerdictLabel.UNDECIDABLE, 0.0
    counts = Counter(votes).most_common()
    top_label, top_count = counts[0]
    confidence = top_count / len(votes)
    if len(counts) > 1 and counts[1][1] == top_count:
        return VerdictLabel.UNDECIDABLE, confidence
    if confidence < safety_threshold:
        return VerdictLabel.UNDECIDABLE, confidence
    return top_label, confidence


async def adjudicate_deep(
    expanded_hypothesis: str,
    focus_paragraphs: List[RankedParagraph],
    gateway: ModelGateway,
    config: FunnelConfig,
    seed: int = 0,
) -> Tuple[Verdict, Dict[str, int]]:
    prompt = load_prompt("lrm_adjudication")
    passages = "\n\n".join(f"[{i}] {p.text}" for i, p in enumerate(focus_paragraphs, start=1))
    system, user = prompt.render(hypothesis=expanded_hypothesis, passages=passages)
    req = CompletionRequest(
        system_text=system,
        user_text=user,
        decoding=DecodingConfig(
            temperature=config.sc_temperature, nucleus_mass=config.sc_top_p,
            sample_count=config.sc_samples, seed=seed,
        ),
        call_tag="acsv/lrm",
        context={"hypothesis": expanded_hypothesis},
    )
    replies = await gateway.complete(req)
    parsed = [parse_lrm_label(text) for text, _ in replies]
    unparseable = sum(1 for p in parsed if p is None)
    if unparseable:
        logger.bind(stage="acsv").warning("{} of {} LRM samples had no label line", unparseable, len(parsed))

    tally = {label.value: 0 for label in VerdictLabel}
    for p in parsed:
        tally[(p or VerdictLabel.UNDECIDABLE).value] += 1
    if unparseable == len(parsed):
        return Verdict(label=VerdictLabel.UNDECIDABLE, confidence=0.0, route=Route.ACCESSIBLE), tally

    votes = [p or VerdictLabel.UNDECIDABLE for p in parsed]
    label, confidence = majority_verdict(votes, config.safety_threshold)
    return Verdict(label=label, confidence=confidence, route=Route.ACCESSIBLE), tally


# ---------------------------------------------------------
# ORCHESTRATION
# ---------------------------------------------------------

def citing_sentence_of(edge: CitationEdge, citing_doc: ParsedDocument) -> str:
    s = citing_doc.sentence(edge.sentence_index)
    return s.text if s else edge.surface_text


async def verify_accessible(
    edge: CitationEdge,
    cited_doc: ParsedDocument,
    citing_doc: ParsedDocument,
    gateway: ModelGateway,
    config: Optional[FunnelConfig] = None,
    seed: int = 0,
    target_key: Optional[str] = None,
) -> VerificationResult:
    config = config or FunnelConfig()
    log = logger.bind(stage="acsv", occurrence=edge.occurrence_id)
    stage_log: List[str] = []

    raw_sentence = citing_sentence_of(edge, citing_doc)
    hypothesis = strip_citations(raw_sentence) or raw_sentence
    prev, nxt = citing_doc.neighbors(edge.sentence_index)
    neighbors = (strip_citations(prev), strip_citations(nxt))

    candidates = await retrieve_candidates(hypothesis, cited_doc, gateway, config)
    stage_log.append(f"retrieval: {len(candidates)} paragraphs")
    focus, windows = await rerank_and_window(hypothesis, candidates, gateway, config)
    stage_log.append(f"rerank: {len(focus)} focus paragraphs, {len(windows)} windows")

    gate = await nli_gate(windows, hypothesis, neighbors, gateway, config)
    stage_log.append(
        f"nli: m_entail={gate.trace.m_entail:.3f} m_contradict={gate.trace.m_contradict:.3f}"
        f" phase={gate.trace.phase_reached.value}"
    )
    trace = gate.trace
    if gate.early_exit:
        verdict = gate.verdict
    else:
        verdict, tally = await adjudicate_deep(gate.expanded_hypothesis, focus, gateway, config, seed=seed)
        trace = trace.model_copy(update={
            "phase_reached": FunnelPhase.LRM_ADJUDICATED, "lrm_votes": tally, "confidence": verdict.confidence,
        })
        stage_log.append(f"lrm: votes={tally} → {verdict.label.value} ({verdict.confidence:.2f})")
    log.info("{} via {}", verdict.label.value, trace.phase_reached.value)

    bundle = EvidenceBundle(
        route=Route.ACCESSIBLE,
        citing_context=raw_sentence,
        accessible_evidence=gate.windows,
        funnel=trace,
    )
    return VerificationResult(
        occurrence_id=edge.occurrence_id,
        citing_doc_id=citing_doc.doc_id,
        target_key=target_key or (edge.target_keys[0] if edge.target_keys else None),
        verdict=verdict,
        evidence=bundle,
        stage_log=stage_log,
    )
