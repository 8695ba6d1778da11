# src/core/models.py
"""
Shared vocabulary for the whole engine: documents, citations, routes,
verdicts, taxonomy codes and the audit bundle written per citation.

Everything here is an immutable pydantic model so it can be handed between
concurrent edge tasks without copying.
"""

import math
import re
from enum import Enum
from typing import Any, Dict, Iterable, List, Optional

from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.core.errors import BackendParseError, ContractViolation


class Frozen(BaseModel):
    model_config = ConfigDict(frozen=True)


# ---------------------------------------------------------
# ENUMERATIONS
# ---------------------------------------------------------

class TaxonomyCode(str, Enum):
    ATTRIBUTION = "AttributionTraceability"
    VALIDITY = "CitationValidity"
    CONTENT = "ContentMisrepresentation"
    SCOPE = "ScopeExtrapolation"
    EVIDENCE = "EvidenceCharacterization"

    @property
    def precedence_rank(self) -> int:
        return _PRECEDENCE[self]

    @property
    def display_name(self) -> str:
        return _DISPLAY[self]

    @classmethod
    def parse(cls, text: str) -> "TaxonomyCode":
        code = cls.try_parse(text)
        if code is None:
            raise ValueError(f"not a taxonomy code: {text!r}")
        return code

    @classmethod
    def try_parse(cls, text: Optional[str]) -> Optional["TaxonomyCode"]:
        if not text:
            return None
        norm = _squash(text)
        for code in cls:
            if norm in _ALIASES[code]:
                return code
        return None


_PRECEDENCE = {
    TaxonomyCode.ATTRIBUTION: 1,
    TaxonomyCode.VALIDITY: 2,
    TaxonomyCode.CONTENT: 3,
    TaxonomyCode.SCOPE: 4,
    TaxonomyCode.EVIDENCE: 5,
}

_DISPLAY = {
    TaxonomyCode.ATTRIBUTION: "Attribution & Traceability Error",
    TaxonomyCode.VALIDITY: "Citation Validity Error",
    TaxonomyCode.CONTENT: "Content Misrepresentation Error",
    TaxonomyCode.SCOPE: "Scope Extrapolation Error",
    TaxonomyCode.EVIDENCE: "Evidence Characterization Error",
}


def _squash(text: str) -> str:
    return re.sub(r"[^a-z]", "", text.lower())


_ALIASES = {
    code: {
        _squash(code.value),
        _squash(_DISPLAY[code]),
        _squash(_DISPLAY[code].replace(" Error", "")),
        _squash(code.name),
    }
    for code in TaxonomyCode
}
_ALIASES[TaxonomyCode.ATTRIBUTION] |= {"attributiontraceabilityerror", "attribution", "ghostcitation"}


def precedence_min(codes: Iterable[TaxonomyCode]) -> TaxonomyCode:
    """Return the code checked first under the dependency precedence order."""
    members = set(codes)
    if not members:
        raise ContractViolation("precedence_min needs at least one taxonomy code")
    return min(members, key=lambda c: c.precedence_rank)


class VerdictLabel(str, Enum):
    SUPPORTED = "Supported"
    MISCITATION = "Miscitation"
    UNDECIDABLE = "Undecidable"

    @classmethod
    def try_parse(cls, text: Optional[str]) -> Optional["VerdictLabel"]:
        if not text:
            return None
        norm = _squash(text)
        if norm in {"supported", "support"}:
            return cls.SUPPORTED
        if norm in {"miscitation", "miscited", "miscite"}:
            return cls.MISCITATION
        if norm in {"undecidable", "abstain", "undecided"}:
            return cls.UNDECIDABLE
        return None


class Route(str, Enum):
    ACCESSIBLE = "Accessible"
    INACCESSIBLE = "Inaccessible"
    GHOST = "Ghost"


class CitationStyle(str, Enum):
    NUMERIC = "Numeric"
    AUTHOR_YEAR = "AuthorYear"
    FOOTNOTE = "Footnote"


class BlockKind(str, Enum):
    HEADING = "heading"
    PARAGRAPH = "paragraph"
    DISPLAY_MATH = "display-math"
    LIST_ITEM = "list-item"
    CAPTION = "caption"
    BIBLIOGRAPHY_ENTRY = "bibliography-entry"


class VenueType(str, Enum):
    JOURNAL = "Journal"
    CONFERENCE = "Conference"
    PREPRINT = "Preprint"


class RelationLabel(str, Enum):
    ENTAILS = "ENTAILS"
    NEUTRAL = "NEUTRAL"
    CONTRADICTS = "CONTRADICTS"

    @property
    def vote(self) -> int:
        return {"ENTAILS": 1, "NEUTRAL": 0, "CONTRADICTS": -1}[self.value]


class AbstentionTrigger(str, Enum):
    INSUFFICIENT_WITNESSES = "InsufficientWitnesses"
    LOW_MARGIN = "LowMargin"
    LOW_CONFIDENCE = "LowConfidence"
    HIGH_DISAGREEMENT = "HighDisagreement"
    UNDERSPECIFIED_CLAIM = "UnderspecifiedClaim"


class FunnelPhase(str, Enum):
    RETRIEVAL = "Retrieval"
    RERANK = "Rerank"
    NLI_EARLY_EXIT = "NliEarlyExit"
    EXPANDED = "Expanded"
    LRM_ADJUDICATED = "LrmAdjudicated"


class AnomalyKind(str, Enum):
    HEADING_JUMP = "HeadingJump"
    NUMBERING_GAP = "NumberingGap"
    CITATION_SEQUENCE_GAP = "CitationSequenceGap"
    SUSPICIOUS_SEGMENT = "SuspiciousSegment"


# ---------------------------------------------------------
# VERDICTS
# ---------------------------------------------------------

class Verdict(Frozen):
    label: VerdictLabel
    confidence: float = Field(ge=0.0, le=1.0)
    # None when no route was reached (ambiguous alignment, inconclusive lookup)
    route: Optional[Route] = None

    @model_validator(mode="after")
    def _ghost_is_miscitation(self):
        if self.route == Route.GHOST and self.label != VerdictLabel.MISCITATION:
            raise ValueError("Ghost route forces a Miscitation verdict")
        return self


# ---------------------------------------------------------
# DOCUMENTS
# ---------------------------------------------------------

class SourceSpan(Frozen):
    page: int = 1
    start: int = 0
    end: int = 0


class Author(Frozen):
    family: str
    initials: str = ""


class BibEntry(Frozen):
    key: str
    authors: List[Author] = Field(default_factory=list)
    year: Optional[int] = None  # None means unknown, never 0
    title: str = ""
    title_tokens: List[str] = Field(default_factory=list)
    venue: str = ""
    doi: Optional[str] = None
    arxiv_id: Optional[str] = None
    entry_index: Optional[int] = None
    raw: str = ""

    @property
    def family_names(self) -> List[str]:
        return [a.family for a in self.authors]


class Block(Frozen):
    index: int
    kind: BlockKind
    text: str
    level: Optional[int] = None
    span: SourceSpan = SourceSpan()
    key: Optional[str] = None  # bibliography key for bibliography-entry blocks
    label: Optional[str] = None  # equation tag for display math


class Sentence(Frozen):
    index: int
    block_index: int
    text: str


class ExtractionAnomaly(Frozen):
    kind: AnomalyKind
    block_start: int
    block_end: int
    pages: List[int] = Field(default_factory=list)
    detail: str


class PageTranscript(Frozen):
    page_index: int = Field(ge=1)
    markdown: str
    incomplete_start: bool = False
    incomplete_end: bool = False


class ParsedDocument(Frozen):
    doc_id: str
    source_kind: str = "text"  # markup | transcript | text
    text: str = ""
    blocks: List[Block] = Field(default_factory=list)
    sentences: List[Sentence] = Field(default_factory=list)
    anchors: Dict[str, List[str]] = Field(default_factory=dict)
    anchor_sentences: Dict[str, int] = Field(default_factory=dict)
    anchor_surfaces: Dict[str, str] = Field(default_factory=dict)
    anchor_style: Optional[CitationStyle] = None
    unresolved_keys: List[str] = Field(default_factory=list)
    bibliography: List[BibEntry] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_indexes(self):
        last = -1
        for s in self.sentences:
            if s.index <= last:
                raise ValueError(f"sentence index {s.index} not strictly increasing")
            if not 0 <= s.block_index < len(self.blocks):
                raise ValueError(f"sentence {s.index} points at missing block {s.block_index}")
            last = s.index
        bib_keys = {b.key for b in self.blocks if b.kind == BlockKind.BIBLIOGRAPHY_ENTRY and b.key}
        bib_keys |= {e.key for e in self.bibliography}
        flagged = set(self.unresolved_keys)
        for occurrence, keys in self.anchors.items():
            for key in keys:
                if key not in bib_keys and key not in flagged:
                    raise ValueError(f"anchor {occurrence} key {key!r} neither resolved nor flagged")
        return self

    # helpers -------------------------------------------------

    def sentence(self, index: int) -> Optional[Sentence]:
        for s in self._by_index().get(index, []):
            return s
        return None

    def _by_index(self) -> Dict[int, List[Sentence]]:
        out: Dict[int, List[Sentence]] = {}
        for s in self.sentences:
            out.setdefault(s.index, []).append(s)
        return out

    def paragraphs(self) -> List[List[Sentence]]:
        """Maximal runs of sentences inside one non-heading, non-bibliography block."""
        groups: Dict[int, List[Sentence]] = {}
        for s in self.sentences:
            kind = self.blocks[s.block_index].kind
            if kind in (BlockKind.HEADING, BlockKind.BIBLIOGRAPHY_ENTRY):
                continue
            groups.setdefault(s.block_index, []).append(s)
        return [groups[k] for k in sorted(groups)]

    def paragraph_of(self, sentence_index: int) -> List[Sentence]:
        target = self.sentence(sentence_index)
        if target is None:
            return []
        return [s for s in self.sentences if s.block_index == target.block_index]

    def neighbors(self, sentence_index: int) -> tuple:
        """(previous sentence text, next sentence text); '' at document edges."""
        pos = {s.index: i for i, s in enumerate(self.sentences)}
        i = pos.get(sentence_index)
        if i is None:
            return "", ""
        prev_text = self.sentences[i - 1].text if i > 0 else ""
        next_text = self.sentences[i + 1].text if i + 1 < len(self.sentences) else ""
        return prev_text, next_text

    def entry(self, key: str) -> Optional[BibEntry]:
        for e in self.bibliography:
            if e.key == key:
                return e
        return None

    def heading_blocks(self) -> List[Block]:
        return [b for b in self.blocks if b.kind == BlockKind.HEADING]


# ---------------------------------------------------------
# CITATIONS
# ---------------------------------------------------------

class CitationDraft(Frozen):
    occurrence_id: str
    span_id: str
    sentence_index: int
    surface_text: str
    style: CitationStyle
    index: Optional[int] = None  # numeric / footnote marker
    marker: Optional[str] = None  # raw footnote label
    names: List[str] = Field(default_factory=list)
    year: Optional[int] = None
    year_suffix: str = ""
    anchor_keys: List[str] = Field(default_factory=list)
    from_anchor: bool = False


class CitationEdge(Frozen):
    occurrence_id: str
    span_id: str = ""
    sentence_index: int
    surface_text: str
    style: CitationStyle
    target_keys: List[str] = Field(default_factory=list)
    ambiguity_flag: bool = False
    from_anchor: bool = False
    unresolved: bool = False

    @model_validator(mode="after")
    def _keys_or_flag(self):
        if not self.target_keys and not self.ambiguity_flag:
            raise ValueError("target_keys may only be empty when ambiguity_flag is set")
        return self


# ---------------------------------------------------------
# ACCESSIBILITY
# ---------------------------------------------------------

class MetadataSnapshot(Frozen):
    title: Optional[str] = None
    authors: List[str] = Field(default_factory=list)
    abstract: Optional[str] = None
    venue: str = ""
    year: Optional[int] = None
    doi: Optional[str] = None
    arxiv_id: Optional[str] = None
    source_of_record: str = "fixture"
    record_id: Optional[str] = None
    open_access: bool = False
    full_text_ref: Optional[str] = None
    article_type: Optional[str] = None
    is_retracted: bool = False
    is_secondary_source: bool = False
    reference_signatures: List[str] = Field(default_factory=list)
    venue_type: Optional[VenueType] = None
    citation_count: int = Field(default=0, ge=0)
    field_id: Optional[str] = None
    impact_factor: Optional[float] = None
    venue_metric: Optional[float] = None
    venue_rate_2y: Optional[float] = None
    venue_rate_all: Optional[float] = None
    repository_rate: Optional[float] = None

    @model_validator(mode="after")
    def _title_or_identifier(self):
        if not (self.title or self.doi or self.arxiv_id or self.record_id):
            raise ValueError("metadata snapshot needs a title or an identifier")
        return self


class MatchReport(Frozen):
    title_similarity: float
    author_overlap: float
    abstract_present: bool
    reference_overlap: Optional[float] = None
    accepted: bool


class AccessibilityVerdict(Frozen):
    route: Route
    snapshot: Optional[MetadataSnapshot] = None
    full_text: Optional[str] = None
    equivalence: Optional[MatchReport] = None
    via: str = ""

    @model_validator(mode="after")
    def _accessible_has_text(self):
        if self.route == Route.ACCESSIBLE and not self.full_text:
            raise ValueError("Accessible requires a retrieved full text")
        if self.route == Route.INACCESSIBLE and self.snapshot is None:
            raise ValueError("Inaccessible requires a metadata snapshot")
        return self


# ---------------------------------------------------------
# MODEL OUTPUTS
# ---------------------------------------------------------

class NliDistribution(Frozen):
    p_entail: float = Field(ge=0.0, le=1.0)
    p_neutral: float = Field(ge=0.0, le=1.0)
    p_contradict: float = Field(ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _sums_to_one(self):
        total = self.p_entail + self.p_neutral + self.p_contradict
        if abs(total - 1.0) > 1e-6:
            raise ValueError(f"NLI probabilities sum to {total}")
        return self

    @classmethod
    def normalized(cls, p_entail: float, p_neutral: float, p_contradict: float) -> "NliDistribution":
        """Accept a backend distribution, renormalising small drift and rejecting the rest."""
        values = [p_entail, p_neutral, p_contradict]
        if any(v < 0 or math.isnan(v) for v in values):
            raise BackendParseError("negative or NaN NLI probability", raw=values)
        total = math.fsum(values)
        drift = abs(total - 1.0)
        if drift > 1e-3:
            raise BackendParseError(f"NLI distribution sums to {total}", raw=values)
        if drift > 1e-6:
            logger.warning("renormalising NLI distribution (sum={})", total)
        e, n, c = (v / total for v in values)
        # absorb rounding into the neutral mass
        n = 1.0 - e - c
        return cls(p_entail=e, p_neutral=max(0.0, n), p_contradict=c)


class TokenUsage(Frozen):
    input_tokens: int = Field(default=0, ge=0)
    output_tokens: int = Field(default=0, ge=0)
    call_tag: str = ""

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(
            input_tokens=self.input_tokens + other.input_tokens,
            output_tokens=self.output_tokens + other.output_tokens,
            call_tag=self.call_tag if self.call_tag == other.call_tag else "*",
        )

    @property
    def total(self) -> int:
        return self.input_tokens + self.output_tokens


# ---------------------------------------------------------
# ACSV
# ---------------------------------------------------------

class EvidenceWindow(Frozen):
    text: str
    paragraph_id: int
    sentence_indices: List[int]
    retrieval_score: float
    rerank_score: float
    nli: Optional[NliDistribution] = None
    nli_expanded: Optional[NliDistribution] = None


class FunnelTrace(Frozen):
    phase_reached: FunnelPhase
    m_entail: float = 0.0
    m_contradict: float = 0.0
    conflict: bool = False
    expanded_hypothesis: Optional[str] = None
    lrm_votes: Optional[Dict[str, int]] = None
    confidence: float = 0.0


# ---------------------------------------------------------
# ICSV
# ---------------------------------------------------------

_CITATION_MARK = re.compile(r"\[\s*\d+(?:\s*[-–,]\s*\d+)*\s*\]|\bet al\b\.?")
_Y = r"(?:1[89]|20)\d{2}[a-z]?\b"
# a year as a reference or date; bare quantities such as "2048 GPUs" are not years
_YEAR = re.compile(
    r"\([^()]*\b" + _Y + r"\s*\)"
    r"|,\s*" + _Y + r"(?=\s*(?:[);.,]|$))"
    r"|\b(?:in|since|until|by|circa)\s+" + _Y
)
_SENTENCE_BREAK = re.compile(r"[.!?]\s+[A-Z]")


class AtomicClaim(Frozen):
    claim_id: str
    text: str
    window_radius_used: int = Field(ge=1)
    occurrence_id: str
    source_id: str = "citing"

    @model_validator(mode="after")
    def _is_atomic(self):
        text = self.text.strip()
        if not text:
            raise ValueError("empty claim")
        if _SENTENCE_BREAK.search(text):
            raise ValueError("claim must be a single sentence")
        if _CITATION_MARK.search(text):
            raise ValueError("claim contains a citation marker or author reference")
        if _YEAR.search(text):
            raise ValueError("claim mentions a year")
        return self


class WitnessPaper(Frozen):
    paper_id: str
    metadata: MetadataSnapshot
    venue_type: VenueType = VenueType.JOURNAL
    citation_count: int = Field(default=0, ge=0)
    field_id: str = "unknown"
    year: Optional[int] = None
    claims: List[AtomicClaim] = Field(default_factory=list)
    mention_count: int = Field(default=1, ge=1)


class AspectCluster(Frozen):
    cluster_id: str
    cluster_name: str = ""
    aspect_summary: str = ""
    claim_ids: List[str]
    source_papers: List[str] = Field(default_factory=list)
    evidence_statement: Optional[str] = None
    support: Optional[float] = None
    gamma: Optional[float] = Field(default=None, ge=0.0, le=1.0)


class ClusterRelation(Frozen):
    cluster_id: str
    label: RelationLabel
    stability: float = Field(ge=0.0, le=1.0)
    runs: List[str] = Field(default_factory=list)

    @property
    def vote(self) -> int:
        return self.label.vote


class CommitteeVerdict(Frozen):
    relations: List[ClusterRelation]
    v_final: float = Field(ge=-1.0 - 1e-12, le=1.0 + 1e-12)
    n_eff: float = Field(ge=1.0 - 1e-9)
    entropy: float
    a_bar: float
    conf: float
    committee_size: int
    label_mass: Dict[str, float] = Field(default_factory=dict)
    verdict: Verdict
    abstention_triggers: List[AbstentionTrigger] = Field(default_factory=list)


class WitnessSummary(Frozen):
    paper_id: str
    title: str = ""
    influence: float
    c_norm: float
    v_norm: float
    fallback: bool = False
    claim_count: int = 0


class CommitteeArtifacts(Frozen):
    citing_claim: Optional[AtomicClaim] = None
    committee_size: int = 0
    witnesses: List[WitnessSummary] = Field(default_factory=list)
    claims: List[AtomicClaim] = Field(default_factory=list)
    clusters: List[AspectCluster] = Field(default_factory=list)
    relations: List[ClusterRelation] = Field(default_factory=list)
    committee_verdict: Optional[CommitteeVerdict] = None
    degraded_clustering: bool = False
    influence_fallback: bool = False


# ---------------------------------------------------------
# BUNDLES / RESULTS
# ---------------------------------------------------------

class EvidenceBundle(Frozen):
    route: Route
    citing_context: str
    accessible_evidence: Optional[List[EvidenceWindow]] = None
    committee_evidence: Optional[CommitteeArtifacts] = None
    funnel: Optional[FunnelTrace] = None
    metadata: Optional[MetadataSnapshot] = None
    notes: str = ""

    @model_validator(mode="after")
    def _one_evidence_kind(self):
        if self.route != Route.GHOST:
            has_acc = self.accessible_evidence is not None
            has_com = self.committee_evidence is not None
            if has_acc == has_com:
                raise ValueError("exactly one of accessible_evidence / committee_evidence is required")
        return self


class LabelDecision(Frozen):
    code: TaxonomyCode
    rationale: str = ""
    votes: Dict[TaxonomyCode, int]
    total_samples: int = Field(ge=1)
    confidence: float = Field(ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _consistent(self):
        if self.votes.get(self.code, 0) <= 0:
            raise ValueError("chosen code must carry at least one vote")
        if abs(self.confidence - self.votes[self.code] / self.total_samples) > 1e-12:
            raise ValueError("confidence must equal count(code) / total samples")
        return self


class VerificationResult(Frozen):
    occurrence_id: str
    citing_doc_id: str = ""
    target_key: Optional[str] = None
    verdict: Verdict
    taxonomy: Optional[LabelDecision] = None
    evidence: Optional[EvidenceBundle] = None
    token_usage: TokenUsage = TokenUsage()
    stage_log: List[str] = Field(default_factory=list)
    error: Optional[str] = None

    @model_validator(mode="after")
    def _codes_only_on_miscitation(self):
        if self.taxonomy is not None and self.verdict.label != VerdictLabel.MISCITATION:
            raise ValueError("taxonomy codes attach only to Miscitation verdicts")
        if self.verdict.route == Route.GHOST and self.taxonomy is not None:
            if self.taxonomy.code != TaxonomyCode.ATTRIBUTION:
                raise ValueError("Ghost citations carry the Attribution & Traceability code")
        return self

    @property
    def route(self) -> Optional[Route]:
        return self.verdict.route

    def to_bundle_json(self) -> Dict[str, Any]:
        """The per-citation audit bundle; field names are fixed for downstream tools."""
        return {
            "occurrence_id": self.occurrence_id,
            "route": self.verdict.route.value if self.verdict.route else None,
            "verdict": self.verdict.label.value,
            "confidence": self.verdict.confidence,
            "taxonomy_code": self.taxonomy.code.value if self.taxonomy else None,
            "evidence": {
                "citing_doc": self.citing_doc_id,
                "target_key": self.target_key,
                "bundle": self.evidence.model_dump(mode="json") if self.evidence else None,
                "taxonomy": self.taxonomy.model_dump(mode="json") if self.taxonomy else None,
                "error": self.error,
            },
            "token_usage": {
                "input_tokens": self.token_usage.input_tokens,
                "output_tokens": self.token_usage.output_tokens,
            },
            "stage_log": list(self.stage_log),
        }
