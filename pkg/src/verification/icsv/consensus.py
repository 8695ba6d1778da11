# src/verification/icsv/consensus.py
"""
Credibility-weighted voting over aspect clusters.

    gamma_j  = Support_j / sum Support          (uniform when every support is 0)
    v_final  = sum v_j gamma_j
    n_eff    = 1 / sum gamma_j^2
    H        = -sum_l w_l log(w_l + eps) / log 3
    a_bar    = sum gamma_j a_j
    conf     = |v_final| * min(1, n_eff / K_min) * (1 - H) * a_bar
"""

import asyncio
import json
import math
import re
from collections import Counter
from typing import Dict, List, Mapping, Optional, Tuple

from loguru import logger

from src.core.gateway import CompletionRequest, DecodingConfig, ModelGateway
from src.core.models import (
    AbstentionTrigger,
    AspectCluster,
    AtomicClaim,
    ClusterRelation,
    CommitteeVerdict,
    RelationLabel,
    Route,
    Verdict,
    VerdictLabel,
)
from src.core.prompts import load_prompt

T_SUPPORT = 0.3
K_MIN = 6
CONF_MIN = 0.5
H_MAX = 0.6
EPS = 1e-12
RELATION_SEEDS = (0, 1, 2)


# ---------------------------------------------------------
# CREDIBILITY
# ---------------------------------------------------------

def assign_credibility(clusters: List[AspectCluster], influences: Mapping[str, float]) -> List[AspectCluster]:
    """Support counts each witness paper once per cluster, however many claims it contributed."""
    if not clusters:
        return []
    supports = [sum(influences.get(p, 0.0) for p in dict.fromkeys(c.source_papers)) for c in clusters]
    total = math.fsum(supports)
    if total <= 0:
        gammas = [1.0 / len(clusters)] * len(clusters)
    else:
        gammas = [s / total for s in supports]
    return [c.model_copy(update={"support": s, "gamma": g}) for c, s, g in zip(clusters, supports, gammas)]


# ---------------------------------------------------------
# RELATIONS
# ---------------------------------------------------------

def parse_relation(reply: str) -> Optional[RelationLabel]:
    text = (reply or "").strip()
    start, end = text.find("{"), text.rfind("}")
    if start >= 0 and end > start:
        try:
            label = str(json.loads(text[start:end + 1]).get("label", "")).strip().upper()
            if label in RelationLabel.__members__:
                return RelationLabel[label]
        except (json.JSONDecodeError, AttributeError):
            pass
    m = re.search(r"\b(ENTAILS|CONTRADICTS|NEUTRAL)\b", text.upper())
    return RelationLabel[m.group(1)] if m else None


async def classify_relation(
    claim: AtomicClaim, evidence: str, gateway: ModelGateway, cluster_id: str = ""
) -> ClusterRelation:
    """Three T=0 runs with distinct seeds; majority label, stability = share of runs agreeing."""
    prompt = load_prompt("relation_classification")
    system, user = prompt.render(c_A=claim.text, e_j=evidence)

    async def run(seed: int) -> RelationLabel:
        req = CompletionRequest(
            system_text=system, user_text=user, decoding=DecodingConfig(temperature=0.0, seed=seed),
            call_tag="icsv/relation", context={"claim": claim.text, "evidence": evidence},
        )
        [(reply, _)] = await gateway.complete(req)
        label = parse_relation(reply)
        if label is None:
            logger.bind(stage="icsv").warning("unparseable relation run (seed {}); counted as NEUTRAL", seed)
            return RelationLabel.NEUTRAL
        return label

    runs = list(await asyncio.gather(*(run(s) for s in RELATION_SEEDS)))
    counts = Counter(runs).most_common()
    label, top = counts[0]
    if len(counts) > 1 and counts[1][1] == top:
        label = RelationLabel.NEUTRAL
        top = sum(1 for r in runs if r == label)
    return ClusterRelation(
        cluster_id=cluster_id, label=label, stability=top / len(runs), runs=[r.value for r in runs],
    )


async def classify_all(
    claim: AtomicClaim, clusters: List[AspectCluster], gateway: ModelGateway
) -> List[ClusterRelation]:
    return list(await asyncio.gather(
        *(classify_relation(claim, c.evidence_statement or c.aspect_summary, gateway, c.cluster_id) for c in clusters)
    ))


# ---------------------------------------------------------
# AGGREGATION / CALIBRATION
# ---------------------------------------------------------

def _paired(clusters: List[AspectCluster], relations: List[ClusterRelation]) -> List[Tuple[float, ClusterRelation]]:
    by_id: Dict[str, ClusterRelation] = {r.cluster_id: r for r in relations}
    if len(by_id) != len(clusters) or any(c.cluster_id not in by_id for c in clusters):
        raise ValueError("exactly one relation per cluster is required")
    return [(c.gamma or 0.0, by_id[c.cluster_id]) for c in clusters]


def consensus_label(v_final: float, threshold: float = T_SUPPORT) -> VerdictLabel:
    if v_final > threshold:
        return VerdictLabel.SUPPORTED
    if v_final < -threshold:
        return VerdictLabel.MISCITATION
    return VerdictLabel.UNDECIDABLE


def aggregate_consensus(
    clusters: List[AspectCluster], relations: List[ClusterRelation]
) -> Tuple[float, VerdictLabel]:
    v_final = sum(g * r.vote for g, r in _paired(clusters, relations))
    return v_final, consensus_label(v_final)


def label_mass(clusters: List[AspectCluster], relations: List[ClusterRelation]) -> Dict[str, float]:
    mass = {label.value: 0.0 for label in RelationLabel}
    for g, r in _paired(clusters, relations):
        mass[r.label.value] += g
    return mass


def normalized_entropy(mass: Mapping[str, float]) -> float:
    h = -sum(w * math.log(w + EPS) for w in mass.values()) / math.log(3)
    return min(1.0, max(0.0, h))


def calibrate_confidence(
    clusters: List[AspectCluster],
    relations: List[ClusterRelation],
    v_final: float,
    committee_size: int,
    k_min: int = K_MIN,
) -> CommitteeVerdict:
    pairs = _paired(clusters, relations)
    gammas = [g for g, _ in pairs]
    n_eff = 1.0 / sum(g * g for g in gammas)
    mass = label_mass(clusters, relations)
    entropy = normalized_entropy(mass)
    a_bar = sum(g * r.stability for g, r in pairs)
    conf = abs(v_final) * min(1.0, n_eff / k_min) * (1.0 - entropy) * a_bar

    triggers: List[AbstentionTrigger] = []
    if committee_size < k_min:
        triggers.append(AbstentionTrigger.INSUFFICIENT_WITNESSES)
    if -T_SUPPORT <= v_final <= T_SUPPORT:
        triggers.append(AbstentionTrigger.LOW_MARGIN)
    if conf < CONF_MIN:
        triggers.append(AbstentionTrigger.LOW_CONFIDENCE)
    if entropy > H_MAX:
        triggers.append(AbstentionTrigger.HIGH_DISAGREEMENT)

    label = VerdictLabel.UNDECIDABLE if triggers else consensus_label(v_final)
    return CommitteeVerdict(
        relations=[r for _, r in pairs],
        v_final=v_final,
        n_eff=n_eff,
        entropy=entropy,
        a_bar=a_bar,
        conf=conf,
        committee_size=committee_size,
        label_mass=mass,
        verdict=Verdict(label=label, confidence=min(1.0, max(0.0, conf)), route=Route.INACCESSIBLE),
        abstention_triggers=triggers,
    )


def abstained(committee_size: int, trigger: AbstentionTrigger) -> CommitteeVerdict:
    """Committee verdict for cases that never reach voting."""
    return CommitteeVerdict(
        relations=[], v_final=0.0, n_eff=1.0, entropy=0.0, a_bar=0.0, conf=0.0,
        committee_size=committee_size,
        verdict=Verdict(label=VerdictLabel.UNDECIDABLE, confidence=0.0, route=Route.INACCESSIBLE),
        abstention_triggers=[trigger],
    )


def dominant_voters(clusters: List[AspectCluster]) -> int:
    """Witnesses behind the highest-credibility aspect."""
    if not clusters:
        return 0
    top = max(clusters, key=lambda c: (c.gamma or 0.0, len(c.source_papers)))
    return len(set(top.source_papers))
