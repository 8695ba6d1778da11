import asyncio
import json
import re
from typing import Any, Dict, List, Optional, Tuple

from loguru import logger

from src.core.gateway import CompletionRequest, DecodingConfig, ModelGateway
from src.core.models import AspectCluster, AtomicClaim, MetadataSnapshot
from src.core.prompts import load_prompt
from src.core.text import collapse_ws, first_sentence

MAX_NAME_WORDS = 8


def _json_object(reply: str) -> Optional[Dict[str, Any]]:
    text = (reply or "").strip()
    text = re.sub(r"^```(?:json)?\s*|\s*```$", "", text)
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end <= start:
        return None
    try:
        data = json.loads(text[start:end + 1])
    except json.JSONDecodeError:
        return None
    return data if isinstance(data, dict) else None


def validate_partition(data: Optional[Dict[str, Any]], n: int) -> Tuple[Optional[List[Dict[str, Any]]], str]:
    """(clusters, problem). Every id 1..n must appear in exactly one non-empty cluster."""
    if data is None or not isinstance(data.get("clusters"), list):
        return None, "reply is not the clusters JSON object"
    seen: Dict[int, str] = {}
    clusters = []
    for i, c in enumerate(data["clusters"], start=1):
        if not isinstance(c, dict):
            return None, f"cluster {i} is not an object"
        try:
            ids = [int(x) for x in c.get("claim_ids", [])]
        except (TypeError, ValueError):
            return None, f"cluster {i} has non-integer claim ids"
        if not ids:
            return None, f"cluster {i} is empty"
        cid = str(c.get("cluster_id") or f"C{i}")
        for x in ids:
            if not 1 <= x <= n:
                return None, f"claim id {x} does not exist"
            if x in seen:
                return None, f"claim {x} appears in {seen[x]} and {cid}"
            seen[x] = cid
        clusters.append({**c, "cluster_id": cid, "claim_ids": ids})
    missing = sorted(set(range(1, n + 1)) - set(seen))
    if missing:
        return None, f"claims {missing} are not assigned"
    return clusters, ""


def _build(raw: List[Dict[str, Any]], claims: List[AtomicClaim]) -> List[AspectCluster]:
    out = []
    for c in raw:
        members = [claims[i - 1] for i in c["claim_ids"]]
        sources: List[str] = []
        for m in members:
            if m.source_id not in sources:
                sources.append(m.source_id)
        name = " ".join(str(c.get("cluster_name") or "").split()[:MAX_NAME_WORDS])
        out.append(AspectCluster(
            cluster_id=c["cluster_id"],
            cluster_name=name,
            aspect_summary=first_sentence(str(c.get("aspect_summary") or "")),
            claim_ids=[m.claim_id for m in members],
            source_papers=sources,
        ))
    return out


def singleton_clusters(claims: List[AtomicClaim]) -> List[AspectCluster]:
    raw = [{"cluster_id": f"C{i}", "cluster_name": "", "aspect_summary": c.text, "claim_ids": [i]}
           for i, c in enumerate(claims, start=1)]
    return _build(raw, claims)


async def cluster_claims(
    claims: List[AtomicClaim], target: MetadataSnapshot, gateway: ModelGateway
) -> Tuple[List[AspectCluster], bool]:
    """(clusters, degraded). Degraded means the singleton fallback was used."""
    if not claims:
        return [], False
    if len(claims) == 1:
        return singleton_clusters(claims), False

    prompt = load_prompt("semantic_clustering")
    listing = "\n".join(f"[{i}] {c.text}" for i, c in enumerate(claims, start=1))
    system, user = prompt.render(
        title_B=target.title or "unknown", year_B=target.year or "unknown", venue_B=target.venue or "unknown",
        claims=listing,
    )
    context = {"claims": [{"id": i, "text": c.text} for i, c in enumerate(claims, start=1)]}

    problem = ""
    for attempt in range(2):
        text = user if attempt == 0 else f"{user}\n\nYour previous answer was invalid: {problem}. Return a valid partition."
        req = CompletionRequest(
            system_text=system, user_text=text, decoding=DecodingConfig(temperature=0.0),
            call_tag="icsv/cluster", context=context,
        )
        [(reply, _)] = await gateway.complete(req)
        raw, problem = validate_partition(_json_object(reply), len(claims))
        if raw is not None:
            return _build(raw, claims), False
        logger.bind(stage="icsv").warning("clustering attempt {} invalid: {}", attempt + 1, problem)

    logger.bind(stage="icsv").warning("clustering fell back to singleton clusters")
    return singleton_clusters(claims), True


async def distill_evidence(
    cluster: AspectCluster, claims_by_id: Dict[str, AtomicClaim], target: MetadataSnapshot, gateway: ModelGateway
) -> str:
    members = [claims_by_id[cid] for cid in cluster.claim_ids]
    if len(members) == 1:
        return members[0].text

    prompt = load_prompt("evidence_distillation")
    system, user = prompt.render(
        title_B=target.title or "unknown", cluster_id=cluster.cluster_id, cluster_name=cluster.cluster_name,
        claims="\n".join(f"- {m.text}" for m in members),
    )
    req = CompletionRequest(
        system_text=system, user_text=user, decoding=DecodingConfig(temperature=0.0),
        call_tag="icsv/distill", context={"claims": [m.text for m in members]},
    )
    [(reply, _)] = await gateway.complete(req)
    reply = (reply or "").strip()
    statement = first_sentence(reply)
    if statement != collapse_ws(reply):
        logger.bind(stage="icsv").warning("distillation for {} returned several sentences; kept the first", cluster.cluster_id)
    return statement or members[0].text


async def distill_all(
    clusters: List[AspectCluster], claims: List[AtomicClaim], target: MetadataSnapshot, gateway: ModelGateway
) -> List[AspectCluster]:
    by_id = {c.claim_id: c for c in claims}
    statements = await asyncio.gather(*(distill_evidence(c, by_id, target, gateway) for c in clusters))
    return [c.model_copy(update={"evidence_statement": s}) for c, s in zip(clusters, statements)]
