# src/core/llm_client.py
"""
Model backends behind the gateway.

StubBackend   deterministic, fixture driven, offline (tests and desk runs)
OpenAIBackend OpenAI-compatible chat + embeddings (vision via data URIs)
HFRouterBackend Hugging Face router: chat, NLI and cross-encoder inference
"""

import asyncio
import base64
import fnmatch
import json
import mimetypes
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import requests
from loguru import logger
from pydantic import BaseModel, Field, model_validator

from src.core.config import BackendSettings
from src.core.embeddings import HASH_DIM, hashed_vector, text_cosine
from src.core.errors import BackendParseError, ContractViolation, TransportError
from src.core.text import normalize_text, strip_citations


# ---------------------------------------------------------
# REQUEST TYPES
# ---------------------------------------------------------

class DecodingConfig(BaseModel):
    temperature: float = Field(default=0.0, ge=0.0)
    nucleus_mass: float = Field(default=1.0, gt=0.0, le=1.0)
    sample_count: int = Field(default=1, ge=1)
    seed: int = 0


class CompletionRequest(BaseModel):
    system_text: str
    user_text: str
    image_parts: List[str] = Field(default_factory=list)
    decoding: DecodingConfig = DecodingConfig()
    call_tag: str
    fixture_id: Optional[str] = None
    # structured hints; the stub reads them, real backends ignore them
    context: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _tag_present(self):
        if not self.call_tag:
            raise ValueError("call_tag is required")
        return self


@dataclass(frozen=True)
class Completion:
    text: str
    input_tokens: int
    output_tokens: int


def count_tokens(*texts: str) -> int:
    """Whitespace-token proxy used wherever a provider does not report counts."""
    return sum(len(t.split()) for t in texts if t)


# ---------------------------------------------------------
# STUB
# ---------------------------------------------------------

_MARKER = re.compile(r"\{\{\s*(entail|contradict|neutral)\s*:\s*([0-9.]+)\s*\}\}", re.I)
_TRIPLE = re.compile(r"\{\{\s*nli\s*:\s*([0-9.]+)\s*,\s*([0-9.]+)\s*,\s*([0-9.]+)\s*\}\}", re.I)


class StubBackend:
    """
    Pure function of (request, seed). Rules are matched in order; the first
    match answers. Generation rules look like
        {"tag": "acsv/*", "fixture_id": "...", "contains": "...", "responses": [...]}
    NLI rules:    {"kind": "nli", "premise_contains": "...", "hypothesis_contains": "...",
                   "distribution": [e, n, c]}
    Rerank rules: {"kind": "rerank", "query_contains": "...", "passage_contains": "...", "score": s}
    """

    kind = "stub"

    def __init__(self, settings: BackendSettings, rules: Optional[List[Dict[str, Any]]] = None):
        self.settings = settings
        self.rules: List[Dict[str, Any]] = []
        if settings.fixtures_dir:
            self.rules.extend(load_fixture_rules(settings.fixtures_dir))
        if rules:
            self.rules.extend(rules)

    def add_rule(self, rule: Dict[str, Any]):
        self.rules.append(rule)

    # generation ---------------------------------------------

    async def complete(self, request: CompletionRequest, model: Optional[str]) -> List[Completion]:
        n = request.decoding.sample_count
        responses = self._match_generation(request)
        if responses is None:
            responses = [self._default_reply(request)]

        out = []
        in_tokens = count_tokens(request.system_text, request.user_text)
        for j in range(n):
            if request.decoding.temperature == 0:
                idx = request.decoding.seed % len(responses)
            else:
                idx = (request.decoding.seed + j) % len(responses)
            text = responses[idx]
            out.append(Completion(text=text, input_tokens=in_tokens, output_tokens=count_tokens(text)))
        return out

    def _match_generation(self, request: CompletionRequest) -> Optional[List[str]]:
        for rule in self.rules:
            if rule.get("kind", "generation") != "generation":
                continue
            if request.fixture_id or rule.get("fixture_id"):
                if rule.get("fixture_id") != request.fixture_id:
                    continue
            if not fnmatch.fnmatchcase(request.call_tag, rule.get("tag", "*")):
                continue
            needles = rule.get("contains") or []
            if isinstance(needles, str):
                needles = [needles]
            haystack = request.user_text.lower()
            if any(n.lower() not in haystack for n in needles):
                continue
            responses = rule.get("responses") or []
            if responses:
                return [str(r) for r in responses]
        return None

    def _default_reply(self, request: CompletionRequest) -> str:
        tag = request.call_tag
        ctx = request.context

        if tag.startswith("dpcm/transcribe"):
            return _sidecar_transcript(request.image_parts, request.decoding.seed)
        if tag.startswith("dpcm/boundary"):
            return f"PREV_FIXED:\n{ctx.get('prev', '')}\n---\nNEXT_FIXED:\n{ctx.get('next', '')}"
        if tag.startswith("dpcm/audit"):
            return "OK\nThe segment reads as continuous text."
        if tag.startswith("dpcm/disambiguate"):
            return "ABSTAIN"
        if tag.startswith("icsv/paraphrase"):
            return strip_citations(ctx.get("target", ""))
        if tag.startswith("icsv/cluster"):
            return json.dumps(_group_identical(ctx.get("claims", [])))
        if tag.startswith("icsv/distill"):
            claims = ctx.get("claims") or [""]
            return claims[0]
        if tag.startswith("icsv/relation"):
            sim = text_cosine(ctx.get("claim", ""), ctx.get("evidence", ""))
            label = "ENTAILS" if sim >= 0.8 else "NEUTRAL"
            return json.dumps({"label": label, "justification": f"surface similarity {sim:.2f}."})
        if tag.startswith("acsv/lrm"):
            return "The passages do not settle the question.\nUNDECIDABLE"
        if tag.startswith("taxonomy"):
            return (
                "CATEGORY: Content Misrepresentation Error\n"
                "RATIONALE: The cited source does not say what the citing sentence claims."
            )
        if tag.startswith("grader"):
            sim = text_cosine(ctx.get("gold_explanation", ""), ctx.get("pred_explanation", ""))
            return "CORRECT" if sim >= 0.5 else "INCORRECT"
        if tag.startswith("baseline"):
            return "LABEL: SUPPORTED\nEXPLANATION: The cited paper states the attributed finding."
        return ""

    # embeddings / scoring ------------------------------------

    async def embed(self, texts: Sequence[str], model: Optional[str]) -> List[List[float]]:
        return [hashed_vector(t, HASH_DIM).tolist() for t in texts]

    async def score_pair(self, query: str, passage: str, model: Optional[str]) -> float:
        for rule in self.rules:
            if rule.get("kind") != "rerank":
                continue
            if _contains(query, rule.get("query_contains")) and _contains(passage, rule.get("passage_contains")):
                return float(rule["score"])
        return text_cosine(query, passage)

    async def nli(self, premise: str, hypothesis: str, model: Optional[str]) -> Tuple[float, float, float]:
        for rule in self.rules:
            if rule.get("kind") != "nli":
                continue
            if _contains(premise, rule.get("premise_contains")) and _contains(hypothesis, rule.get("hypothesis_contains")):
                e, n, c = rule["distribution"]
                return float(e), float(n), float(c)

        m = _TRIPLE.search(premise)
        if m:
            return float(m.group(1)), float(m.group(2)), float(m.group(3))
        m = _MARKER.search(premise)
        if m:
            label, p = m.group(1).lower(), float(m.group(2))
            rest = 1.0 - p
            if label == "entail":
                return p, rest, 0.0
            if label == "contradict":
                return 0.0, rest, p
            return rest / 2, p, rest / 2

        if normalize_text(premise) == normalize_text(hypothesis):
            return 0.96, 0.03, 0.01
        p_e = 0.6 * max(0.0, text_cosine(premise, hypothesis))
        p_c = 0.05
        return p_e, 1.0 - p_e - p_c, p_c


def _contains(text: str, needle: Optional[str]) -> bool:
    return not needle or needle.lower() in text.lower()


def _group_identical(claims: List[Dict[str, Any]]) -> Dict[str, Any]:
    groups: Dict[str, List[int]] = {}
    order: List[str] = []
    for item in claims:
        norm = normalize_text(item["text"])
        if norm not in groups:
            groups[norm] = []
            order.append(norm)
        groups[norm].append(int(item["id"]))
    clusters = []
    for i, norm in enumerate(order, start=1):
        clusters.append({
            "cluster_id": f"C{i}",
            "cluster_name": " ".join(norm.split()[:6]) or "aspect",
            "aspect_summary": f"Claims stating: {norm}.",
            "claim_ids": groups[norm],
        })
    return {"clusters": clusters}


def _sidecar_transcript(image_parts: List[str], seed: int) -> str:
    if not image_parts:
        return "null"
    image = Path(image_parts[0])
    candidates = []
    if seed:
        candidates.append(image.with_name(f"{image.stem}.s{seed}.md"))
    candidates.append(image.with_suffix(".md"))
    for path in candidates:
        if path.exists():
            return path.read_text(encoding="utf-8")
    return "null"


def load_fixture_rules(fixtures_dir: str) -> List[Dict[str, Any]]:
    rules: List[Dict[str, Any]] = []
    base = Path(fixtures_dir)
    if not base.exists():
        logger.warning("fixture directory {} does not exist", fixtures_dir)
        return rules
    for path in sorted(base.glob("*.json")):
        data = json.loads(path.read_text(encoding="utf-8"))
        items = data if isinstance(data, list) else [data]
        for item in items:
            item.setdefault("fixture_id", item.get("fixture_id"))
            rules.append(item)
    return rules


# ---------------------------------------------------------
# OPENAI-COMPATIBLE
# ---------------------------------------------------------

def _image_data_uri(path: str) -> str:
    mime = mimetypes.guess_type(path)[0] or "image/png"
    data = base64.b64encode(Path(path).read_bytes()).decode("ascii")
    return f"data:{mime};base64,{data}"


class OpenAIBackend:
    kind = "openai"

    def __init__(self, settings: BackendSettings):
        from openai import AsyncOpenAI

        self.settings = settings
        self.client = AsyncOpenAI(api_key=settings.api_key(), base_url=settings.base_url)

    async def complete(self, request: CompletionRequest, model: Optional[str]) -> List[Completion]:
        import openai

        user_content: Any = request.user_text
        if request.image_parts:
            user_content = [{"type": "text", "text": request.user_text}] + [
                {"type": "image_url", "image_url": {"url": _image_data_uri(p)}} for p in request.image_parts
            ]
        messages = [
            {"role": "system", "content": request.system_text},
            {"role": "user", "content": user_content},
        ]
        d = request.decoding
        try:
            resp = await self.client.chat.completions.create(
                model=model or self.settings.model,
                messages=messages,
                temperature=d.temperature,
                top_p=d.nucleus_mass,
                n=d.sample_count,
                seed=d.seed,
            )
        except (openai.APIConnectionError, openai.APITimeoutError, openai.RateLimitError,
                openai.InternalServerError) as e:
            raise TransportError(self.settings.id, str(e)) from e
        except openai.APIStatusError as e:
            raise BackendParseError(f"OpenAI API Error {e.status_code}", raw=str(e)) from e

        choices = resp.choices or []
        if len(choices) != d.sample_count:
            raise BackendParseError("backend returned a different number of choices", raw=resp.model_dump())
        usage = resp.usage
        prompt_tokens = usage.prompt_tokens if usage else count_tokens(request.system_text, request.user_text)
        completion_tokens = usage.completion_tokens if usage else 0
        share, extra = divmod(completion_tokens, max(1, len(choices)))

        out = []
        for i, choice in enumerate(choices):
            text = choice.message.content or ""
            out.append(Completion(
                text=text,
                input_tokens=prompt_tokens if i == 0 else 0,
                output_tokens=share + (extra if i == 0 else 0),
            ))
        return out

    async def embed(self, texts: Sequence[str], model: Optional[str]) -> List[List[float]]:
        import openai

        try:
            resp = await self.client.embeddings.create(model=model or self.settings.model, input=list(texts))
        except (openai.APIConnectionError, openai.APITimeoutError, openai.RateLimitError,
                openai.InternalServerError) as e:
            raise TransportError(self.settings.id, str(e)) from e
        return [item.embedding for item in resp.data]

    async def score_pair(self, query: str, passage: str, model: Optional[str]) -> float:
        raise ContractViolation(f"backend '{self.settings.id}' does not serve cross-encoder scoring")

    async def nli(self, premise: str, hypothesis: str, model: Optional[str]) -> Tuple[float, float, float]:
        raise ContractViolation(f"backend '{self.settings.id}' does not serve NLI")


# ---------------------------------------------------------
# HUGGING FACE ROUTER
# ---------------------------------------------------------

HF_ROUTER = "https://router.huggingface.co"


class HFRouterBackend:
    kind = "hf"

    def __init__(self, settings: BackendSettings):
        self.settings = settings
        self.base = (settings.base_url or HF_ROUTER).rstrip("/")

    def _headers(self) -> Dict[str, str]:
        key = self.settings.api_key()
        if not key:
            raise TransportError(self.settings.id, f"{self.settings.api_key_env} is not set")
        return {"Authorization": f"Bearer {key}", "Content-Type": "application/json"}

    def _post(self, url: str, payload: Dict[str, Any]) -> Any:
        try:
            resp = requests.post(url, headers=self._headers(), data=json.dumps(payload), timeout=120)
        except requests.RequestException as e:
            raise TransportError(self.settings.id, str(e)) from e
        if resp.status_code >= 500 or resp.status_code == 429:
            raise TransportError(self.settings.id, f"HF API Error {resp.status_code}: {resp.text}")
        if resp.status_code != 200:
            raise BackendParseError(f"HF API Error {resp.status_code}", raw=resp.text)
        try:
            return resp.json()
        except ValueError as e:
            raise BackendParseError("HF reply is not JSON", raw=resp.text) from e

    async def complete(self, request: CompletionRequest, model: Optional[str]) -> List[Completion]:
        if request.image_parts:
            raise ContractViolation(f"backend '{self.settings.id}' has no vision support")
        d = request.decoding
        out = []
        for j in range(d.sample_count):
            payload = {
                "model": model or self.settings.model,
                "messages": [
                    {"role": "system", "content": request.system_text},
                    {"role": "user", "content": request.user_text},
                ],
                "temperature": d.temperature,
                "top_p": d.nucleus_mass,
                "seed": d.seed + j,
            }
            data = await asyncio.to_thread(self._post, f"{self.base}/v1/chat/completions", payload)
            try:
                text = data["choices"][0]["message"]["content"]
            except (KeyError, IndexError, TypeError) as e:
                raise BackendParseError("malformed chat reply", raw=data) from e
            usage = data.get("usage") or {}
            out.append(Completion(
                text=text,
                input_tokens=int(usage.get("prompt_tokens", count_tokens(request.system_text, request.user_text))),
                output_tokens=int(usage.get("completion_tokens", count_tokens(text))),
            ))
        return out

    async def embed(self, texts: Sequence[str], model: Optional[str]) -> List[List[float]]:
        url = f"{self.base}/hf-inference/models/{model or self.settings.model}/pipeline/feature-extraction"
        data = await asyncio.to_thread(self._post, url, {"inputs": list(texts)})
        if not isinstance(data, list) or len(data) != len(texts):
            raise BackendParseError("malformed embedding reply", raw=data)
        return data

    async def score_pair(self, query: str, passage: str, model: Optional[str]) -> float:
        url = f"{self.base}/hf-inference/models/{model or self.settings.model}"
        data = await asyncio.to_thread(self._post, url, {"inputs": {"text": query, "text_pair": passage}})
        try:
            item = data[0] if isinstance(data, list) else data
            item = item[0] if isinstance(item, list) else item
            return float(item["score"])
        except (KeyError, IndexError, TypeError) as e:
            raise BackendParseError("malformed cross-encoder reply", raw=data) from e

    async def nli(self, premise: str, hypothesis: str, model: Optional[str]) -> Tuple[float, float, float]:
        url = f"{self.base}/hf-inference/models/{model or self.settings.model}"
        data = await asyncio.to_thread(
            self._post, url, {"inputs": {"text": premise, "text_pair": hypothesis}, "parameters": {"top_k": None}}
        )
        rows = data[0] if data and isinstance(data[0], list) else data
        scores = {}
        try:
            for row in rows:
                scores[row["label"].lower()] = float(row["score"])
            return scores["entailment"], scores["neutral"], scores["contradiction"]
        except (KeyError, TypeError) as e:
            raise BackendParseError("malformed NLI reply", raw=data) from e


def build_backend(settings: BackendSettings, rules: Optional[List[Dict[str, Any]]] = None):
    if settings.kind == "stub":
        return StubBackend(settings, rules=rules)
    if settings.kind == "openai":
        return OpenAIBackend(settings)
    if settings.kind == "hf":
        return HFRouterBackend(settings)
    raise ContractViolation(f"unknown backend kind {settings.kind}")
