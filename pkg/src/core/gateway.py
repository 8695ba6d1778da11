# src/core/gateway.py
"""
Single choke point for every model-dependent capability.

- complete / embed / score_pair / nli_classify
- bounded parallelism (one semaphore per event loop)
- retry on transport errors only (tenacity, exponential backoff)
- content-addressed JSON cache (on for T=0 tags, off for sampling tags)
- token ledger (billed calls) + per-task scope meters (logical usage)
"""

import asyncio
import fnmatch
import weakref
from contextlib import contextmanager
from contextvars import ContextVar
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple

from loguru import logger
from tenacity import AsyncRetrying, RetryError, retry_if_exception_type, stop_after_attempt, wait_exponential

from src.core.cache import content_key, load_cache, save_cache
from src.core.config import GatewaySettings
from src.core.errors import BackendParseError, ContractViolation, RetryableBackendError, TransportError
from src.core.ledger import LedgerRow, ScopeMeter, TokenLedger
from src.core.llm_client import CompletionRequest, DecodingConfig, build_backend, count_tokens
from src.core.models import NliDistribution, TokenUsage

__all__ = ["ModelGateway", "CompletionRequest", "DecodingConfig"]

_current_scope: ContextVar[Optional[ScopeMeter]] = ContextVar("gateway_scope", default=None)


class ModelGateway:
    def __init__(
        self,
        settings: Optional[GatewaySettings] = None,
        backends: Optional[Dict[str, Any]] = None,
        ledger: Optional[TokenLedger] = None,
    ):
        self.settings = settings or GatewaySettings()
        self.backends = backends or {b.id: build_backend(b) for b in self.settings.backends}
        self.ledger = ledger or TokenLedger()
        self._memory: Dict[str, Any] = {}
        self._semaphores: "weakref.WeakKeyDictionary[asyncio.AbstractEventLoop, asyncio.Semaphore]" = (
            weakref.WeakKeyDictionary()
        )

    # ---------------------------------------------------------
    # plumbing
    # ---------------------------------------------------------

    def _semaphore(self) -> asyncio.Semaphore:
        loop = asyncio.get_running_loop()
        sem = self._semaphores.get(loop)
        if sem is None:
            sem = asyncio.Semaphore(self.settings.max_parallel)
            self._semaphores[loop] = sem
        return sem

    def _backend(self, role: str):
        backend_id = getattr(self.settings, role)
        if backend_id not in self.backends:
            raise ContractViolation(f"no backend configured with id '{backend_id}' for {role}")
        return backend_id, self.backends[backend_id]

    def cache_enabled(self, call_tag: str, temperature: float) -> bool:
        if not self.settings.cache_dir and self.settings.cache_dir is not None:
            return False
        if any(fnmatch.fnmatchcase(call_tag, p) for p in self.settings.force_cache_off):
            return False
        if any(fnmatch.fnmatchcase(call_tag, p) for p in self.settings.force_cache_on):
            return True
        return temperature == 0

    @staticmethod
    def cache_key(backend_id: str, model: Optional[str], kind: str, payload: Dict[str, Any]) -> str:
        return content_key({"backend": backend_id, "model": model, "kind": kind, "request": payload})

    def _cache_get(self, key: str, folder: str) -> Optional[Any]:
        if key in self._memory:
            return self._memory[key]
        if self.settings.cache_dir:
            hit = load_cache(key, folder, root=self.settings.cache_dir)
            if hit is not None:
                self._memory[key] = hit
            return hit
        return None

    def _cache_put(self, key: str, folder: str, data: Any):
        self._memory[key] = data
        if self.settings.cache_dir:
            save_cache(key, folder, data, root=self.settings.cache_dir)

    async def _call(self, backend_id: str, fn: Callable, *args):
        attempts = self.settings.retry_attempts
        try:
            async for attempt in AsyncRetrying(
                stop=stop_after_attempt(attempts),
                wait=wait_exponential(multiplier=self.settings.backoff_seconds, max=30),
                retry=retry_if_exception_type(TransportError),
                reraise=False,
            ):
                with attempt:
                    async with self._semaphore():
                        return await fn(*args)
        except RetryError as e:
            cause = e.last_attempt.exception()
            logger.warning("backend {} gave up after {} attempts: {}", backend_id, attempts, cause)
            raise RetryableBackendError(backend_id, attempts, cause) from cause

    def _account(self, rows: List[LedgerRow], billed: bool):
        meter = _current_scope.get()
        for row in rows:
            if billed:
                self.ledger.record(row)
            if meter is not None:
                meter.add(row)

    def _row(self, call_tag: str, kind: str, inp: int, out: int) -> LedgerRow:
        meter = _current_scope.get()
        return LedgerRow(call_tag=call_tag, kind=kind, input_tokens=inp, output_tokens=out,
                         scope=meter.name if meter else None)

    @contextmanager
    def scope(self, name: str) -> Iterator[ScopeMeter]:
        """Attribute every call made inside (including spawned tasks) to one logical unit."""
        meter = ScopeMeter(name)
        token = _current_scope.set(meter)
        try:
            yield meter
        finally:
            _current_scope.reset(token)

    async def run_blocking(self, fn: Callable, *args):
        """Run a blocking client call in a worker thread, inside the parallelism bound."""
        async with self._semaphore():
            return await asyncio.to_thread(fn, *args)

    # ---------------------------------------------------------
    # capabilities
    # ---------------------------------------------------------

    async def complete(self, request: CompletionRequest) -> List[Tuple[str, TokenUsage]]:
        backend_id, backend = self._backend("generation")
        backend_settings = self.settings.backend(backend_id)
        if request.image_parts and not backend_settings.vision:
            raise ContractViolation(f"backend '{backend_id}' does not declare vision capability")

        model = self.settings.model_for(request.call_tag) or backend_settings.model
        key = self.cache_key(backend_id, model, "generation", request.model_dump(mode="json"))
        use_cache = self.cache_enabled(request.call_tag, request.decoding.temperature)

        cached = self._cache_get(key, backend_id) if use_cache else None
        if cached is not None:
            rows = [self._row(request.call_tag, "generation", i, o) for _, i, o in cached]
            self._account(rows, billed=False)
            return [(t, TokenUsage(input_tokens=i, output_tokens=o, call_tag=request.call_tag)) for t, i, o in cached]

        completions = await self._call(backend_id, backend.complete, request, model)
        if len(completions) != request.decoding.sample_count:
            raise BackendParseError(
                f"expected {request.decoding.sample_count} completions, got {len(completions)}",
                raw=[c.text for c in completions],
            )
        rows = [self._row(request.call_tag, "generation", c.input_tokens, c.output_tokens) for c in completions]
        self._account(rows, billed=True)
        if use_cache:
            self._cache_put(key, backend_id, [[c.text, c.input_tokens, c.output_tokens] for c in completions])
        return [
            (c.text, TokenUsage(input_tokens=c.input_tokens, output_tokens=c.output_tokens, call_tag=request.call_tag))
            for c in completions
        ]

    async def embed(self, texts: List[str], call_tag: str = "embed") -> List[List[float]]:
        if not texts:
            raise ContractViolation("embed needs a non-empty list")
        backend_id, backend = self._backend("embedding")
        model = self.settings.stage_models.get("embedding") or self.settings.backend(backend_id).model
        key = self.cache_key(backend_id, model, "embedding", {"texts": list(texts)})
        use_cache = self.cache_enabled(call_tag, 0.0)
        tokens = count_tokens(*texts)

        cached = self._cache_get(key, backend_id) if use_cache else None
        if cached is not None:
            self._account([self._row(call_tag, "embedding", tokens, 0)], billed=False)
            return cached

        vectors = await self._call(backend_id, backend.embed, list(texts), model)
        if len(vectors) != len(texts):
            raise BackendParseError("embedding count mismatch", raw=len(vectors))
        self._account([self._row(call_tag, "embedding", tokens, 0)], billed=True)
        vectors = [list(map(float, v)) for v in vectors]
        if use_cache:
            self._cache_put(key, backend_id, vectors)
        return vectors

    async def score_pair(self, query: str, passage: str, call_tag: str = "rerank") -> float:
        if not query or not passage:
            raise ContractViolation("score_pair needs a non-empty query and passage")
        backend_id, backend = self._backend("rerank")
        model = self.settings.stage_models.get("rerank") or self.settings.backend(backend_id).model
        key = self.cache_key(backend_id, model, "rerank", {"query": query, "passage": passage})
        use_cache = self.cache_enabled(call_tag, 0.0)
        tokens = count_tokens(query, passage)

        cached = self._cache_get(key, backend_id) if use_cache else None
        if cached is not None:
            self._account([self._row(call_tag, "rerank", tokens, 0)], billed=False)
            return float(cached)

        score = float(await self._call(backend_id, backend.score_pair, query, passage, model))
        self._account([self._row(call_tag, "rerank", tokens, 0)], billed=True)
        if use_cache:
            self._cache_put(key, backend_id, score)
        return score

    async def nli_classify(self, premise: str, hypothesis: str, call_tag: str = "nli") -> NliDistribution:
        if not premise or not hypothesis:
            raise ContractViolation("nli_classify needs a non-empty premise and hypothesis")
        backend_id, backend = self._backend("nli")
        model = self.settings.stage_models.get("nli") or self.settings.backend(backend_id).model
        key = self.cache_key(backend_id, model, "nli", {"premise": premise, "hypothesis": hypothesis})
        use_cache = self.cache_enabled(call_tag, 0.0)
        tokens = count_tokens(premise, hypothesis)

        raw = self._cache_get(key, backend_id) if use_cache else None
        billed = raw is None
        if raw is None:
            raw = list(await self._call(backend_id, backend.nli, premise, hypothesis, model))
            if use_cache:
                self._cache_put(key, backend_id, raw)
        self._account([self._row(call_tag, "nli", tokens, 3)], billed=billed)
        return NliDistribution.normalized(*raw)

    def usage_report(self, pattern: str = "*", kind: Optional[str] = None, scope: Optional[str] = None) -> TokenUsage:
        return self.ledger.report(pattern, kind=kind, scope=scope)
