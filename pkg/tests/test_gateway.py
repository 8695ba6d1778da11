import asyncio
from concurrent.futures import ThreadPoolExecutor

import pytest

from src.core.config import BackendSettings, GatewaySettings
from src.core.errors import BackendParseError, ContractViolation, RetryableBackendError, TransportError
from src.core.gateway import CompletionRequest, DecodingConfig, ModelGateway
from src.core.ledger import LedgerRow, TokenLedger
from src.core.llm_client import count_tokens


def _request(tag="test/echo", user="hello there", temperature=0.0, samples=1, seed=0, **kw):
    return CompletionRequest(
        system_text="system", user_text=user, call_tag=tag,
        decoding=DecodingConfig(temperature=temperature, sample_count=samples, seed=seed), **kw
    )


class FlakyBackend:
    def __init__(self, failures):
        self.failures = failures
        self.calls = 0

    async def complete(self, request, model):
        self.calls += 1
        if self.calls <= self.failures:
            raise TransportError("stub", "connection reset")
        from src.core.llm_client import Completion
        return [Completion(text="ok", input_tokens=1, output_tokens=1)]


class ShortBackend:
    async def complete(self, request, model):
        return []


def test_count_tokens_is_whitespace_based():
    assert count_tokens("a b  c", "", "d") == 4


def test_t0_cache_hit_is_unbilled_but_scoped(gateway, stub):
    stub.add_rule({"tag": "test/*", "responses": ["cached answer"]})

    async def go():
        with gateway.scope("task-1") as meter:
            first = await gateway.complete(_request())
            second = await gateway.complete(_request())
        return first, second, meter

    first, second, meter = asyncio.run(go())
    assert first[0][0] == second[0][0] == "cached answer"
    assert len(gateway.ledger) == 1
    assert meter.calls("test/*", kind="generation") == 2
    assert meter.usage("test/*").total == 2 * first[0][1].total
    assert gateway.usage_report("test/*").total == first[0][1].total
    assert gateway.usage_report("test/*", scope="task-1").total == first[0][1].total


def test_disk_cache_survives_a_new_gateway(tmp_path):
    settings = GatewaySettings(cache_dir=str(tmp_path / "c"))
    one = ModelGateway(settings)
    one.backends["stub"].add_rule({"tag": "test/*", "responses": ["persisted"]})
    asyncio.run(one.complete(_request()))

    two = ModelGateway(settings)
    [(text, _)] = asyncio.run(two.complete(_request()))
    assert text == "persisted"
    assert len(two.ledger) == 0


def test_sampling_is_not_cached_and_rotates_variants(gateway, stub):
    stub.add_rule({"tag": "test/*", "responses": ["a", "b"]})
    replies = asyncio.run(gateway.complete(_request(temperature=0.7, samples=3)))
    assert [t for t, _ in replies] == ["a", "b", "a"]
    asyncio.run(gateway.complete(_request(temperature=0.7, samples=3)))
    assert len(gateway.ledger) == 6


def test_t0_variant_follows_seed(gateway, stub):
    stub.add_rule({"tag": "test/*", "responses": ["a", "b"]})
    [(text, _)] = asyncio.run(gateway.complete(_request(seed=1)))
    assert text == "b"


def test_rule_matching_by_contains_and_fixture(gateway, stub):
    stub.add_rule({"tag": "test/*", "fixture_id": "case-7", "responses": ["fixture reply"]})
    stub.add_rule({"tag": "test/*", "contains": ["QUANTUM"], "responses": ["quantum reply"]})
    [(a, _)] = asyncio.run(gateway.complete(_request(user="about quantum things")))
    [(b, _)] = asyncio.run(gateway.complete(_request(fixture_id="case-7")))
    [(c, _)] = asyncio.run(gateway.complete(_request(user="nothing relevant")))
    assert (a, b, c) == ("quantum reply", "fixture reply", "")


def test_force_cache_globs():
    settings = GatewaySettings(force_cache_on=["acsv/*"], force_cache_off=["acsv/lrm"])
    gw = ModelGateway(settings)
    assert gw.cache_enabled("acsv/other", 0.7)
    assert not gw.cache_enabled("acsv/lrm", 0.0)
    assert not gw.cache_enabled("icsv/relation", 0.7)
    assert gw.cache_enabled("icsv/relation", 0.0)


def test_transport_errors_are_retried(tmp_path):
    settings = GatewaySettings(cache_dir=str(tmp_path), retry_attempts=3, backoff_seconds=0.0)
    flaky = FlakyBackend(failures=2)
    gw = ModelGateway(settings, backends={"stub": flaky})
    [(text, _)] = asyncio.run(gw.complete(_request(temperature=0.5)))
    assert text == "ok"
    assert flaky.calls == 3


def test_retry_exhaustion_raises_retryable_error(tmp_path):
    settings = GatewaySettings(cache_dir=str(tmp_path), retry_attempts=2, backoff_seconds=0.0)
    gw = ModelGateway(settings, backends={"stub": FlakyBackend(failures=5)})
    with pytest.raises(RetryableBackendError) as err:
        asyncio.run(gw.complete(_request(temperature=0.5)))
    assert err.value.attempts == 2
    assert isinstance(err.value.cause, TransportError)
    assert len(gw.ledger) == 0


def test_sample_count_mismatch_is_a_parse_error(tmp_path):
    gw = ModelGateway(GatewaySettings(cache_dir=str(tmp_path)), backends={"stub": ShortBackend()})
    with pytest.raises(BackendParseError):
        asyncio.run(gw.complete(_request()))


def test_images_need_a_vision_backend(tmp_path):
    settings = GatewaySettings(cache_dir=str(tmp_path), backends=[BackendSettings(id="stub", vision=False)])
    gw = ModelGateway(settings)
    with pytest.raises(ContractViolation):
        asyncio.run(gw.complete(_request(image_parts=["page.png"])))


def test_unknown_backend_role(tmp_path):
    gw = ModelGateway(GatewaySettings(cache_dir=str(tmp_path), generation="missing"))
    with pytest.raises(ContractViolation):
        asyncio.run(gw.complete(_request()))


def test_empty_inputs_are_contract_violations(gateway):
    with pytest.raises(ContractViolation):
        asyncio.run(gateway.embed([]))
    with pytest.raises(ContractViolation):
        asyncio.run(gateway.score_pair("", "passage"))
    with pytest.raises(ContractViolation):
        asyncio.run(gateway.nli_classify("premise", ""))


def test_embed_and_rerank(gateway, stub):
    vectors = asyncio.run(gateway.embed(["self attention", "recurrence"]))
    assert len(vectors) == 2 and len(vectors[0]) == len(vectors[1])
    stub.add_rule({"kind": "rerank", "query_contains": "attention", "passage_contains": "transformer", "score": 0.42})
    assert asyncio.run(gateway.score_pair("attention", "the transformer paper")) == 0.42
    assert 0.0 <= asyncio.run(gateway.score_pair("apples", "oranges")) <= 1.0


def test_nli_rules_and_markers(gateway, stub):
    stub.add_rule({"kind": "nli", "premise_contains": "attention", "distribution": [0.9, 0.05, 0.05]})
    d = asyncio.run(gateway.nli_classify("attention is used", "claim"))
    assert d.p_entail == pytest.approx(0.9)

    d = asyncio.run(gateway.nli_classify("evidence {{contradict:0.8}}", "claim"))
    assert d.p_contradict == pytest.approx(0.8)
    assert d.p_entail == 0.0

    d = asyncio.run(gateway.nli_classify("The same sentence.", "the same sentence"))
    assert d.p_entail == pytest.approx(0.96)


def test_nli_small_drift_is_renormalised(gateway):
    d = asyncio.run(gateway.nli_classify("premise {{nli:0.5,0.3,0.2005}}", "claim"))
    assert d.p_entail + d.p_neutral + d.p_contradict == pytest.approx(1.0, abs=1e-9)
    assert d.p_entail == pytest.approx(0.5 / 1.0005)


def test_nli_large_drift_is_rejected(gateway):
    with pytest.raises(BackendParseError):
        asyncio.run(gateway.nli_classify("premise {{nli:0.6,0.3,0.2}}", "claim"))


def test_nli_usage_is_metered(gateway):
    async def go():
        with gateway.scope("nli-task") as meter:
            await gateway.nli_classify("premise text", "claim text")
            await gateway.nli_classify("premise text", "claim text")
        return meter

    meter = asyncio.run(go())
    assert meter.calls(kind="nli") == 2
    assert gateway.usage_report(kind="nli").input_tokens == 4


def test_model_for_prefers_longest_prefix():
    settings = GatewaySettings()
    assert settings.model_for("icsv/cluster") == "gpt-4o-2025-08-06"
    assert settings.model_for("icsv/relation") == "gpt-4o-2024-08-06"
    assert settings.model_for("acsv/lrm") == "gemini-2.5-pro"
    assert settings.model_for("unrelated") is None


def test_backend_ids_must_be_env_safe():
    with pytest.raises(ValueError):
        BackendSettings(id="bad id!")
    assert BackendSettings(id="hf-router").api_key_env == "BIBAGENT_BACKEND_HF_ROUTER_KEY"


def test_run_blocking_returns_the_result(gateway):
    assert asyncio.run(gateway.run_blocking(lambda a, b: a + b, 2, 3)) == 5


def test_ledger_is_exact_under_many_threads():
    ledger = TokenLedger()

    def burst(worker):
        for j in range(50):
            ledger.record(LedgerRow(call_tag=f"load/{worker}", kind="generation", input_tokens=j, output_tokens=1))

    with ThreadPoolExecutor(max_workers=64) as pool:
        list(pool.map(burst, range(64)))

    assert len(ledger) == 64 * 50
    usage = ledger.report("load/*")
    assert usage.input_tokens == 64 * sum(range(50))
    assert usage.output_tokens == 64 * 50
    assert ledger.report("load/7").output_tokens == 50


def test_many_concurrent_scopes_keep_their_own_usage(gateway, stub):
    stub.add_rule({"tag": "load/*", "responses": ["fine"]})

    async def one(i):
        with gateway.scope(f"task-{i}") as meter:
            await gateway.complete(_request(tag="load/echo", user=" ".join(["w"] * (i + 1)), temperature=0.7))
        return meter

    async def go():
        return await asyncio.gather(*(one(i) for i in range(96)))

    meters = asyncio.run(go())
    assert len(gateway.ledger) == 96
    for i, meter in enumerate(meters):
        assert meter.calls(kind="generation") == 1
        assert meter.usage().input_tokens - meters[0].usage().input_tokens == i
        assert gateway.usage_report(scope=f"task-{i}").total == meter.usage().total
    assert sum(m.usage().total for m in meters) == gateway.usage_report().total
