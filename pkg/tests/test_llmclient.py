import json
import threading

import pytest
import requests

from icldst.corpus import load_corpus
from icldst.errors import BackendError, MockMissError
from icldst.llmclient import (
    CachingBackend,
    CompletionRequest,
    GoldOracleBackend,
    LiveBackend,
    LlmClient,
    MockBackend,
    estimate_tokens,
)


def req(prompt="hello", temperature=0.0, model="m1"):
    return CompletionRequest(prompt=prompt, temperature=temperature, model_id=model)


# ---------------------------------------------------------------------------
# digests
# ---------------------------------------------------------------------------

def test_digest_stable_for_identical_fields():
    assert req().digest == req().digest


def test_digest_varies_with_prompt_temperature_model():
    base = req().digest
    assert req(prompt="other").digest != base
    assert req(temperature=0.5).digest != base
    assert req(model="m2").digest != base


def test_digest_ignores_max_output_tokens():
    a = CompletionRequest("p", max_output_tokens=16)
    b = CompletionRequest("p", max_output_tokens=512)
    assert a.digest == b.digest


# ---------------------------------------------------------------------------
# live backend
# ---------------------------------------------------------------------------

def fake_transport(script):
    calls = []

    def transport(url, headers, body, timeout):
        calls.append({"url": url, "headers": headers, "body": body})
        item = script[min(len(calls) - 1, len(script) - 1)]
        return item

    return transport, calls


def ok_payload(text="fine"):
    return (200, {"choices": [{"message": {"content": text}}],
                  "usage": {"prompt_tokens": 3, "completion_tokens": 2}})


def test_live_sends_wire_shape_and_parses():
    transport, calls = fake_transport([ok_payload("result text")])
    backend = LiveBackend(endpoint="http://example/v1/chat", api_key="k",
                          transport=transport, sleep=lambda s: None)
    response = backend.complete(req(prompt="the prompt", temperature=0.25, model="mx"))
    assert response.text == "result text"
    assert response.usage == (3, 2)
    assert response.source == "live"
    body = calls[0]["body"]
    assert body["model"] == "mx"
    assert body["messages"] == [{"role": "user", "content": "the prompt"}]
    assert body["temperature"] == 0.25
    assert calls[0]["headers"]["Authorization"] == "Bearer k"


def test_live_retries_on_429_then_succeeds():
    transport, calls = fake_transport([(429, {"error": "slow down"}), ok_payload()])
    backend = LiveBackend(endpoint="http://example", transport=transport, sleep=lambda s: None)
    assert backend.complete(req()).text == "fine"
    assert len(calls) == 2


def test_live_retries_on_5xx_then_exhausts():
    transport, calls = fake_transport([(503, "unavailable")])
    backend = LiveBackend(endpoint="http://example", max_attempts=4,
                          transport=transport, sleep=lambda s: None)
    with pytest.raises(BackendError) as exc_info:
        backend.complete(req())
    assert exc_info.value.category == "exhausted"
    assert len(calls) == 4


def test_live_auth_error_is_immediate():
    transport, calls = fake_transport([(401, {"error": "bad key"})])
    backend = LiveBackend(endpoint="http://example", transport=transport, sleep=lambda s: None)
    with pytest.raises(BackendError) as exc_info:
        backend.complete(req())
    assert exc_info.value.category == "auth"
    assert len(calls) == 1


def test_live_network_errors_retry():
    calls = []

    def transport(url, headers, body, timeout):
        calls.append(1)
        if len(calls) == 1:
            raise requests.ConnectionError("refused")
        return ok_payload()

    backend = LiveBackend(endpoint="http://example", transport=transport, sleep=lambda s: None)
    assert backend.complete(req()).text == "fine"
    assert len(calls) == 2


def test_live_requires_endpoint(monkeypatch):
    monkeypatch.delenv("ICLDST_ENDPOINT", raising=False)
    with pytest.raises(BackendError):
        LiveBackend()


# ---------------------------------------------------------------------------
# mock backend
# ---------------------------------------------------------------------------

def test_mock_digest_match():
    r = req(prompt="specific")
    backend = MockBackend(by_digest={r.digest: "scripted"})
    assert backend.complete(r).text == "scripted"
    assert backend.complete(r).source == "mock"


def test_mock_ordinal_consumes_in_order_then_misses():
    backend = MockBackend(ordered=["first", "second"])
    assert backend.complete(req(prompt="a")).text == "first"
    assert backend.complete(req(prompt="b")).text == "second"
    with pytest.raises(MockMissError):
        backend.complete(req(prompt="c"))


def test_mock_script_file(tmp_path):
    r = req(prompt="keyed")
    script = tmp_path / "script.jsonl"
    lines = [
        {"match": "digest", "key": r.digest, "response_text": "by digest"},
        {"match": "ordinal", "key": 1, "response_text": "second ordinal"},
        {"match": "ordinal", "key": 0, "response_text": "first ordinal"},
    ]
    script.write_text("\n".join(json.dumps(l) for l in lines) + "\n", encoding="utf-8")
    backend = MockBackend.from_script(script)
    assert backend.complete(r).text == "by digest"
    assert backend.complete(req(prompt="x")).text == "first ordinal"
    assert backend.complete(req(prompt="y")).text == "second ordinal"


def test_mock_ordinal_rejects_cross_thread_use():
    backend = MockBackend(ordered=["a", "b"])
    backend.complete(req(prompt="main"))
    seen: list[Exception] = []

    def other():
        try:
            backend.complete(req(prompt="thread"))
        except Exception as exc:
            seen.append(exc)

    t = threading.Thread(target=other)
    t.start()
    t.join()
    assert len(seen) == 1 and isinstance(seen[0], BackendError)


def test_mock_never_touches_network(monkeypatch):
    def boom(*args, **kwargs):
        raise AssertionError("network call from mock backend")

    monkeypatch.setattr(requests, "post", boom)
    backend = MockBackend(ordered=["offline"])
    assert backend.complete(req()).text == "offline"


# ---------------------------------------------------------------------------
# gold oracle backend
# ---------------------------------------------------------------------------

def test_gold_oracle_answers_retrieval_and_state_prompts(fixture10_path):
    corpus = load_corpus(fixture10_path, "jsonl-simple")
    oracle = GoldOracleBackend(corpus)
    retrieval_prompt = (
        "I'm finding helpful exampels to solve following dialgoue state tracking problem "
        "in domain transfer enviroment\n"
        "curr : [user] whatever\n"
        "slots to be inference : ['-area']\n"
        "for attraction domain\n"
        "please return the most useful 3 example's from below\n\n"
        "Example Number : 0\ncurr : [user] a\nlabel: None\n\n"
        "Example Number : 1\ncurr : [user] b\nlabel: None\n\n"
        "Output format must be '{answer : [], explanation : ), to be parsed easily."
    )
    text = oracle.complete(req(prompt=retrieval_prompt)).text
    assert "[0, 1]" in text  # only two candidates available

    dst_prompt = "preamble\nprev : None\ncurr : [user] make it leave by 13:01 please\nlabel:"
    state_text = oracle.complete(req(prompt=dst_prompt)).text
    assert json.loads(state_text) == {"taxi-leave": "13:01"}


def test_gold_oracle_miss_is_typed(fixture10_path):
    oracle = GoldOracleBackend(load_corpus(fixture10_path, "jsonl-simple"))
    with pytest.raises(MockMissError):
        oracle.complete(req(prompt="prev : None\ncurr : [user] never seen\nlabel:"))


# ---------------------------------------------------------------------------
# cache
# ---------------------------------------------------------------------------

def test_cache_miss_then_hit(tmp_path):
    inner = MockBackend(ordered=["only once"])
    cache = CachingBackend(inner, tmp_path / "cache.jsonl")
    assert cache.cache_stats() == (0, 0, 0)
    first = cache.complete(req())
    assert first.source == "mock"
    second = cache.complete(req())
    assert second.source == "cache"
    assert second.text == "only once"
    hits, misses, size = cache.cache_stats()
    assert (hits, misses) == (1, 1)
    assert size > 0


def test_cache_round_trip_preserves_text(tmp_path):
    tricky = "line one\nline two with \"quotes\" and don'tcare ✓"
    inner = MockBackend(ordered=[tricky])
    path = tmp_path / "cache.jsonl"
    CachingBackend(inner, path).complete(req())
    reloaded = CachingBackend(None, path)
    assert reloaded.complete(req()).text == tricky


def test_cache_only_mode_raises_on_miss(tmp_path):
    cache = CachingBackend(None, tmp_path / "cache.jsonl")
    with pytest.raises(BackendError) as exc_info:
        cache.complete(req())
    assert exc_info.value.category == "cache_miss"


def test_cache_counters_match_ledger_recount(tmp_path):
    inner = MockBackend(ordered=[f"r{i}" for i in range(10)])
    path = tmp_path / "cache.jsonl"
    cache = CachingBackend(inner, path)
    prompts = ["a", "b", "a", "c", "b", "a"]
    for p in prompts:
        cache.complete(req(prompt=p))
    hits, misses, _ = cache.cache_stats()
    with open(path, encoding="utf-8") as fh:
        ledger_rows = [json.loads(line) for line in fh if line.strip()]
    assert misses == len(ledger_rows) == 3
    assert hits == len(prompts) - misses


def test_cache_concurrent_readers(tmp_path):
    inner = MockBackend(by_digest={req(prompt=f"p{i}").digest: f"r{i}" for i in range(8)})
    cache = CachingBackend(inner, tmp_path / "cache.jsonl")
    errors: list[Exception] = []

    def worker(i):
        try:
            for _ in range(20):
                assert cache.complete(req(prompt=f"p{i % 8}")).text == f"r{i % 8}"
        except Exception as exc:
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    hits, misses, _ = cache.cache_stats()
    assert misses == 8
    assert hits == 8 * 20 - 8


# ---------------------------------------------------------------------------
# facade
# ---------------------------------------------------------------------------

def test_llm_client_passes_decoding_parameters():
    captured = []

    class Capture:
        def complete(self, r):
            captured.append(r)
            from icldst.llmclient import CompletionResponse
            return CompletionResponse("ok")

    client = LlmClient(Capture(), model_id="mz", temperature=0.7, max_output_tokens=33)
    client.complete_text("the prompt")
    assert captured[0].model_id == "mz"
    assert captured[0].temperature == 0.7
    assert captured[0].max_output_tokens == 33
    assert captured[0].prompt == "the prompt"


def test_estimate_tokens_scale():
    assert estimate_tokens("") == 0
    assert estimate_tokens("abcd" * 10) == 10
