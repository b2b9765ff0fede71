from __future__ import annotations

import json

import httpx
import pytest

from mocktrial.backend import (
    ChatMessage,
    CompletionRequest,
    RecordReplayBackend,
    RemoteBackend,
    RequestTag,
    ScriptedBackend,
    ScriptFixture,
)
from mocktrial.errors import AuthMissing, BackendFailure, CassetteMiss, RemoteExhausted, ScriptMiss


def req(text="你好", tag=("C1", "TrialDebate", "Judge", "debate#1"), temperature=0.7):
    return CompletionRequest((ChatMessage("user", text),), RequestTag(*tag), temperature, 64)


def test_request_validation():
    with pytest.raises(ValueError):
        ChatMessage("tool", "x")
    with pytest.raises(ValueError):
        ChatMessage("user", "  ")
    with pytest.raises(ValueError):
        CompletionRequest((), RequestTag("a", "b", "c", "d"))
    with pytest.raises(ValueError):
        req(temperature=-1)


def test_digest_ignores_tag_but_not_content():
    a = req(tag=("A", "s", "r", "t"))
    assert a.digest() == req(tag=("B", "s", "r", "t")).digest()
    assert a.digest() != req(text="再见").digest()


def test_script_lookup_prefers_specific_keys():
    fx = ScriptFixture(
        {
            RequestTag("*", "*", "Judge", "*"): "any judge",
            RequestTag("C1", "*", "Judge", "*"): "C1 judge",
            RequestTag("C1", "TrialDebate", "Judge", "debate#1"): "exact",
        }
    )
    b = ScriptedBackend(fx)
    assert b.complete(req()) == "exact"
    assert b.complete(req(tag=("C1", "TrialDebate", "Judge", "debate#2"))) == "C1 judge"
    assert b.complete(req(tag=("C2", "TrialDebate", "Judge", "x"))) == "any judge"
    with pytest.raises(ScriptMiss):
        b.complete(req(tag=("C2", "TrialDebate", "Prosecutor", "x")))
    assert len(b.calls) == 4


def test_non_strict_default_template(tmp_path):
    fx = ScriptFixture({}, strict=False, default="{role}|{turn}")
    assert ScriptedBackend(fx).complete(req()) == "Judge|debate#1"
    path = tmp_path / "fx.json"
    fx.dump(path)
    assert ScriptFixture.load(path) == fx


def _remote(handler, **kw):
    client = httpx.Client(transport=httpx.MockTransport(handler))
    return RemoteBackend("http://model.test/v1", "m", api_key="k", client=client, backoff_base=0, **kw)


def _ok(text):
    return httpx.Response(200, json={"choices": [{"message": {"content": text}}]})


def test_remote_success_sends_payload():
    seen = {}

    def handler(request: httpx.Request):
        seen["url"] = str(request.url)
        seen["body"] = json.loads(request.content)
        seen["auth"] = request.headers["authorization"]
        return _ok("回答")

    assert _remote(handler, seed=7).complete(req()) == "回答"
    assert seen["url"] == "http://model.test/v1/chat/completions"
    assert seen["body"]["model"] == "m" and seen["body"]["seed"] == 7
    assert seen["auth"] == "Bearer k"


def test_remote_retries_transient_then_succeeds():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(503) if len(calls) < 3 else _ok("ok")

    assert _remote(handler, retry_budget=3).complete(req()) == "ok"
    assert len(calls) == 3


def test_remote_exhausts_and_fails_fast():
    with pytest.raises(RemoteExhausted):
        _remote(lambda r: httpx.Response(429), retry_budget=2).complete(req())
    calls = []

    def bad(request):
        calls.append(1)
        return httpx.Response(401, text="nope")

    with pytest.raises(BackendFailure):
        _remote(bad, retry_budget=3).complete(req())
    assert len(calls) == 1
    with pytest.raises(BackendFailure):
        _remote(lambda r: httpx.Response(200, json={"x": 1})).complete(req())


def test_remote_transport_errors_are_retried():
    calls = []

    def handler(request):
        calls.append(1)
        if len(calls) == 1:
            raise httpx.ConnectError("down")
        return _ok("back")

    assert _remote(handler, retry_budget=1).complete(req()) == "back"


def test_remote_needs_key(monkeypatch):
    monkeypatch.delenv("MOCKTRIAL_API_KEY", raising=False)
    with pytest.raises(AuthMissing):
        RemoteBackend("http://x", "m").complete(req())


def test_record_then_replay(tmp_path):
    cassette = tmp_path / "c.jsonl"
    inner = ScriptedBackend(ScriptFixture({}, strict=False, default="{turn}"))
    rec = RecordReplayBackend(inner, cassette, "record")
    assert rec.complete(req()) == "debate#1"
    assert rec.complete(req()) == "debate#1"
    assert len(inner.calls) == 1
    assert len(cassette.read_text(encoding="utf-8").splitlines()) == 1
    rep = RecordReplayBackend(None, cassette, "replay")
    assert rep.complete(req(tag=("Z", "z", "z", "z"))) == "debate#1"
    with pytest.raises(CassetteMiss):
        rep.complete(req(text="不同的问题"))
    with pytest.raises(FileNotFoundError):
        RecordReplayBackend(None, tmp_path / "missing.jsonl", "replay")
