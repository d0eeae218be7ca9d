import json

import pytest

from bundlegen.errors import MockScriptMiss, ProviderError
from bundlegen.llm import (
    ChatRequest,
    Conversation,
    LlmClient,
    Message,
    MockProvider,
    MockRule,
    MockScript,
    ProviderConfig,
    RateLimiter,
    RemoteChatProvider,
    ReplayProvider,
    ResponseCache,
    RunLog,
    TransportError,
    request_sha,
)


def mock_client(script, **kwargs):
    return LlmClient(MockProvider(script), backoff=0.0, **kwargs)


class TestConversation:
    def test_send_grows_by_two(self):
        client = mock_client(MockScript(fallback="ok"))
        conversation = Conversation.new("sys")
        before = len(conversation.messages)
        client.send(conversation, "hello", "step_a")
        assert len(conversation.messages) == before + 2
        assert conversation.tags == ["step_a"]

    def test_alternation_enforced(self):
        conversation = Conversation(
            messages=[Message("user", "a"), Message("user", "b")], tags=["t1", "t2"]
        )
        with pytest.raises(ValueError, match="expected 'assistant'"):
            conversation.validate()

    def test_tag_count_must_match_user_turns(self):
        conversation = Conversation(messages=[Message("user", "a")], tags=[])
        with pytest.raises(ValueError, match="tags"):
            conversation.validate()

    def test_round_trips_through_dict(self):
        client = mock_client(MockScript(fallback="ok"))
        conversation = Conversation.new("sys")
        client.send(conversation, "hello", "step_a")
        clone = Conversation.from_dict(conversation.to_dict())
        assert clone == conversation


class TestMockProvider:
    def request(self, tag, *messages):
        msgs = tuple(Message("user", m) for m in messages) or (Message("user", "x"),)
        return ChatRequest(messages=msgs, tag=tag, sha="0" * 64, model="m", temperature=0.0)

    def test_scripted_identity(self):
        script = MockScript(
            rules=[MockRule(tag="initial_bundles", response="{'bundle 1': ['product 1','product 2']}")]
        )
        provider = MockProvider(script)
        assert provider.complete(self.request("initial_bundles")) == (
            "{'bundle 1': ['product 1','product 2']}"
        )

    def test_first_match_wins_and_tag_prefixes(self):
        script = MockScript(
            rules=[
                MockRule(tag="bundle_feedback", response="first"),
                MockRule(tag="bundle_feedback_round_2", response="second"),
            ]
        )
        provider = MockProvider(script)
        assert provider.complete(self.request("bundle_feedback_round_2")) == "first"

    def test_contains_matches_whole_conversation(self):
        script = MockScript(rules=[MockRule(contains="marker", response="hit")], fallback="miss")
        provider = MockProvider(script)
        assert provider.complete(self.request("t", "has marker inside", "latest")) == "hit"
        assert provider.complete(self.request("t", "nothing")) == "miss"

    def test_contains_last_sees_only_latest_message(self):
        script = MockScript(rules=[MockRule(contains_last="marker", response="hit")], fallback="miss")
        provider = MockProvider(script)
        assert provider.complete(self.request("t", "marker early", "latest")) == "miss"
        assert provider.complete(self.request("t", "early", "marker late")) == "hit"

    def test_uses_budget_consumed_in_order(self):
        script = MockScript(
            rules=[
                MockRule(tag="step", response="changed", uses=1),
                MockRule(tag="step", response="stable"),
            ]
        )
        provider = MockProvider(script)
        assert provider.complete(self.request("step")) == "changed"
        assert provider.complete(self.request("step")) == "stable"
        assert provider.complete(self.request("step")) == "stable"

    def test_miss_without_fallback_raises(self):
        provider = MockProvider(MockScript(rules=[MockRule(tag="other", response="x")]))
        with pytest.raises(MockScriptMiss):
            provider.complete(self.request("unknown"))

    def test_script_file_round_trip(self, tmp_path):
        script = MockScript(
            rules=[MockRule(tag="a", contains="c", contains_last="d", uses=2, response="r")],
            fallback="f",
        )
        script.save(tmp_path / "script.json")
        loaded = MockScript.from_file(tmp_path / "script.json")
        assert loaded == script


class TestRemoteHttpTransport:
    @pytest.fixture()
    def chat_server(self):
        import threading
        from http.server import BaseHTTPRequestHandler, HTTPServer

        seen = {"requests": [], "fail_first": 0}

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers["Content-Length"])
                payload = json.loads(self.rfile.read(length))
                seen["requests"].append(
                    {"payload": payload, "auth": self.headers.get("Authorization")}
                )
                if seen["fail_first"] > 0:
                    seen["fail_first"] -= 1
                    self.send_response(503)
                    self.end_headers()
                    return
                body = json.dumps(
                    {"choices": [{"message": {"content": f"echo:{payload['messages'][-1]['content']}"}}]}
                ).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):
                pass

        server = HTTPServer(("127.0.0.1", 0), Handler)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        yield f"http://127.0.0.1:{server.server_port}", seen
        server.shutdown()

    def test_default_transport_speaks_chat_completions(self, chat_server, monkeypatch):
        url, seen = chat_server
        monkeypatch.setenv("BUNDLEGEN_CHAT_URL", url)
        monkeypatch.setenv("BUNDLEGEN_API_KEY", "sekret")
        provider = RemoteChatProvider(ProviderConfig(kind="remote-chat", model="m1", timeout=5))
        client = LlmClient(provider, backoff=0.0)
        conversation = Conversation.new("sys")
        reply = client.send(conversation, "hello there", "step")
        assert reply == "echo:hello there"
        request = seen["requests"][0]
        assert request["auth"] == "Bearer sekret"
        assert request["payload"]["model"] == "m1"
        assert request["payload"]["temperature"] == 0.0
        assert request["payload"]["messages"][0] == {"role": "system", "content": "sys"}

    def test_5xx_is_retried_then_recovers(self, chat_server, monkeypatch):
        url, seen = chat_server
        seen["fail_first"] = 2
        monkeypatch.setenv("BUNDLEGEN_CHAT_URL", url)
        provider = RemoteChatProvider(ProviderConfig(kind="remote-chat", max_retries=2, timeout=5))
        client = LlmClient(provider, backoff=0.0)
        assert client.send(Conversation.new(), "x", "step") == "echo:x"
        assert len(seen["requests"]) == 3


class TestRetries:
    def test_remote_down_errors_after_all_attempts_and_logs_them(self, tmp_path):
        attempts = []

        def failing_transport(payload):
            attempts.append(payload)
            raise TransportError("connection refused")

        provider = RemoteChatProvider(ProviderConfig(kind="remote-chat", max_retries=2),
                                      transport=failing_transport)
        log = RunLog(tmp_path / "log.jsonl")
        client = LlmClient(provider, run_log=log, backoff=0.0)
        conversation = Conversation.new()
        with pytest.raises(ProviderError, match="after 3 attempts"):
            client.send(conversation, "hello", "step")
        assert len(attempts) == 3
        records = [json.loads(l) for l in (tmp_path / "log.jsonl").read_text().splitlines()]
        assert [r["attempt"] for r in records if "error" in r] == [1, 2, 3]

    def test_transport_recovers_mid_retry(self, tmp_path):
        state = {"n": 0}

        def flaky(payload):
            state["n"] += 1
            if state["n"] < 3:
                raise TransportError("blip")
            return "recovered"

        provider = RemoteChatProvider(ProviderConfig(kind="remote-chat", max_retries=2),
                                      transport=flaky)
        client = LlmClient(provider, backoff=0.0)
        assert client.send(Conversation.new(), "hello", "step") == "recovered"


class TestCache:
    def test_second_identical_send_is_served_from_cache(self, tmp_path):
        script = MockScript(fallback="reply")
        provider = MockProvider(script)
        cache = ResponseCache(tmp_path / "cache.jsonl")
        client = LlmClient(provider, cache=cache, backoff=0.0)
        first = client.send(Conversation.new("sys"), "hello", "step")
        second = client.send(Conversation.new("sys"), "hello", "step")
        assert first == second == "reply"
        assert provider.calls == 1

    def test_salt_separates_deliberate_repetitions(self, tmp_path):
        script = MockScript(rules=[MockRule(response="first", uses=1)], fallback="later")
        provider = MockProvider(script)
        cache = ResponseCache(tmp_path / "cache.jsonl")
        client = LlmClient(provider, cache=cache, backoff=0.0)
        a = client.send(Conversation.new(), "rate this", "rater_eval", salt="rep1")
        b = client.send(Conversation.new(), "rate this", "rater_eval", salt="rep2")
        assert (a, b) == ("first", "later")
        assert provider.calls == 2

    def test_cache_persists_across_clients(self, tmp_path):
        provider = MockProvider(MockScript(fallback="reply"))
        client = LlmClient(provider, cache=ResponseCache(tmp_path / "c.jsonl"), backoff=0.0)
        client.send(Conversation.new(), "hi", "step")
        provider2 = MockProvider(MockScript(fallback="other"))
        client2 = LlmClient(provider2, cache=ResponseCache(tmp_path / "c.jsonl"), backoff=0.0)
        assert client2.send(Conversation.new(), "hi", "step") == "reply"
        assert provider2.calls == 0


class TestReplay:
    def test_replay_reproduces_a_logged_run(self, tmp_path):
        script = MockScript(
            rules=[MockRule(tag="a", response="alpha"), MockRule(tag="b", response="beta")]
        )
        log_path = tmp_path / "log.jsonl"
        client = mock_client(script, run_log=RunLog(log_path))
        conversation = Conversation.new("sys")
        client.send(conversation, "one", "a")
        client.send(conversation, "two", "b")

        replay = LlmClient(ReplayProvider(log_path), backoff=0.0)
        replayed = Conversation.new("sys")
        assert replay.send(replayed, "one", "a") == "alpha"
        assert replay.send(replayed, "two", "b") == "beta"
        assert replayed == conversation

    def test_replay_miss_is_an_error(self, tmp_path):
        log_path = tmp_path / "log.jsonl"
        log_path.write_text("")
        replay = LlmClient(ReplayProvider(log_path), backoff=0.0)
        with pytest.raises(ProviderError, match="no response"):
            replay.send(Conversation.new(), "unseen", "tag")


class TestRateLimiter:
    def test_blocks_when_budget_exhausted(self):
        now = {"t": 0.0}
        naps = []

        def clock():
            return now["t"]

        def sleep(seconds):
            naps.append(seconds)
            now["t"] += seconds

        limiter = RateLimiter(rpm=2, clock=clock, sleep=sleep)
        limiter.acquire()
        limiter.acquire()
        limiter.acquire()  # must wait for the first grant to age out
        assert naps and now["t"] >= 60.0

    def test_disabled_without_rpm(self):
        limiter = RateLimiter(rpm=None)
        for _ in range(1000):
            limiter.acquire()


def test_request_sha_covers_history_and_salt():
    messages = (Message("user", "a"),)
    base = request_sha("m", 0.0, messages, None)
    assert request_sha("m", 0.0, messages, "x") != base
    assert request_sha("m2", 0.0, messages, None) != base
    assert request_sha("m", 0.5, messages, None) != base
    assert request_sha("m", 0.0, (Message("user", "b"),), None) != base
    assert request_sha("m", 0.0, messages, None) == base
