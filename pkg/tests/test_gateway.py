"""Tool gateway: protocol conformance, isolation, errors, audit parity."""

from __future__ import annotations

import base64
import io
import json

import httpx
import pytest

from ctfusion.ctfd import ArtifactCache, CompetitionEndpoint, CtfdClient
from ctfusion.gateway import (
    INVALID_PARAMS,
    INVALID_REQUEST,
    METHOD_NOT_FOUND,
    PARSE_ERROR,
    PROTOCOL_VERSION,
    SESSION_ERROR,
    AuthFailure,
    McpGateway,
    McpHttpServer,
    serve_stdio,
)
from ctfusion.mockctfd import MockCtfd
from ctfusion.proxy import SubmissionProxy
from tests.conftest import API_TOKEN, build_fixture, make_client

TOKENS = {"tok-a": "agent-a", "tok-b": "agent-b"}


def build_gateway(mock, tmp_path, quota=20, **kwargs):
    client = make_client(mock, tmp_path / "cache")
    proxy = SubmissionProxy(client, quota=quota)
    gateway = McpGateway(proxy, client, tokens=TOKENS, **kwargs)
    return gateway, proxy, client


def rpc(method, rpc_id=1, **params):
    message = {"jsonrpc": "2.0", "method": method}
    if rpc_id is not None:
        message["id"] = rpc_id
    if params:
        message["params"] = params
    return message


def call_tool(gateway, session, name, **arguments):
    response = gateway.handle(
        rpc("tools/call", name=name, arguments=arguments), session
    )
    return response["result"]


def tool_data(result):
    assert not result.get("isError"), result
    return result["structuredContent"]


def test_initialize_and_handshake(mock_server, tmp_path):
    gateway, _, _ = build_gateway(mock_server, tmp_path)
    session = gateway.create_session("tok-a")
    assert session.agent_id == "agent-a"
    assert not session.initialized

    response = gateway.handle(rpc("initialize", protocolVersion=PROTOCOL_VERSION), session)
    assert response["jsonrpc"] == "2.0"
    assert response["id"] == 1
    result = response["result"]
    assert result["protocolVersion"] == PROTOCOL_VERSION
    assert result["serverInfo"]["name"]
    assert "tools" in result["capabilities"]

    assert gateway.handle(rpc("notifications/initialized", rpc_id=None), session) is None
    assert session.initialized


def test_unknown_token_refused(mock_server, tmp_path):
    gateway, _, _ = build_gateway(mock_server, tmp_path)
    with pytest.raises(AuthFailure):
        gateway.create_session("nope")
    gateway.add_token("tok-c", "agent-c")
    assert gateway.create_session("tok-c").agent_id == "agent-c"


def test_tools_list_exposes_exactly_four(mock_server, tmp_path):
    gateway, _, _ = build_gateway(mock_server, tmp_path)
    session = gateway.create_session("tok-a")
    tools = gateway.handle(rpc("tools/list"), session)["result"]["tools"]
    assert [t["name"] for t in tools] == [
        "list_challenges", "get_challenge", "download_file", "submit_flag",
    ]
    for tool in tools:
        assert tool["description"]
        assert tool["inputSchema"]["type"] == "object"


def test_protocol_error_codes(mock_server, tmp_path):
    gateway, _, _ = build_gateway(mock_server, tmp_path)
    session = gateway.create_session("tok-a")
    assert gateway.handle(None, session)["error"]["code"] == PARSE_ERROR
    assert gateway.handle(["nope"], session)["error"]["code"] == INVALID_REQUEST
    assert gateway.handle(rpc("does/not/exist"), session)["error"]["code"] == METHOD_NOT_FOUND
    bad_tool = gateway.handle(rpc("tools/call", name="rm_rf", arguments={}), session)
    assert bad_tool["error"]["code"] == INVALID_PARAMS
    no_session = gateway.handle(rpc("tools/list"), None)
    assert no_session["error"]["code"] == SESSION_ERROR


def test_list_challenges_view_is_per_agent(mock_server, tmp_path):
    gateway, _, _ = build_gateway(mock_server, tmp_path)
    session_a = gateway.create_session("tok-a")
    session_b = gateway.create_session("tok-b")
    call_tool(gateway, session_a, "list_challenges")
    verdict = tool_data(call_tool(gateway, session_a, "submit_flag",
                                  challenge_id=1, flag="flag{answer-1}"))
    assert verdict["correct"] is True

    listing_a = tool_data(call_tool(gateway, session_a, "list_challenges"))["challenges"]
    listing_b = tool_data(call_tool(gateway, session_b, "list_challenges"))["challenges"]
    assert {c["challenge_id"]: c["solved"] for c in listing_a}[1] is True
    # agent-b sees the same challenge as unsolved: nobody else's solves leak
    assert {c["challenge_id"]: c["solved"] for c in listing_b}[1] is False


def test_get_challenge_detail(mock_server_with_files, tmp_path):
    gateway, _, _ = build_gateway(mock_server_with_files, tmp_path)
    session = gateway.create_session("tok-a")
    detail = tool_data(call_tool(gateway, session, "get_challenge", challenge_id=1))
    assert detail["name"] == "challenge-1"
    assert detail["category"] == "pwn"
    assert detail["description"] == "find flag 1"
    assert detail["solved"] is False
    assert [f["file_name"] for f in detail["files"]] == ["task1.bin", "notes1.txt"]


def test_submit_flag_hides_verdict_source(mock_server, tmp_path):
    gateway, _, _ = build_gateway(mock_server, tmp_path)
    session_a = gateway.create_session("tok-a")
    session_b = gateway.create_session("tok-b")
    call_tool(gateway, session_a, "list_challenges")

    first = tool_data(call_tool(gateway, session_a, "submit_flag",
                                challenge_id=2, flag="flag{answer-2}"))
    assert first == {"correct": True, "status": "correct", "message": "Correct"}
    # agent-b gets a ledger answer that is indistinguishable from upstream
    second = tool_data(call_tool(gateway, session_b, "submit_flag",
                                 challenge_id=2, flag="flag{answer-2}"))
    assert second == {"correct": True, "status": "correct", "message": "Correct"}
    assert "source" not in second
    posts = [e for e in mock_server.journal() if e.method == "POST"]
    assert len(posts) == 1

    wrong = tool_data(call_tool(gateway, session_b, "submit_flag",
                                challenge_id=3, flag="flag{no}"))
    assert wrong["correct"] is False
    assert wrong["status"] == "incorrect"


def test_submit_flag_unknown_challenge_is_tool_error(mock_server, tmp_path):
    gateway, _, _ = build_gateway(mock_server, tmp_path)
    session = gateway.create_session("tok-a")
    call_tool(gateway, session, "list_challenges")
    result = call_tool(gateway, session, "submit_flag", challenge_id=77, flag="flag{x}")
    assert result["isError"]
    assert "unknown challenge" in result["structuredContent"]["error"]
    assert result["structuredContent"]["retryable"] is False


def test_bad_arguments_are_tool_errors(mock_server, tmp_path):
    gateway, _, _ = build_gateway(mock_server, tmp_path)
    session = gateway.create_session("tok-a")
    missing = call_tool(gateway, session, "get_challenge")
    assert missing["isError"]
    assert "challenge_id" in missing["structuredContent"]["error"]
    not_str = call_tool(gateway, session, "submit_flag", challenge_id=1, flag=7)
    assert not_str["isError"]
    assert "'flag'" in not_str["structuredContent"]["error"]


def test_download_file_inline(mock_server_with_files, tmp_path):
    gateway, _, _ = build_gateway(mock_server_with_files, tmp_path)
    session = gateway.create_session("tok-a")
    payload = tool_data(call_tool(gateway, session, "download_file",
                                  challenge_id=1, file_name="task1.bin"))
    assert base64.b64decode(payload["content_base64"]) == b"binary payload 1"
    assert payload["size_bytes"] == len(b"binary payload 1")
    assert "cache_path" not in payload


def test_download_file_large_returns_cache_path(mock_server_with_files, tmp_path):
    gateway, _, _ = build_gateway(mock_server_with_files, tmp_path, inline_limit=8)
    session = gateway.create_session("tok-a")
    payload = tool_data(call_tool(gateway, session, "download_file",
                                  challenge_id=1, file_name="task1.bin"))
    assert "content_base64" not in payload
    from pathlib import Path

    assert Path(payload["cache_path"]).read_bytes() == b"binary payload 1"


def test_download_file_deduplicates_across_agents(mock_server_with_files, tmp_path):
    gateway, _, _ = build_gateway(mock_server_with_files, tmp_path)
    session_a = gateway.create_session("tok-a")
    session_b = gateway.create_session("tok-b")
    detail = tool_data(call_tool(gateway, session_a, "get_challenge", challenge_id=2))
    url_path = detail["files"][0]["url_path"]
    for session in (session_a, session_b, session_a):
        tool_data(call_tool(gateway, session, "download_file",
                            challenge_id=2, file_name="task2.bin"))
    hits = [e for e in mock_server_with_files.journal() if e.path == url_path]
    assert len(hits) == 1


def test_download_file_unknown_name_lists_available(mock_server_with_files, tmp_path):
    gateway, _, _ = build_gateway(mock_server_with_files, tmp_path)
    session = gateway.create_session("tok-a")
    result = call_tool(gateway, session, "download_file",
                       challenge_id=1, file_name="ghost.bin")
    assert result["isError"]
    assert "task1.bin" in result["structuredContent"]["error"]


def test_quota_exhaustion_text(mock_server, tmp_path):
    gateway, _, _ = build_gateway(mock_server, tmp_path, quota=1)
    session = gateway.create_session("tok-a")
    call_tool(gateway, session, "list_challenges")
    call_tool(gateway, session, "submit_flag", challenge_id=1, flag="flag{w1}")
    result = call_tool(gateway, session, "submit_flag", challenge_id=1, flag="flag{w2}")
    assert result["isError"]
    assert result["structuredContent"]["error"] == "submission quota exhausted"
    assert result["structuredContent"]["retryable"] is False


def test_rate_limited_surfaces_retry_after(tmp_path):
    fixture = build_fixture(rate_limit={"max_requests": 1, "window_s": 60})
    with MockCtfd(fixture) as mock:
        gateway, _, client = build_gateway(mock, tmp_path)
        session = gateway.create_session("tok-a")
        call_tool(gateway, session, "list_challenges")
        call_tool(gateway, session, "submit_flag", challenge_id=1, flag="flag{w}")
        result = call_tool(gateway, session, "submit_flag", challenge_id=2, flag="flag{w}")
        assert result["isError"]
        sc = result["structuredContent"]
        assert sc["retryable"] is True
        assert sc["retry_after_s"] == 60.0
        client.close()


def test_transient_upstream_is_retryable(tmp_path):
    fixture = build_fixture(
        fault_plan=[{"match": "POST /api/v1/challenges/attempt", "behavior": "http_500"}]
    )
    with MockCtfd(fixture) as mock:
        gateway, _, client = build_gateway(mock, tmp_path)
        session = gateway.create_session("tok-a")
        call_tool(gateway, session, "list_challenges")
        result = call_tool(gateway, session, "submit_flag",
                           challenge_id=1, flag="flag{answer-1}")
        assert result["isError"]
        assert result["structuredContent"]["retryable"] is True
        retry = tool_data(call_tool(gateway, session, "submit_flag",
                                    challenge_id=1, flag="flag{answer-1}"))
        assert retry["correct"] is True
        client.close()


def test_authorize_hook_refuses_tool_calls(mock_server, tmp_path):
    refusals = {"agent-a": "attempt already over"}
    gateway, _, _ = build_gateway(mock_server, tmp_path,
                                  authorize=lambda agent: refusals.get(agent))
    session_a = gateway.create_session("tok-a")
    session_b = gateway.create_session("tok-b")
    refused = call_tool(gateway, session_a, "list_challenges")
    assert refused["isError"]
    assert refused["structuredContent"]["error"] == "refused: attempt already over"
    assert not call_tool(gateway, session_b, "list_challenges").get("isError")


def test_activity_and_submission_hooks(mock_server, tmp_path):
    activity: list[tuple[str, str]] = []
    submissions: list[tuple[str, int, bool]] = []
    gateway, _, _ = build_gateway(
        mock_server, tmp_path,
        on_activity=lambda agent, tool: activity.append((agent, tool)),
        on_submission=lambda agent, cid, outcome: submissions.append(
            (agent, cid, outcome.correct)),
    )
    session = gateway.create_session("tok-a")
    call_tool(gateway, session, "list_challenges")
    call_tool(gateway, session, "submit_flag", challenge_id=1, flag="flag{answer-1}")
    call_tool(gateway, session, "submit_flag", challenge_id=2, flag="flag{w}")
    assert activity == [
        ("agent-a", "list_challenges"),
        ("agent-a", "submit_flag"),
        ("agent-a", "submit_flag"),
    ]
    assert submissions == [("agent-a", 1, True), ("agent-a", 2, False)]


def test_audit_log_counts_every_message(mock_server, tmp_path):
    gateway, _, _ = build_gateway(mock_server, tmp_path)
    session = gateway.create_session("tok-a")
    messages = [
        rpc("initialize"),
        rpc("notifications/initialized", rpc_id=None),
        rpc("tools/list"),
        rpc("tools/call", name="list_challenges", arguments={}),
        None,
        rpc("nope/nope"),
    ]
    for message in messages:
        gateway.handle(message, session)
    assert len(gateway.audit) == len(messages)
    entries = gateway.audit.snapshot()
    assert entries[3].payload["tool"] == "list_challenges"
    assert entries[3].payload["agent_id"] == "agent-a"
    assert entries[2].payload["tool"] is None


def test_handle_http_audits_every_branch(mock_server, tmp_path):
    gateway, _, _ = build_gateway(mock_server, tmp_path)
    calls = 0

    # parse failure
    status, body, _ = gateway.handle_http(None, None, None)
    calls += 1
    assert status == 400 and body["error"]["code"] == PARSE_ERROR
    # auth failure on initialize
    status, body, _ = gateway.handle_http(rpc("initialize"), None, "Bearer wrong")
    calls += 1
    assert status == 401
    # successful initialize issues a session id
    status, body, session_id = gateway.handle_http(rpc("initialize"), None, "Bearer tok-a")
    calls += 1
    assert status == 200 and session_id
    # unknown session
    status, body, _ = gateway.handle_http(rpc("tools/list"), "bogus", None)
    calls += 1
    assert status == 404
    # notification: accepted, no body
    status, body, _ = gateway.handle_http(
        rpc("notifications/initialized", rpc_id=None), session_id, None)
    calls += 1
    assert status == 202 and body is None
    # normal request
    status, body, _ = gateway.handle_http(rpc("tools/list"), session_id, None)
    calls += 1
    assert status == 200 and "tools" in body["result"]

    assert len(gateway.audit) == calls


def test_initialize_token_fallback_in_params(mock_server, tmp_path):
    gateway, _, _ = build_gateway(mock_server, tmp_path)
    status, body, session_id = gateway.handle_http(
        rpc("initialize", agentToken="tok-b"), None, None)
    assert status == 200
    assert gateway.get_session(session_id).agent_id == "agent-b"


def test_http_server_round_trip(mock_server, tmp_path):
    gateway, _, _ = build_gateway(mock_server, tmp_path)
    with McpHttpServer(gateway) as server:
        assert server.started
        assert server.endpoint.endswith("/mcp")
        with httpx.Client(base_url=server.base_url) as http:
            init = http.post("/mcp", json=rpc("initialize"),
                             headers={"Authorization": "Bearer tok-a"})
            assert init.status_code == 200
            session_id = init.headers["Mcp-Session-Id"]
            assert init.json()["result"]["protocolVersion"] == PROTOCOL_VERSION

            headers = {"Mcp-Session-Id": session_id}
            note = http.post("/mcp", json=rpc("notifications/initialized", rpc_id=None),
                             headers=headers)
            assert note.status_code == 202
            assert note.content == b""

            tools = http.post("/mcp", json=rpc("tools/list"), headers=headers)
            assert tools.status_code == 200
            assert len(tools.json()["result"]["tools"]) == 4

            lost = http.post("/mcp", json=rpc("tools/list"),
                             headers={"Mcp-Session-Id": "expired"})
            assert lost.status_code == 404

            garbage = http.post("/mcp", content=b"{{{", headers=headers)
            assert garbage.status_code == 400

            wrong_path = http.post("/elsewhere", json=rpc("tools/list"))
            assert wrong_path.status_code == 404

            get = http.get("/mcp")
            assert get.status_code == 405


def test_stdio_transport(mock_server, tmp_path):
    gateway, _, _ = build_gateway(mock_server, tmp_path)
    lines = [
        json.dumps(rpc("initialize")),
        json.dumps(rpc("notifications/initialized", rpc_id=None)),
        json.dumps(rpc("tools/list", rpc_id=2)),
        json.dumps(rpc("tools/call", rpc_id=3, name="list_challenges", arguments={})),
    ]
    stdout = io.StringIO()
    serve_stdio(gateway, "tok-a", stdin=io.StringIO("\n".join(lines) + "\n"), stdout=stdout)
    responses = [json.loads(line) for line in stdout.getvalue().splitlines()]
    # the notification produced no output line
    assert [r["id"] for r in responses] == [1, 2, 3]
    assert responses[1]["result"]["tools"]
    assert len(gateway.audit) == len(lines)


def test_stdio_auth_failure_is_reported_and_audited(mock_server, tmp_path):
    gateway, _, _ = build_gateway(mock_server, tmp_path)
    stdout = io.StringIO()
    serve_stdio(gateway, "bad-token",
                stdin=io.StringIO(json.dumps(rpc("initialize")) + "\n"), stdout=stdout)
    response = json.loads(stdout.getvalue().splitlines()[0])
    assert response["error"]["code"] == SESSION_ERROR
    assert len(gateway.audit) == 1
