"""JSON-RPC tool server that agents talk to instead of the platform.

Exposes exactly four tools (list_challenges, get_challenge, download_file,
submit_flag) over the 2024-11-05 tool-calling protocol, on either an HTTP
endpoint or stdio. Each session is bound to one agent identity at
initialize time via a pre-shared token; nothing an agent sends can name a
different agent, so cross-agent isolation holds by construction.

All platform traffic goes through the submission proxy and the shared
artifact cache. Every transport request is recorded in an audit log.
"""

from __future__ import annotations

import base64
import json
import sys
import threading
import uuid
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable

from .ctfd import (
    MissingArtifactError,
    RateLimitedUpstream,
    TransientUpstreamError,
    UpstreamError,
)
from .journal import EventLog
from .model import AgentId, ChallengeRecord, InputRejected
from .proxy import QuotaExhausted, SubmissionOutcome, SubmissionProxy

PROTOCOL_VERSION = "2024-11-05"
SERVER_INFO = {"name": "ctfusion-gateway", "version": "0.1.0"}
INLINE_CONTENT_LIMIT = 25 * 1024 * 1024

PARSE_ERROR = -32700
INVALID_REQUEST = -32600
METHOD_NOT_FOUND = -32601
INVALID_PARAMS = -32602
SESSION_ERROR = -32001

TOOL_SPECS: list[dict[str, Any]] = [
    {
        "name": "list_challenges",
        "description": "List all visible challenges with your solve status.",
        "inputSchema": {"type": "object", "properties": {}, "additionalProperties": False},
    },
    {
        "name": "get_challenge",
        "description": "Full detail for one challenge: description, connection info, files.",
        "inputSchema": {
            "type": "object",
            "properties": {"challenge_id": {"type": "integer"}},
            "required": ["challenge_id"],
        },
    },
    {
        "name": "download_file",
        "description": "Download a challenge file. Large files come back as a local path.",
        "inputSchema": {
            "type": "object",
            "properties": {
                "challenge_id": {"type": "integer"},
                "file_name": {"type": "string"},
            },
            "required": ["challenge_id", "file_name"],
        },
    },
    {
        "name": "submit_flag",
        "description": "Submit a candidate flag for a challenge and get the verdict.",
        "inputSchema": {
            "type": "object",
            "properties": {
                "challenge_id": {"type": "integer"},
                "flag": {"type": "string"},
            },
            "required": ["challenge_id", "flag"],
        },
    },
]

TOOL_NAMES = tuple(spec["name"] for spec in TOOL_SPECS)


class AuthFailure(Exception):
    """Presented token does not map to any agent."""


@dataclass
class Session:
    session_id: str
    agent_id: AgentId
    initialized: bool = False


def _result(rpc_id: Any, result: dict) -> dict:
    return {"jsonrpc": "2.0", "id": rpc_id, "result": result}


def _error(rpc_id: Any, code: int, message: str) -> dict:
    return {"jsonrpc": "2.0", "id": rpc_id, "error": {"code": code, "message": message}}


def _tool_payload(payload: dict) -> dict:
    return {
        "content": [{"type": "text", "text": json.dumps(payload, sort_keys=True)}],
        "structuredContent": payload,
    }


def _tool_error(message: str, retryable: bool = False,
                retry_after_s: float | None = None) -> dict:
    structured: dict[str, Any] = {"error": message, "retryable": retryable}
    if retry_after_s is not None:
        structured["retry_after_s"] = retry_after_s
    return {
        "content": [{"type": "text", "text": message}],
        "structuredContent": structured,
        "isError": True,
    }


class McpGateway:
    """Transport-independent core: sessions, dispatch, tools, audit.

    Hooks, all optional:
      authorize(agent_id) -> refusal reason or None, consulted per tool call
      on_activity(agent_id, tool_name), fired before a tool runs
      on_submission(agent_id, challenge_id, outcome), fired after the proxy
      accepts a submission
    """

    def __init__(
        self,
        proxy: SubmissionProxy,
        client,
        tokens: dict[str, AgentId],
        audit: EventLog | None = None,
        authorize: Callable[[AgentId], str | None] | None = None,
        on_activity: Callable[[AgentId, str], None] | None = None,
        on_submission: Callable[[AgentId, int, SubmissionOutcome], None] | None = None,
        inline_limit: int = INLINE_CONTENT_LIMIT,
    ):
        self._proxy = proxy
        self._client = client
        self._tokens = dict(tokens)
        self.audit = audit if audit is not None else EventLog()
        self.authorize = authorize
        self.on_activity = on_activity
        self.on_submission = on_submission
        self._inline_limit = inline_limit
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    # -- sessions ----------------------------------------------------------

    def create_session(self, token: str | None) -> Session:
        with self._lock:
            agent_id = self._tokens.get(token or "")
        if agent_id is None:
            raise AuthFailure("unknown agent token")
        session = Session(session_id=uuid.uuid4().hex, agent_id=agent_id)
        self._proxy.register_agent(agent_id)
        with self._lock:
            self._sessions[session.session_id] = session
        return session

    def get_session(self, session_id: str | None) -> Session | None:
        with self._lock:
            return self._sessions.get(session_id or "")

    def add_token(self, token: str, agent_id: AgentId) -> None:
        with self._lock:
            self._tokens[token] = agent_id

    # -- dispatch ----------------------------------------------------------

    def _record(self, message: Any, session: Session | None) -> None:
        method = message.get("method") if isinstance(message, dict) else None
        params = message.get("params") if isinstance(message, dict) else None
        tool = params.get("name") if isinstance(params, dict) else None
        self.audit.append(
            "request",
            method=method,
            tool=tool if method == "tools/call" else None,
            agent_id=session.agent_id if session else None,
        )

    def handle(self, message: Any, session: Session | None) -> dict | None:
        """Process one protocol message; None means no response (notification)."""
        self._record(message, session)
        if message is None:
            return _error(None, PARSE_ERROR, "parse error")
        if not isinstance(message, dict) or "method" not in message:
            return _error(None, INVALID_REQUEST, "invalid request")
        method = message["method"]
        rpc_id = message.get("id")
        params = message.get("params") or {}

        if method.startswith("notifications/"):
            if method == "notifications/initialized" and session is not None:
                session.initialized = True
            return None
        if session is None:
            return _error(rpc_id, SESSION_ERROR, "no session; initialize first")
        if method == "initialize":
            return _result(rpc_id, {
                "protocolVersion": PROTOCOL_VERSION,
                "capabilities": {"tools": {"listChanged": False}},
                "serverInfo": SERVER_INFO,
            })
        if method == "tools/list":
            return _result(rpc_id, {"tools": TOOL_SPECS})
        if method == "tools/call":
            name = params.get("name")
            if name not in TOOL_NAMES:
                return _error(rpc_id, INVALID_PARAMS, f"unknown tool {name!r}")
            return _result(rpc_id, self._call_tool(session, name, params.get("arguments") or {}))
        return _error(rpc_id, METHOD_NOT_FOUND, f"unknown method {method!r}")

    def _call_tool(self, session: Session, name: str, arguments: dict) -> dict:
        agent_id = session.agent_id
        if self.authorize is not None:
            refusal = self.authorize(agent_id)
            if refusal:
                return _tool_error(f"refused: {refusal}")
        if self.on_activity is not None:
            self.on_activity(agent_id, name)
        try:
            if name == "list_challenges":
                payload = self._list_challenges(agent_id)
            elif name == "get_challenge":
                payload = self._get_challenge(agent_id, _arg_int(arguments, "challenge_id"))
            elif name == "download_file":
                payload = self._download_file(
                    agent_id,
                    _arg_int(arguments, "challenge_id"),
                    _arg_str(arguments, "file_name"),
                )
            else:
                payload = self._submit_flag(
                    agent_id,
                    _arg_int(arguments, "challenge_id"),
                    _arg_str(arguments, "flag"),
                )
        except QuotaExhausted:
            return _tool_error("submission quota exhausted")
        except RateLimitedUpstream as exc:
            return _tool_error(str(exc), retryable=True, retry_after_s=exc.retry_after_s)
        except TransientUpstreamError as exc:
            return _tool_error(f"upstream unavailable, try again: {exc}", retryable=True)
        except MissingArtifactError as exc:
            return _tool_error(str(exc))
        except UpstreamError as exc:
            return _tool_error(f"upstream error: {exc}")
        except InputRejected as exc:
            return _tool_error(str(exc))
        return _tool_payload(payload)

    # -- tools -------------------------------------------------------------

    def _list_challenges(self, agent_id: AgentId) -> dict:
        records = self._client.list_challenges()
        self._proxy.update_catalog(records)
        view = self._proxy.solved_view(agent_id)
        return {
            "challenges": [
                {
                    "challenge_id": r.challenge_id,
                    "name": r.name,
                    "category": r.category,
                    "points": r.points,
                    "solved": r.challenge_id in view,
                }
                for r in records
            ]
        }

    def _get_challenge(self, agent_id: AgentId, challenge_id: int) -> dict:
        record = self._client.get_challenge(challenge_id)
        self._proxy.update_catalog([record])
        view = self._proxy.solved_view(agent_id)
        return {
            "challenge_id": record.challenge_id,
            "name": record.name,
            "category": record.category,
            "points": record.points,
            "description": record.description,
            "connection_info": record.connection_info,
            "flag_format": record.flag_format,
            "files": [
                {"file_name": ref.file_name, "url_path": ref.url_path}
                for ref in record.artifact_refs
            ],
            "solved": record.challenge_id in view,
        }

    def _resolve_record(self, challenge_id: int) -> ChallengeRecord:
        record = self._proxy.catalog().get(challenge_id)
        if record is None:
            record = self._client.get_challenge(challenge_id)
            self._proxy.update_catalog([record])
        return record

    def _download_file(self, agent_id: AgentId, challenge_id: int, file_name: str) -> dict:
        record = self._resolve_record(challenge_id)
        ref = next((r for r in record.artifact_refs if r.file_name == file_name), None)
        if ref is None:
            names = sorted(r.file_name for r in record.artifact_refs)
            raise InputRejected(
                f"challenge {challenge_id} has no file {file_name!r}; available: {names}"
            )
        entry = self._client.download_artifact(ref)
        payload = {
            "challenge_id": challenge_id,
            "file_name": file_name,
            "sha256": entry.sha256,
            "size_bytes": entry.size_bytes,
        }
        if entry.size_bytes <= self._inline_limit:
            payload["content_base64"] = base64.b64encode(
                self._client.cache.read(entry)
            ).decode("ascii")
        else:
            # too big to inline; the cache path is on the same host
            payload["cache_path"] = entry.local_path
        return payload

    def _submit_flag(self, agent_id: AgentId, challenge_id: int, flag: str) -> dict:
        outcome = self._proxy.submit(agent_id, challenge_id, flag)
        if self.on_submission is not None:
            self.on_submission(agent_id, challenge_id, outcome)
        # the source of the verdict is deliberately not exposed: an agent
        # cannot tell a ledger check from a platform round trip
        return {
            "correct": outcome.verdict.correct,
            "status": outcome.verdict.raw_status,
            "message": outcome.verdict.message,
        }

    # -- transport adapters ------------------------------------------------

    def handle_http(
        self,
        message: Any,
        session_id: str | None,
        authorization: str | None,
    ) -> tuple[int, dict | None, str | None]:
        """One HTTP POST in, (status, body, new session id) out.

        Exactly one audit entry is written per call, whatever the branch.
        """
        if message is None:
            self._record(None, None)
            return 400, _error(None, PARSE_ERROR, "parse error"), None
        method = message.get("method") if isinstance(message, dict) else None
        if method == "initialize" and session_id is None:
            token = _bearer_token(authorization)
            if token is None and isinstance(message, dict):
                token = (message.get("params") or {}).get("agentToken")
            try:
                session = self.create_session(token)
            except AuthFailure as exc:
                self._record(message, None)
                return 401, _error(message.get("id"), SESSION_ERROR, str(exc)), None
            return 200, self.handle(message, session), session.session_id
        session = self.get_session(session_id)
        if session is None:
            self._record(message, None)
            rpc_id = message.get("id") if isinstance(message, dict) else None
            return 404, _error(rpc_id, SESSION_ERROR, "unknown or expired session"), None
        response = self.handle(message, session)
        if response is None:
            return 202, None, None
        return 200, response, None


def _bearer_token(authorization: str | None) -> str | None:
    if not authorization:
        return None
    scheme, _, value = authorization.partition(" ")
    if scheme.lower() == "bearer" and value:
        return value
    return None


def _arg_int(arguments: dict, key: str) -> int:
    try:
        return int(arguments[key])
    except (KeyError, TypeError, ValueError):
        raise InputRejected(f"argument {key!r} must be an integer") from None


def _arg_str(arguments: dict, key: str) -> str:
    value = arguments.get(key)
    if not isinstance(value, str):
        raise InputRejected(f"argument {key!r} must be a string")
    return value


class McpHttpServer:
    """HTTP wrapper: POST /mcp carries the protocol, sessions ride a header."""

    def __init__(self, gateway: McpGateway, listen: str = "127.0.0.1:0"):
        self.gateway = gateway
        host, _, port = listen.partition(":")
        self._listen = (host or "127.0.0.1", int(port or 0))
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    def start(self) -> "McpHttpServer":
        if self._server is not None:
            return self
        handler = _make_handler(self.gateway)
        self._server = ThreadingHTTPServer(self._listen, handler)
        self._thread = threading.Thread(target=self._server.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self) -> None:
        if self._server is not None:
            self._server.shutdown()
            self._server.server_close()
            self._server = None
            self._thread = None

    def __enter__(self) -> "McpHttpServer":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    @property
    def started(self) -> bool:
        return self._server is not None

    @property
    def base_url(self) -> str:
        assert self._server is not None, "server not started"
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    @property
    def endpoint(self) -> str:
        return f"{self.base_url}/mcp"


def _make_handler(gateway: McpGateway):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        server_version = "CtfusionGateway/0.1"

        def log_message(self, *args):
            pass

        def do_POST(self):
            # drain the body before any response or keep-alive desyncs
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length) if length else b""
            if self.path.split("?", 1)[0] != "/mcp":
                self._respond(404, {"error": "not found"})
                return
            try:
                message = json.loads(body)
            except json.JSONDecodeError:
                message = None
            status, response, new_session = gateway.handle_http(
                message,
                self.headers.get("Mcp-Session-Id"),
                self.headers.get("Authorization"),
            )
            headers = {"Mcp-Session-Id": new_session} if new_session else {}
            self._respond(status, response, headers)

        def do_GET(self):
            self._respond(405, {"error": "POST only"})

        def _respond(self, status: int, payload: dict | None, headers: dict | None = None):
            body = json.dumps(payload).encode() if payload is not None else b""
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            for name, value in (headers or {}).items():
                self.send_header(name, value)
            self.end_headers()
            if body:
                self.wfile.write(body)

    return Handler


def serve_stdio(gateway: McpGateway, token: str, stdin=None, stdout=None) -> None:
    """Newline-delimited protocol over pipes; one session for the whole run."""
    stdin = stdin if stdin is not None else sys.stdin
    stdout = stdout if stdout is not None else sys.stdout
    session: Session | None = None
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        try:
            message = json.loads(line)
        except json.JSONDecodeError:
            message = None
        if (
            session is None
            and isinstance(message, dict)
            and message.get("method") == "initialize"
        ):
            try:
                session = gateway.create_session(token)
            except AuthFailure as exc:
                gateway._record(message, None)
                response = _error(message.get("id"), SESSION_ERROR, str(exc))
                stdout.write(json.dumps(response) + "\n")
                stdout.flush()
                continue
        response = gateway.handle(message, session)
        if response is not None:
            stdout.write(json.dumps(response) + "\n")
            stdout.flush()
