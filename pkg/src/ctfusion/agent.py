"""Scripted agents: deterministic tool-call sequences against the gateway.

A script is a JSON list of steps. Four step kinds are the gateway tools;
three are control-plane actions (report_cost, sleep, give_up) that reach
the orchestrator, not the platform. Scripts produce a transcript of every
step and its structured result, so the same script against the same
fixture yields the same transcript.

Two gateway connections exist: in-process loopback (the default runner
path) and HTTP (for agents in separate processes). Both speak the same
protocol messages, so the gateway cannot tell them apart.
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import httpx

from .gateway import PROTOCOL_VERSION, AuthFailure, McpGateway, Session
from .model import InputRejected

TOOL_ACTIONS = ("list_challenges", "get_challenge", "download_file", "submit_flag")
CONTROL_ACTIONS = ("report_cost", "sleep", "give_up")
CURRENT_CHALLENGE = "$current"

CLIENT_INFO = {"name": "ctfusion-agent", "version": "0.1.0"}


class GatewayRefusal(RuntimeError):
    """The gateway answered with a protocol-level error."""

    def __init__(self, message: str, code: int | None = None):
        super().__init__(message)
        self.code = code


@dataclass(frozen=True)
class ScriptStep:
    action: str
    args: dict[str, Any] = field(default_factory=dict)
    fatal: bool = True

    def __post_init__(self):
        if self.action not in TOOL_ACTIONS + CONTROL_ACTIONS:
            raise InputRejected(f"unknown script action {self.action!r}")


@dataclass(frozen=True)
class AgentScript:
    name: str
    steps: tuple[ScriptStep, ...]


def script_from_dict(raw: dict[str, Any]) -> AgentScript:
    steps = []
    for entry in raw.get("steps", []):
        entry = dict(entry)
        action = entry.pop("action")
        fatal = bool(entry.pop("fatal", True))
        steps.append(ScriptStep(action=action, args=entry, fatal=fatal))
    return AgentScript(name=str(raw.get("name", "script")), steps=tuple(steps))


def load_script(path: str | Path) -> AgentScript:
    return script_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# -- gateway connections ---------------------------------------------------


class LoopbackConnection:
    """Direct in-process protocol exchange with a gateway core."""

    def __init__(self, gateway: McpGateway, token: str):
        self._gateway = gateway
        self._token = token
        self._session: Session | None = None
        self._next_id = 0

    def _rpc_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def _exchange(self, message: dict) -> dict | None:
        response = self._gateway.handle(message, self._session)
        if response is not None and "error" in response:
            error = response["error"]
            raise GatewayRefusal(error.get("message", "gateway error"), error.get("code"))
        return response

    def initialize(self) -> dict:
        try:
            self._session = self._gateway.create_session(self._token)
        except AuthFailure as exc:
            # same shape an HTTP client sees: a refusal, not a crash
            raise GatewayRefusal(str(exc)) from exc
        response = self._exchange({
            "jsonrpc": "2.0", "id": self._rpc_id(), "method": "initialize",
            "params": {"protocolVersion": PROTOCOL_VERSION, "capabilities": {},
                       "clientInfo": CLIENT_INFO},
        })
        self._exchange({"jsonrpc": "2.0", "method": "notifications/initialized"})
        return response["result"]

    def list_tools(self) -> list[dict]:
        response = self._exchange(
            {"jsonrpc": "2.0", "id": self._rpc_id(), "method": "tools/list"}
        )
        return response["result"]["tools"]

    def call_tool(self, name: str, arguments: dict) -> dict:
        response = self._exchange({
            "jsonrpc": "2.0", "id": self._rpc_id(), "method": "tools/call",
            "params": {"name": name, "arguments": arguments},
        })
        return response["result"]

    def close(self) -> None:
        pass


class HttpConnection:
    """Protocol exchange over the gateway's HTTP endpoint."""

    def __init__(self, endpoint: str, token: str, timeout_s: float = 30.0):
        self._endpoint = endpoint
        self._token = token
        self._http = httpx.Client(timeout=timeout_s)
        self._session_id: str | None = None
        self._next_id = 0

    def _rpc_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def _exchange(self, message: dict) -> dict | None:
        headers = {}
        if self._session_id is None:
            headers["Authorization"] = f"Bearer {self._token}"
        else:
            headers["Mcp-Session-Id"] = self._session_id
        response = self._http.post(self._endpoint, json=message, headers=headers)
        session_id = response.headers.get("Mcp-Session-Id")
        if session_id:
            self._session_id = session_id
        if response.status_code == 202:
            return None
        body = response.json()
        if "error" in body:
            error = body["error"]
            raise GatewayRefusal(error.get("message", "gateway error"), error.get("code"))
        return body

    def initialize(self) -> dict:
        response = self._exchange({
            "jsonrpc": "2.0", "id": self._rpc_id(), "method": "initialize",
            "params": {"protocolVersion": PROTOCOL_VERSION, "capabilities": {},
                       "clientInfo": CLIENT_INFO},
        })
        self._exchange({"jsonrpc": "2.0", "method": "notifications/initialized"})
        return response["result"]

    def list_tools(self) -> list[dict]:
        response = self._exchange(
            {"jsonrpc": "2.0", "id": self._rpc_id(), "method": "tools/list"}
        )
        return response["result"]["tools"]

    def call_tool(self, name: str, arguments: dict) -> dict:
        response = self._exchange({
            "jsonrpc": "2.0", "id": self._rpc_id(), "method": "tools/call",
            "params": {"name": name, "arguments": arguments},
        })
        return response["result"]

    def close(self) -> None:
        self._http.close()


# -- harness ---------------------------------------------------------------


@dataclass(frozen=True)
class StepResult:
    index: int
    action: str
    arguments: dict[str, Any]
    ok: bool
    payload: dict[str, Any] | None = None
    error: str | None = None


@dataclass(frozen=True)
class AgentTranscript:
    script_name: str
    steps: tuple[StepResult, ...]
    gave_up: bool = False
    aborted: bool = False
    cancelled: bool = False


class ScriptedAgent:
    """Runs one script over a connection, with control-plane callbacks.

    challenge_id fills the $current placeholder in step arguments.
    report_cost receives cumulative totals; give_up takes a reason string.
    cancel, when set, stops the script between steps.
    """

    def __init__(
        self,
        connection,
        challenge_id: int | None = None,
        report_cost: Callable[[str], None] | None = None,
        give_up: Callable[[str], None] | None = None,
        sleep: Callable[[float], None] = time.sleep,
        cancel: threading.Event | None = None,
    ):
        self._connection = connection
        self._challenge_id = challenge_id
        self._report_cost = report_cost
        self._give_up = give_up
        self._sleep = sleep
        self._cancel = cancel

    def _fill(self, args: dict[str, Any]) -> dict[str, Any]:
        filled = {}
        for key, value in args.items():
            if value == CURRENT_CHALLENGE:
                if self._challenge_id is None:
                    raise InputRejected("script uses $current but no challenge is assigned")
                value = self._challenge_id
            filled[key] = value
        return filled

    def run(self, script: AgentScript) -> AgentTranscript:
        results: list[StepResult] = []
        gave_up = False
        aborted = False
        cancelled = False
        try:
            self._connection.initialize()
        except (GatewayRefusal, httpx.HTTPError) as exc:
            return AgentTranscript(
                script.name,
                (StepResult(0, "initialize", {}, ok=False, error=str(exc)),),
                aborted=True,
            )
        for index, step in enumerate(script.steps, start=1):
            if self._cancel is not None and self._cancel.is_set():
                cancelled = True
                break
            result = self._run_step(index, step)
            results.append(result)
            if step.action == "give_up" and result.ok:
                gave_up = True
                break
            if not result.ok and step.fatal:
                aborted = True
                break
        self._connection.close()
        return AgentTranscript(
            script.name, tuple(results),
            gave_up=gave_up, aborted=aborted, cancelled=cancelled,
        )

    def _run_step(self, index: int, step: ScriptStep) -> StepResult:
        try:
            args = self._fill(step.args)
        except InputRejected as exc:
            return StepResult(index, step.action, step.args, ok=False, error=str(exc))
        if step.action in TOOL_ACTIONS:
            return self._run_tool(index, step.action, args)
        if step.action == "sleep":
            self._sleep(float(args.get("seconds", 0)))
            return StepResult(index, "sleep", args, ok=True)
        if step.action == "report_cost":
            if self._report_cost is None:
                return StepResult(index, "report_cost", args, ok=False,
                                  error="no cost sink attached")
            try:
                self._report_cost(str(args["total_usd"]))
            except (InputRejected, KeyError) as exc:
                return StepResult(index, "report_cost", args, ok=False, error=str(exc))
            return StepResult(index, "report_cost", args, ok=True)
        # give_up
        if self._give_up is None:
            return StepResult(index, "give_up", args, ok=False,
                              error="no give-up sink attached")
        self._give_up(str(args.get("reason", "")))
        return StepResult(index, "give_up", args, ok=True)

    def _run_tool(self, index: int, name: str, args: dict[str, Any]) -> StepResult:
        try:
            result = self._connection.call_tool(name, args)
        except (GatewayRefusal, httpx.HTTPError) as exc:
            return StepResult(index, name, args, ok=False, error=str(exc))
        structured = result.get("structuredContent")
        if result.get("isError"):
            message = structured.get("error") if isinstance(structured, dict) else None
            if message is None:
                content = result.get("content") or [{}]
                message = content[0].get("text", "tool error")
            return StepResult(index, name, args, ok=False, payload=structured, error=message)
        return StepResult(index, name, args, ok=True, payload=structured)
