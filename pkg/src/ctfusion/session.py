"""Assembly of a live run: platform client, proxy, gateway, runners.

RunSession owns the full stack for one run: it resolves the competition
endpoint (real URL, or a fixture-backed local simulator), lists and
filters challenges, wires the gateway hooks into the orchestrator, starts
agent runners as attempts are scheduled, and writes the report bundle
when the run settles.

Runner backends:
  scripted: a thread running a script over a loopback or HTTP connection
  oci: a container started through the docker CLI, talking HTTP
"""

from __future__ import annotations

import json
import shutil
import subprocess
import threading
from pathlib import Path
from typing import Any

from .agent import AgentScript, AgentTranscript, HttpConnection, LoopbackConnection, ScriptedAgent, load_script, script_from_dict
from .clock import Clock, SystemClock
from .ctfd import ArtifactCache, CompetitionEndpoint, CtfdClient, ENV_CACHE_DIR
from .gateway import McpGateway, McpHttpServer
from .journal import EventLog
from .mockctfd import MockCtfd, load_fixture
from .model import InputRejected
from .orchestrator import AgentPlan, AttemptRecord, Orchestrator, RunPlan
from .proxy import SubmissionProxy
from .reporting import EvaluationReport, write_report

ENV_DATA_DIR = "CTFUSION_DATA_DIR"
ENV_MCP_LISTEN = "CTFUSION_MCP_LISTEN"

PROXY_JOURNAL = "proxy-events.jsonl"
RUN_JOURNAL = "run-events.jsonl"
AUDIT_JOURNAL = "gateway-audit.jsonl"


class RunnerHandle:
    """Cancellation surface for one launched attempt."""

    def __init__(self, attempt_id: str):
        self.attempt_id = attempt_id
        self.cancel = threading.Event()
        self.thread: threading.Thread | None = None
        self.container_id: str | None = None

    def stop(self) -> None:
        self.cancel.set()
        if self.container_id:
            subprocess.run(
                ["docker", "rm", "-f", self.container_id],
                capture_output=True, check=False,
            )

    def join(self, timeout: float | None = None) -> None:
        if self.thread is not None:
            self.thread.join(timeout)


def resolve_agent_script(runner: dict[str, Any], base_dir: Path | None = None) -> AgentScript:
    """Script may be a path, an inline script object, or a bare step list."""
    if "steps" in runner:
        return script_from_dict({"name": runner.get("name", "inline"), "steps": runner["steps"]})
    script = runner.get("script")
    if isinstance(script, dict):
        return script_from_dict(script)
    if isinstance(script, str):
        path = Path(script)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return load_script(path)
    raise InputRejected("scripted runner needs 'script' (path or object) or 'steps'")


def build_oci_command(runner: dict[str, Any], env: dict[str, str]) -> list[str]:
    """docker CLI invocation for a containerized agent; pure for testing."""
    image = runner.get("image")
    if not image:
        raise InputRejected("oci runner needs 'image'")
    command = ["docker", "run", "--detach", "--rm"]
    for key in sorted(env):
        command += ["--env", f"{key}={env[key]}"]
    for extra in runner.get("docker_args", []):
        command.append(str(extra))
    command.append(str(image))
    command += [str(part) for part in runner.get("command", [])]
    return command


class RunSession:
    """Everything needed to execute one RunPlan end to end."""

    def __init__(
        self,
        plan: RunPlan,
        data_dir: str | Path | None = None,
        clock: Clock | None = None,
        cache_dir: str | Path | None = None,
        mcp_listen: str | None = None,
        env: dict[str, str] | None = None,
        enable_watchdog: bool = True,
        plan_dir: Path | None = None,
    ):
        import os

        env = env if env is not None else dict(os.environ)
        self.plan = plan
        self.clock = clock or SystemClock()
        self.plan_dir = plan_dir
        data_root = Path(data_dir or env.get(ENV_DATA_DIR) or "ctfusion-data")
        self.run_dir = data_root / plan.run_id
        self.run_dir.mkdir(parents=True, exist_ok=True)

        self._mock: MockCtfd | None = None
        endpoint = self._resolve_endpoint(plan.ctfd, env)
        cache_root = Path(cache_dir or env.get(ENV_CACHE_DIR) or self.run_dir / "cache")
        self.client = CtfdClient(endpoint, ArtifactCache(cache_root))

        records = self.client.list_challenges()
        by_id = {r.challenge_id: r for r in records}
        if plan.challenge_ids is None:
            challenge_ids = tuple(r.challenge_id for r in records)
        else:
            missing = [c for c in plan.challenge_ids if c not in by_id]
            if missing:
                raise InputRejected(f"challenges not on the platform: {missing}")
            challenge_ids = plan.challenge_ids
        categories = {cid: by_id[cid].category for cid in challenge_ids}

        self.orchestrator = Orchestrator(
            plan,
            challenge_ids,
            categories=categories,
            clock=self.clock,
            journal=EventLog(self.run_dir / RUN_JOURNAL, now=self.clock.now),
        )
        self.proxy = SubmissionProxy(
            self.client,
            EventLog(self.run_dir / PROXY_JOURNAL, now=self.clock.now),
            quota=plan.submission_quota,
        )
        self.proxy.update_catalog(records)
        self.gateway = McpGateway(
            self.proxy,
            self.client,
            plan.tokens(),
            audit=EventLog(self.run_dir / AUDIT_JOURNAL, now=self.clock.now),
            authorize=self.orchestrator.authorize,
            on_activity=lambda agent_id, tool: self.orchestrator.note_activity(agent_id),
            on_submission=self.orchestrator.handle_submission,
        )
        self.orchestrator.on_terminal = self._on_terminal

        self._http: McpHttpServer | None = None
        listen = mcp_listen or env.get(ENV_MCP_LISTEN)
        if listen or self._needs_http():
            self._http = McpHttpServer(self.gateway, listen or "127.0.0.1:0")

        self.transcripts: dict[str, AgentTranscript] = {}
        self._handles: dict[str, RunnerHandle] = {}
        self._wake = threading.Event()
        self._stop_watchdog = threading.Event()
        self._watchdog: threading.Thread | None = None
        self._enable_watchdog = enable_watchdog
        self._started = False
        self._lock = threading.Lock()

    def _resolve_endpoint(self, ctfd: dict[str, Any], env: dict[str, str]) -> CompetitionEndpoint:
        if ctfd.get("fixture"):
            fixture_path = Path(ctfd["fixture"])
            if self.plan_dir is not None and not fixture_path.is_absolute():
                fixture_path = self.plan_dir / fixture_path
            fixture = load_fixture(fixture_path)
            self._mock = MockCtfd(fixture, clock=self.clock).start()
            return CompetitionEndpoint(
                base_url=self._mock.base_url,
                api_token=fixture.api_token or "local",
                session_cookie=None,
            )
        if ctfd.get("url"):
            return CompetitionEndpoint(
                base_url=ctfd["url"],
                api_token=ctfd.get("token"),
                session_cookie=ctfd.get("cookie") if not ctfd.get("token") else None,
            )
        return CompetitionEndpoint.from_env(env)

    def _needs_http(self) -> bool:
        return any(
            a.runner.get("kind") == "oci" or a.runner.get("transport") == "http"
            for a in self.plan.agents
        )

    @property
    def mcp_endpoint(self) -> str | None:
        if self._http is None or not self._http.started:
            return None
        return self._http.endpoint

    @property
    def mock(self) -> MockCtfd | None:
        return self._mock

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        with self._lock:
            if self._started:
                return
            self._started = True
        if self._http is not None:
            self._http.start()
        self.orchestrator.start_run()
        if self._enable_watchdog:
            self._watchdog = threading.Thread(target=self._watchdog_loop, daemon=True)
            self._watchdog.start()

    def run(self) -> EvaluationReport:
        self.start()
        try:
            while not self.orchestrator.all_settled():
                for record in self.orchestrator.step():
                    self._launch(record)
                self._wake.wait(0.05)
                self._wake.clear()
            return self.finalize()
        finally:
            self.shutdown()

    def finalize(self) -> EvaluationReport:
        report = self.orchestrator.finalize_run()
        write_report(report, self.run_dir / "report")
        transcript_dir = self.run_dir / "transcripts"
        if self.transcripts:
            transcript_dir.mkdir(exist_ok=True)
            for attempt_id, transcript in sorted(self.transcripts.items()):
                path = transcript_dir / f"{attempt_id}.json"
                path.write_text(_transcript_json(transcript), encoding="utf-8")
        return report

    def shutdown(self) -> None:
        self._stop_watchdog.set()
        for handle in list(self._handles.values()):
            handle.stop()
        for handle in list(self._handles.values()):
            handle.join(timeout=2.0)
        if self._http is not None:
            self._http.stop()
        if self._mock is not None:
            self._mock.stop()
        self.client.close()

    def _watchdog_loop(self) -> None:
        interval = min(1.0, max(0.05, self.plan.config.inactivity_timeout_s / 4))
        while not self._stop_watchdog.wait(interval):
            self.orchestrator.watchdog_tick()
            if self.orchestrator.all_settled():
                self._wake.set()
                return

    def _on_terminal(self, record: AttemptRecord) -> None:
        handle = self._handles.get(record.attempt_id)
        if handle is not None:
            handle.stop()
        self._wake.set()

    # -- runners -----------------------------------------------------------

    def _agent_plan(self, agent_id: str) -> AgentPlan:
        return next(a for a in self.plan.agents if a.agent_id == agent_id)

    def _launch(self, record: AttemptRecord) -> RunnerHandle:
        agent = self._agent_plan(record.agent_id)
        kind = agent.runner.get("kind", "scripted")
        handle = RunnerHandle(record.attempt_id)
        self._handles[record.attempt_id] = handle
        if kind == "scripted":
            self._launch_scripted(agent, record, handle)
        elif kind == "oci":
            self._launch_oci(agent, record, handle)
        else:
            raise InputRejected(f"unknown runner kind {kind!r} for agent {agent.agent_id!r}")
        return handle

    def _launch_scripted(self, agent: AgentPlan, record: AttemptRecord,
                         handle: RunnerHandle) -> None:
        script = resolve_agent_script(agent.runner, base_dir=self.plan_dir)
        if agent.runner.get("transport") == "http":
            assert self._http is not None
            connection: Any = HttpConnection(self._http.endpoint, agent.token)
        else:
            connection = LoopbackConnection(self.gateway, agent.token)
        runner = ScriptedAgent(
            connection,
            challenge_id=record.challenge_id,
            report_cost=lambda total: self.orchestrator.report_cost(record.attempt_id, total),
            give_up=lambda reason: self.orchestrator.agent_giveup(
                record.agent_id, record.challenge_id, reason
            ),
            sleep=lambda seconds: self.clock.sleep(seconds, handle.cancel),
            cancel=handle.cancel,
        )

        def target() -> None:
            self.transcripts[record.attempt_id] = runner.run(script)
            self._wake.set()

        handle.thread = threading.Thread(
            target=target, name=f"runner-{record.attempt_id}", daemon=True
        )
        handle.thread.start()

    def _launch_oci(self, agent: AgentPlan, record: AttemptRecord,
                    handle: RunnerHandle) -> None:
        if shutil.which("docker") is None:
            raise InputRejected("oci runner requires the docker CLI on PATH")
        assert self._http is not None
        env = {
            "CTFUSION_MCP_LISTEN": self._http.endpoint,
            "CTFUSION_AGENT_TOKEN": agent.token,
            "CTFUSION_ATTEMPT_ID": record.attempt_id,
            "CTFUSION_CHALLENGE_ID": str(record.challenge_id),
        }
        env.update(agent.runner.get("extra_env") or {})
        command = build_oci_command(agent.runner, env)
        result = subprocess.run(command, capture_output=True, text=True, check=False)
        if result.returncode != 0:
            raise RuntimeError(f"docker run failed: {result.stderr.strip()}")
        handle.container_id = result.stdout.strip()


def _transcript_json(transcript: AgentTranscript) -> str:
    return json.dumps(
        {
            "script": transcript.script_name,
            "gave_up": transcript.gave_up,
            "aborted": transcript.aborted,
            "cancelled": transcript.cancelled,
            "steps": [
                {
                    "index": s.index,
                    "action": s.action,
                    "arguments": s.arguments,
                    "ok": s.ok,
                    "payload": s.payload,
                    "error": s.error,
                }
                for s in transcript.steps
            ],
        },
        indent=2,
        sort_keys=True,
        ensure_ascii=False,
    ) + "\n"


class RunHub:
    """Registry of live and finished runs for the control surface."""

    def __init__(self, data_dir: str | Path | None = None, clock: Clock | None = None):
        self.data_dir = data_dir
        self.clock = clock
        self._sessions: dict[str, RunSession] = {}
        self._threads: dict[str, threading.Thread] = {}
        self._lock = threading.Lock()

    def add(self, session: RunSession) -> None:
        with self._lock:
            if session.plan.run_id in self._sessions:
                raise InputRejected(f"run {session.plan.run_id!r} already exists")
            self._sessions[session.plan.run_id] = session

    def start_plan(self, raw_plan: dict[str, Any], default_run_id: str = "",
                   plan_dir: Path | None = None) -> RunSession:
        from .orchestrator import plan_from_dict

        plan = plan_from_dict(raw_plan, default_run_id=default_run_id)
        session = RunSession(
            plan, data_dir=self.data_dir, clock=self.clock, plan_dir=plan_dir
        )
        self.add(session)
        # schedule the grid before returning so callers see it immediately;
        # the background thread picks up from there
        session.start()
        thread = threading.Thread(
            target=session.run, name=f"run-{plan.run_id}", daemon=True
        )
        with self._lock:
            self._threads[plan.run_id] = thread
        thread.start()
        return session

    def get(self, run_id: str) -> RunSession:
        with self._lock:
            session = self._sessions.get(run_id)
        if session is None:
            raise KeyError(run_id)
        return session

    def sessions(self) -> list[RunSession]:
        with self._lock:
            return list(self._sessions.values())

    def find_attempt(self, attempt_id: str) -> tuple[RunSession, AttemptRecord]:
        for session in self.sessions():
            try:
                return session, session.orchestrator.get_attempt(attempt_id)
            except KeyError:
                continue
        raise KeyError(attempt_id)

    def wait(self, run_id: str, timeout: float | None = None) -> None:
        with self._lock:
            thread = self._threads.get(run_id)
        if thread is not None:
            thread.join(timeout)
