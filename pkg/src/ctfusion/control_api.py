"""Operator REST surface: run inventory, interventions, live event stream.

The API is a thin, read-mostly projection of orchestrator state plus the
two interventions an operator has (terminate an attempt, post a cost
total). GET /api/runs/{id}/events streams the run journal as server-sent
events with gap-free sequence ids, so a client can resume from the last
id it saw and rebuild state without polling.
"""

from __future__ import annotations

import hashlib
import threading
from collections import Counter
from typing import Any

import uvicorn
from fastapi import Depends, FastAPI, Header, HTTPException, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import StreamingResponse
from starlette.concurrency import run_in_threadpool

from .model import InputRejected, TerminationSignal
from .session import RunHub, RunSession

HEARTBEAT_S = 15.0


def _summary(session: RunSession) -> dict[str, Any]:
    orchestrator = session.orchestrator
    plan = session.plan
    counts = Counter(r.state for r in orchestrator.attempts())
    deadline = orchestrator.window_deadline
    return {
        "run_id": orchestrator.run_id,
        "k": plan.config.k,
        "cost_cap_usd": str(plan.config.cost_cap_usd),
        "inactivity_timeout_s": plan.config.inactivity_timeout_s,
        "window_s": plan.window_s,
        "window_deadline": deadline.isoformat() if deadline else None,
        "finalized": orchestrator.finalized,
        "agents": [
            {"agent_id": a.agent_id, "model_label": a.model_label,
             "agent_label": a.agent_label}
            for a in plan.agents
        ],
        "challenges": list(orchestrator.challenge_ids),
        "attempt_counts": dict(counts),
        "mcp_endpoint": session.mcp_endpoint,
    }


def create_app(hub: RunHub, operator_token: str | None = None) -> FastAPI:
    app = FastAPI(title="ctfusion control", version="0.1.0")
    # the control panel is served from its own origin during development
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["X-Operator-Token", "Content-Type"],
    )

    def require_operator(
        x_operator_token: str | None = Header(default=None),
    ) -> None:
        if operator_token is not None and x_operator_token != operator_token:
            raise HTTPException(status_code=401, detail="operator token required")

    @app.post("/api/runs", status_code=201)
    def create_run(plan: dict, _=Depends(require_operator)) -> dict:
        import uuid

        default_run_id = f"run-{uuid.uuid4().hex[:8]}"
        try:
            session = hub.start_plan(plan, default_run_id=default_run_id)
        except InputRejected as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        return _summary(session)

    @app.get("/api/runs")
    def list_runs() -> list[dict]:
        return [_summary(s) for s in hub.sessions()]

    @app.get("/api/runs/{run_id}")
    def get_run(run_id: str) -> dict:
        try:
            session = hub.get(run_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id!r}")
        return _summary(session)

    @app.get("/api/runs/{run_id}/attempts")
    def list_attempts(run_id: str) -> list[dict]:
        try:
            session = hub.get(run_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id!r}")
        return [r.to_public_dict() for r in session.orchestrator.attempts()]

    @app.post("/api/attempts/{attempt_id}/terminate")
    def terminate_attempt(attempt_id: str, body: dict, _=Depends(require_operator)) -> dict:
        try:
            session, _record = hub.find_attempt(attempt_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown attempt {attempt_id!r}")
        try:
            signal = TerminationSignal(body.get("signal", ""))
        except ValueError:
            valid = [s.value for s in TerminationSignal]
            raise HTTPException(status_code=400, detail=f"signal must be one of {valid}")
        try:
            record = session.orchestrator.terminate_attempt(
                attempt_id, signal, note=str(body.get("note", ""))
            )
        except InputRejected as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        return {"attempt": record.to_public_dict()}

    @app.post("/api/attempts/{attempt_id}/cost")
    def report_cost(attempt_id: str, body: dict, _=Depends(require_operator)) -> dict:
        try:
            session, _record = hub.find_attempt(attempt_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown attempt {attempt_id!r}")
        if "total_usd" not in body:
            raise HTTPException(status_code=400, detail="body needs 'total_usd'")
        try:
            record = session.orchestrator.report_cost(attempt_id, str(body["total_usd"]))
        except (InputRejected, ArithmeticError) as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        return {"attempt": record.to_public_dict()}

    @app.get("/api/ledger")
    def ledger() -> list[dict]:
        entries = []
        for session in hub.sessions():
            for challenge_id, entry in sorted(session.proxy.ledger_snapshot().items()):
                entries.append({
                    "run_id": session.plan.run_id,
                    "challenge_id": challenge_id,
                    "solved_by": entry.solved_by,
                    "solved_at": entry.solved_at,
                    "flag_sha256": hashlib.sha256(entry.flag.encode()).hexdigest(),
                })
        return entries

    @app.get("/api/runs/{run_id}/events")
    async def event_stream(
        run_id: str,
        request: Request,
        after: int = Query(0, ge=0),
        limit: int | None = Query(None, ge=1),
    ) -> StreamingResponse:
        try:
            session = hub.get(run_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown run {run_id!r}")
        journal = session.orchestrator.journal

        async def stream():
            last = after
            sent = 0
            while True:
                if await request.is_disconnected():
                    return
                events = await run_in_threadpool(journal.wait_for_next, last, HEARTBEAT_S)
                if not events:
                    yield ": keep-alive\n\n"
                    continue
                for event in events:
                    yield f"id: {event.seq}\nevent: {event.kind}\ndata: {event.to_json()}\n\n"
                    last = event.seq
                    sent += 1
                    if limit is not None and sent >= limit:
                        return

        return StreamingResponse(
            stream(),
            media_type="text/event-stream",
            headers={"Cache-Control": "no-cache", "X-Accel-Buffering": "no"},
        )

    return app


class ControlServer:
    """uvicorn in a thread, so the CLI can serve while a run executes."""

    def __init__(self, app: FastAPI, listen: str):
        host, _, port = listen.partition(":")
        self._config = uvicorn.Config(
            app, host=host or "127.0.0.1", port=int(port or 0), log_level="warning"
        )
        self._server = uvicorn.Server(self._config)
        self._thread: threading.Thread | None = None

    def start(self) -> "ControlServer":
        self._thread = threading.Thread(target=self._server.run, daemon=True)
        self._thread.start()
        while not self._server.started and self._thread.is_alive():
            import time

            time.sleep(0.01)
        return self

    @property
    def port(self) -> int:
        servers = getattr(self._server, "servers", [])
        for server in servers:
            for socket in server.sockets:
                return socket.getsockname()[1]
        return self._config.port

    @property
    def base_url(self) -> str:
        return f"http://{self._config.host}:{self.port}"

    def stop(self) -> None:
        self._server.should_exit = True
        if self._thread is not None:
            self._thread.join(timeout=5.0)
            self._thread = None
