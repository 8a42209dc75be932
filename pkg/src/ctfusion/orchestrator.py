"""Run orchestration: attempt scheduling, budgets, termination, reports.

A run enumerates every (agent, challenge, attempt index) combination up
front as attempt records; the scheduler walks each agent through its
records sequentially per challenge. Records leave the pool in exactly one
of two ways: a terminal status (solved, costlimit, unsolved, giveup,
suspended) or an exclusion (sibling attempts cancelled after a solve, or a
record superseded by an operator requeue). Every non-excluded record is
terminal by the time a run is finalized, so the report always accounts for
the full enumerated grid.

All transitions are journaled with their effective timestamps; finalizing
a run from live state and replaying the journal later produce
byte-identical reports.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from decimal import Decimal
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

from .clock import Clock, SystemClock
from .journal import Event, EventLog, read_events
from .metrics import classify_termination, failure_distribution, pair_rows, aggregate_rates
from .model import (
    AgentId,
    Attempt,
    AttemptStatus,
    EvaluationConfig,
    InputRejected,
    ReportRow,
    TerminationSignal,
)
from .proxy import SubmissionOutcome
from .reporting import EvaluationReport

PENDING = "pending"
ACTIVE = "active"
TERMINAL = "terminal"
EXCLUDED = "excluded"

REASON_CANCELLED_AFTER_SOLVE = "cancelled_after_solve"
REASON_SUPERSEDED = "superseded_by_requeue"

KIND_RUN_CREATED = "run_created"
KIND_ATTEMPT_SCHEDULED = "attempt_scheduled"
KIND_ATTEMPT_STARTED = "attempt_started"
KIND_COST_REPORTED = "cost_reported"
KIND_ATTEMPT_TERMINATED = "attempt_terminated"
KIND_ATTEMPT_AMENDED = "attempt_amended"
KIND_ATTEMPT_EXCLUDED = "attempt_excluded"
KIND_ATTEMPT_REQUEUED = "attempt_requeued"
KIND_WINDOW_CLOSED = "run_window_closed"
KIND_RUN_FINALIZED = "run_finalized"

COST_QUANTUM = Decimal("0.0001")


@dataclass(frozen=True)
class AgentPlan:
    """One contestant: identity, report labels, auth token, runner config."""

    agent_id: AgentId
    model_label: str
    agent_label: str
    token: str
    runner: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.agent_id:
            raise InputRejected("agent_id must be non-empty")
        if not self.token:
            raise InputRejected(f"agent {self.agent_id!r} needs a token")


@dataclass(frozen=True)
class RunPlan:
    """Validated description of one evaluation run."""

    run_id: str
    agents: tuple[AgentPlan, ...]
    config: EvaluationConfig
    challenge_ids: tuple[int, ...] | None = None  # None: take the full listing
    window_s: int | None = None
    submission_quota: int = 20
    parallelism: int = 1
    ctfd: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not self.run_id:
            raise InputRejected("run_id must be non-empty")
        if not self.agents:
            raise InputRejected("a run needs at least one agent")
        seen_ids: set[str] = set()
        seen_tokens: set[str] = set()
        for agent in self.agents:
            if agent.agent_id in seen_ids:
                raise InputRejected(f"duplicate agent_id {agent.agent_id!r}")
            if agent.token in seen_tokens:
                raise InputRejected(f"duplicate agent token for {agent.agent_id!r}")
            seen_ids.add(agent.agent_id)
            seen_tokens.add(agent.token)
        if self.window_s is not None and self.window_s <= 0:
            raise InputRejected("window_s must be positive")
        if self.parallelism < 1:
            raise InputRejected("parallelism must be >= 1")
        if self.submission_quota < 1:
            raise InputRejected("submission_quota must be >= 1")

    def tokens(self) -> dict[str, AgentId]:
        return {agent.token: agent.agent_id for agent in self.agents}


def plan_from_dict(raw: dict[str, Any], default_run_id: str = "") -> RunPlan:
    agents = tuple(
        AgentPlan(
            agent_id=str(a["agent_id"]),
            model_label=str(a.get("model_label", a["agent_id"])),
            agent_label=str(a.get("agent_label", "scripted")),
            token=str(a["token"]),
            runner=dict(a.get("runner") or {}),
        )
        for a in raw.get("agents", [])
    )
    config = EvaluationConfig(
        k=int(raw.get("k", 3)),
        cost_cap_usd=Decimal(str(raw.get("cost_cap_usd", "3.00"))),
        inactivity_timeout_s=int(raw.get("inactivity_timeout_s", 600)),
    )
    challenge_ids = raw.get("challenges")
    if challenge_ids is not None:
        challenge_ids = tuple(int(c) for c in challenge_ids)
    return RunPlan(
        run_id=str(raw.get("run_id") or default_run_id),
        agents=agents,
        config=config,
        challenge_ids=challenge_ids,
        window_s=int(raw["window_s"]) if raw.get("window_s") is not None else None,
        submission_quota=int(raw.get("submission_quota", 20)),
        parallelism=int(raw.get("parallelism", 1)),
        ctfd=dict(raw.get("ctfd") or {}),
    )


def load_plan(path: str | Path, default_run_id: str = "") -> RunPlan:
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    return plan_from_dict(raw, default_run_id=default_run_id)


@dataclass
class AttemptRecord:
    """Mutable lifecycle record for one scheduled attempt."""

    attempt_id: str
    agent_id: AgentId
    challenge_id: int
    attempt_index: int
    model_label: str
    agent_label: str
    state: str = PENDING
    status: AttemptStatus | None = None
    signal: TerminationSignal | None = None
    excluded_reason: str | None = None
    cost_usd: Decimal = Decimal("0.0000")
    started_at: datetime | None = None
    ended_at: datetime | None = None
    last_activity_at: datetime | None = None

    def to_public_dict(self) -> dict[str, Any]:
        return {
            "attempt_id": self.attempt_id,
            "agent_id": self.agent_id,
            "challenge_id": self.challenge_id,
            "attempt_index": self.attempt_index,
            "model_label": self.model_label,
            "agent_label": self.agent_label,
            "state": self.state,
            "status": self.status.value if self.status else None,
            "signal": self.signal.value if self.signal else None,
            "excluded_reason": self.excluded_reason,
            "cost_usd": str(self.cost_usd.quantize(COST_QUANTUM)),
            "started_at": self.started_at.isoformat() if self.started_at else None,
            "ended_at": self.ended_at.isoformat() if self.ended_at else None,
        }


class Orchestrator:
    """State machine for one run. Thread-safe; all transitions journaled.

    on_terminal, when set, fires outside the lock after any record reaches
    a terminal state; the session layer uses it to stop runners and wake
    the scheduler.
    """

    def __init__(
        self,
        plan: RunPlan,
        challenge_ids: Sequence[int],
        categories: dict[int, str] | None = None,
        clock: Clock | None = None,
        journal: EventLog | None = None,
    ):
        if not challenge_ids:
            raise InputRejected("a run needs at least one challenge")
        if len(set(challenge_ids)) != len(challenge_ids):
            raise InputRejected("duplicate challenge ids in run")
        self.plan = plan
        self.clock = clock or SystemClock()
        self.journal = journal if journal is not None else EventLog(now=self.clock.now)
        self.challenge_ids = tuple(challenge_ids)
        self.categories = dict(categories or {})
        self.on_terminal: Callable[[AttemptRecord], None] | None = None

        self._lock = threading.Lock()
        self._records: dict[str, AttemptRecord] = {}
        self._order: list[str] = []  # creation order, also report order
        self._counter = 0
        self._started = False
        self._window_deadline: datetime | None = None
        self._window_closed = False
        self._finalized: EvaluationReport | None = None

    # -- setup -------------------------------------------------------------

    @property
    def run_id(self) -> str:
        return self.plan.run_id

    @property
    def window_deadline(self) -> datetime | None:
        return self._window_deadline

    @property
    def finalized(self) -> bool:
        return self._finalized is not None

    def start_run(self) -> list[AttemptRecord]:
        """Enumerate the attempt grid and open the run window."""
        with self._lock:
            if self._started:
                raise InputRejected(f"run {self.run_id!r} already started")
            self._started = True
            now = self.clock.now()
            if self.plan.window_s is not None:
                self._window_deadline = now + timedelta(seconds=self.plan.window_s)
            self.journal.append(
                KIND_RUN_CREATED,
                timestamp=now,
                run_id=self.run_id,
                k=self.plan.config.k,
                cost_cap_usd=str(self.plan.config.cost_cap_usd),
                inactivity_timeout_s=self.plan.config.inactivity_timeout_s,
                window_s=self.plan.window_s,
                challenges=[
                    {"challenge_id": cid, "category": self.categories.get(cid, "misc")}
                    for cid in self.challenge_ids
                ],
                agents=[
                    {"agent_id": a.agent_id, "model_label": a.model_label,
                     "agent_label": a.agent_label}
                    for a in self.plan.agents
                ],
            )
            created = []
            for agent in self.plan.agents:
                for challenge_id in self.challenge_ids:
                    for index in range(1, self.plan.config.k + 1):
                        created.append(self._schedule_locked(agent, challenge_id, index, now))
            return created

    def _schedule_locked(self, agent: AgentPlan, challenge_id: int, index: int,
                         now: datetime) -> AttemptRecord:
        self._counter += 1
        record = AttemptRecord(
            attempt_id=f"{self.run_id}.a{self._counter:04d}",
            agent_id=agent.agent_id,
            challenge_id=challenge_id,
            attempt_index=index,
            model_label=agent.model_label,
            agent_label=agent.agent_label,
        )
        self._records[record.attempt_id] = record
        self._order.append(record.attempt_id)
        self.journal.append(
            KIND_ATTEMPT_SCHEDULED,
            timestamp=now,
            attempt_id=record.attempt_id,
            agent_id=record.agent_id,
            challenge_id=record.challenge_id,
            attempt_index=record.attempt_index,
            model_label=record.model_label,
            agent_label=record.agent_label,
        )
        return record

    # -- queries -----------------------------------------------------------

    def attempts(self) -> list[AttemptRecord]:
        with self._lock:
            return [self._records[attempt_id] for attempt_id in self._order]

    def get_attempt(self, attempt_id: str) -> AttemptRecord:
        with self._lock:
            record = self._records.get(attempt_id)
        if record is None:
            raise KeyError(attempt_id)
        return record

    def active_attempt(self, agent_id: AgentId,
                       challenge_id: int | None = None) -> AttemptRecord | None:
        with self._lock:
            for attempt_id in self._order:
                record = self._records[attempt_id]
                if record.agent_id != agent_id or record.state != ACTIVE:
                    continue
                if challenge_id is None or record.challenge_id == challenge_id:
                    return record
        return None

    def authorize(self, agent_id: AgentId) -> str | None:
        """Gateway hook: tool calls require a live attempt for the agent."""
        if self.finalized:
            return "run is finalized"
        if self.active_attempt(agent_id) is None:
            return f"agent {agent_id!r} has no active attempt"
        return None

    # -- scheduling --------------------------------------------------------

    def _next_pending_locked(self, agent_id: AgentId) -> AttemptRecord | None:
        # index i is startable only when every lower non-excluded index of
        # the same (agent, challenge) is terminal
        by_challenge: dict[int, list[AttemptRecord]] = {}
        for attempt_id in self._order:
            record = self._records[attempt_id]
            if record.agent_id == agent_id and record.state != EXCLUDED:
                by_challenge.setdefault(record.challenge_id, []).append(record)
        for challenge_id in self.challenge_ids:
            records = sorted(
                by_challenge.get(challenge_id, ()), key=lambda r: r.attempt_index
            )
            for record in records:
                if record.state == ACTIVE:
                    break  # this challenge is busy for the agent
                if record.state == PENDING:
                    return record
        return None

    def step(self) -> list[AttemptRecord]:
        """Start every attempt that may start now; returns what was started."""
        started = []
        with self._lock:
            if not self._started or self._window_closed or self._finalized:
                return []
            now = self.clock.now()
            for agent in self.plan.agents:
                while True:
                    active = sum(
                        1 for a in self._records.values()
                        if a.agent_id == agent.agent_id and a.state == ACTIVE
                    )
                    if active >= self.plan.parallelism:
                        break
                    record = self._next_pending_locked(agent.agent_id)
                    if record is None:
                        break
                    record.state = ACTIVE
                    record.started_at = now
                    record.last_activity_at = now
                    self.journal.append(
                        KIND_ATTEMPT_STARTED, timestamp=now, attempt_id=record.attempt_id
                    )
                    started.append(record)
        return started

    def all_settled(self) -> bool:
        """True when no non-excluded record can make further progress."""
        with self._lock:
            return self._started and all(
                record.state in (TERMINAL, EXCLUDED) for record in self._records.values()
            )

    # -- live signals ------------------------------------------------------

    def note_activity(self, agent_id: AgentId) -> None:
        with self._lock:
            now = self.clock.now()
            for record in self._records.values():
                if record.agent_id == agent_id and record.state == ACTIVE:
                    record.last_activity_at = now

    def handle_submission(self, agent_id: AgentId, challenge_id: int,
                          outcome: SubmissionOutcome) -> None:
        """Gateway hook: a correct flag terminates the matching attempt."""
        self.note_activity(agent_id)
        if not outcome.correct:
            return
        record = self.active_attempt(agent_id, challenge_id)
        if record is not None:
            self.terminate_attempt(record.attempt_id, TerminationSignal.CORRECT_FLAG_ACCEPTED)

    def report_cost(self, attempt_id: str, total_usd: Decimal | str) -> AttemptRecord:
        """Record a cumulative cost total; crossing the cap ends the attempt.

        Totals must be non-decreasing. The cap comparison is exact: a report
        of exactly the cap triggers budget termination.
        """
        total = Decimal(str(total_usd)).quantize(COST_QUANTUM)
        if total < 0:
            raise InputRejected("cost total must be non-negative")
        hit_cap = False
        with self._lock:
            record = self._records.get(attempt_id)
            if record is None:
                raise KeyError(attempt_id)
            if record.state in (TERMINAL, EXCLUDED):
                raise InputRejected(f"attempt {attempt_id} is {record.state}")
            if total < record.cost_usd:
                raise InputRejected(
                    f"cost total {total} is below the prior total {record.cost_usd}"
                )
            record.cost_usd = total
            now = self.clock.now()
            record.last_activity_at = now
            self.journal.append(
                KIND_COST_REPORTED, timestamp=now,
                attempt_id=attempt_id, total_usd=str(total),
            )
            hit_cap = total >= self.plan.config.cost_cap_usd
        if hit_cap:
            self.terminate_attempt(attempt_id, TerminationSignal.BUDGET_EXHAUSTED)
        return record

    def agent_giveup(self, agent_id: AgentId, challenge_id: int | None = None,
                     reason: str = "") -> AttemptRecord | None:
        record = self.active_attempt(agent_id, challenge_id)
        if record is None:
            return None
        return self.terminate_attempt(
            record.attempt_id, TerminationSignal.AGENT_DECLARED_GIVEUP, note=reason
        )

    # -- termination -------------------------------------------------------

    def terminate_attempt(self, attempt_id: str, signal: TerminationSignal | str,
                          at: datetime | None = None, note: str = "") -> AttemptRecord:
        """Apply a termination signal; the first terminal event wins.

        The one exception: a correct-flag signal carrying the same timestamp
        as the event that beat it amends the record to solved. A solve and a
        timeout in the same instant must never read as a timeout.
        """
        signal = TerminationSignal(signal)
        terminal_record: AttemptRecord | None = None
        with self._lock:
            record = self._records.get(attempt_id)
            if record is None:
                raise KeyError(attempt_id)
            if record.state == EXCLUDED:
                raise InputRejected(f"attempt {attempt_id} is excluded")
            moment = at or self.clock.now()
            if record.state == TERMINAL:
                if (
                    signal is TerminationSignal.CORRECT_FLAG_ACCEPTED
                    and record.status is not AttemptStatus.SOLVED
                    and record.ended_at == moment
                ):
                    old = record.status
                    record.status = AttemptStatus.SOLVED
                    record.signal = signal
                    self.journal.append(
                        KIND_ATTEMPT_AMENDED, timestamp=moment,
                        attempt_id=attempt_id,
                        old_status=old.value, new_status=AttemptStatus.SOLVED.value,
                    )
                    self._exclude_siblings_locked(record, moment)
                return record
            record.state = TERMINAL
            record.status = classify_termination(signal)
            record.signal = signal
            record.ended_at = moment
            self.journal.append(
                KIND_ATTEMPT_TERMINATED, timestamp=moment,
                attempt_id=attempt_id,
                signal=signal.value,
                status=record.status.value,
                cost_usd=str(record.cost_usd.quantize(COST_QUANTUM)),
                note=note,
            )
            if record.status is AttemptStatus.SOLVED:
                self._exclude_siblings_locked(record, moment)
            terminal_record = record
        if terminal_record is not None and self.on_terminal is not None:
            self.on_terminal(terminal_record)
        return record

    def _exclude_siblings_locked(self, solved: AttemptRecord, moment: datetime) -> None:
        # remaining tries are pointless once the challenge is solved
        for attempt_id in self._order:
            record = self._records[attempt_id]
            if (
                record.agent_id == solved.agent_id
                and record.challenge_id == solved.challenge_id
                and record.state == PENDING
            ):
                record.state = EXCLUDED
                record.excluded_reason = REASON_CANCELLED_AFTER_SOLVE
                self.journal.append(
                    KIND_ATTEMPT_EXCLUDED, timestamp=moment,
                    attempt_id=record.attempt_id, reason=REASON_CANCELLED_AFTER_SOLVE,
                )

    def watchdog_tick(self) -> list[AttemptRecord]:
        """Terminate attempts whose agents went quiet, and close the window."""
        now = self.clock.now()
        if self._window_deadline is not None and now >= self._window_deadline:
            return self.close_window(at=self._window_deadline)
        timeout = timedelta(seconds=self.plan.config.inactivity_timeout_s)
        stale = []
        with self._lock:
            for record in self._records.values():
                if record.state != ACTIVE or record.last_activity_at is None:
                    continue
                if now - record.last_activity_at >= timeout:
                    stale.append(record.attempt_id)
        return [
            self.terminate_attempt(a, TerminationSignal.INACTIVITY_TIMEOUT, at=now)
            for a in stale
        ]

    def close_window(self, at: datetime | None = None) -> list[AttemptRecord]:
        """End of the run window: everything still live becomes unsolved."""
        with self._lock:
            if self._window_closed:
                return []
            self._window_closed = True
            moment = at or self.clock.now()
            self.journal.append(KIND_WINDOW_CLOSED, timestamp=moment, run_id=self.run_id)
            open_ids = [
                r.attempt_id for r in self._records.values()
                if r.state in (PENDING, ACTIVE)
            ]
        return [
            self.terminate_attempt(a, TerminationSignal.RUN_WINDOW_CLOSED, at=moment)
            for a in open_ids
        ]

    # -- operator actions --------------------------------------------------

    def requeue_attempt(self, attempt_id: str) -> AttemptRecord:
        """Replace a failed attempt with a fresh record at the same index.

        The old record is excluded from reporting; the grid keeps exactly
        one live record per (agent, challenge, index).
        """
        with self._lock:
            if self._finalized:
                raise InputRejected("run is finalized")
            if self._window_closed:
                raise InputRejected("run window is closed")
            record = self._records.get(attempt_id)
            if record is None:
                raise KeyError(attempt_id)
            if record.state != TERMINAL:
                raise InputRejected(f"attempt {attempt_id} is {record.state}, not terminal")
            if record.status is AttemptStatus.SOLVED:
                raise InputRejected("a solved attempt cannot be requeued")
            now = self.clock.now()
            record.state = EXCLUDED
            record.excluded_reason = REASON_SUPERSEDED
            self.journal.append(
                KIND_ATTEMPT_EXCLUDED, timestamp=now,
                attempt_id=attempt_id, reason=REASON_SUPERSEDED,
            )
            agent = next(a for a in self.plan.agents if a.agent_id == record.agent_id)
            fresh = self._schedule_locked(agent, record.challenge_id, record.attempt_index, now)
            self.journal.append(
                KIND_ATTEMPT_REQUEUED, timestamp=now,
                old_attempt_id=attempt_id, new_attempt_id=fresh.attempt_id,
            )
            return fresh

    # -- finalize ----------------------------------------------------------

    def finalize_run(self) -> EvaluationReport:
        """Close out the run and build its report. Idempotent."""
        if self._finalized is not None:
            return self._finalized
        self.close_window()
        with self._lock:
            if self._finalized is not None:
                return self._finalized
            records = [self._records[attempt_id] for attempt_id in self._order]
            report = build_report(
                self.run_id, self.plan.config.k, records, self.categories
            )
            self._finalized = report
            self.journal.append(
                KIND_RUN_FINALIZED, timestamp=self.clock.now(), run_id=self.run_id
            )
            return report


def build_report(run_id: str, k: int, records: Sequence[AttemptRecord],
                 categories: dict[int, str]) -> EvaluationReport:
    """Pure report construction from attempt records, in creation order."""
    terminal = [r for r in records if r.state == TERMINAL]
    if not terminal:
        raise InputRejected("nothing to report: no terminal attempts")
    leftovers = [r for r in records if r.state in (PENDING, ACTIVE)]
    if leftovers:
        raise InputRejected(
            f"{len(leftovers)} attempts are still live; close the window first"
        )
    attempts = [
        Attempt(
            attempt_id=r.attempt_id,
            agent_id=r.agent_id,
            challenge_id=r.challenge_id,
            attempt_index=r.attempt_index,
            status=r.status,
            cost_usd=r.cost_usd,
            started_at=r.started_at,
            ended_at=r.ended_at,
            model_label=r.model_label,
            agent_label=r.agent_label,
        )
        for r in terminal
    ]
    rows = pair_rows(attempts, k)
    return EvaluationReport(
        run_id=run_id,
        k=k,
        pair_rows=tuple(rows),
        model_rows=tuple(aggregate_rates(rows, "model")),
        agent_rows=tuple(aggregate_rates(rows, "agent")),
        category_rows=tuple(_category_rows(attempts, k, categories)),
        failure=failure_distribution(attempts),
        attempts=tuple(r.to_public_dict() for r in records),
    )


def _category_rows(attempts: Sequence[Attempt], k: int,
                   categories: dict[int, str]) -> list[ReportRow]:
    """Solved/total counts per challenge category, pooled over agents."""
    from .metrics import compute_pass_at_k

    by_agent: dict[AgentId, list[Attempt]] = {}
    for attempt in attempts:
        by_agent.setdefault(attempt.agent_id, []).append(attempt)
    solved: dict[str, int] = {}
    total: dict[str, int] = {}
    for agent_attempts in by_agent.values():
        for challenge_id, ok in compute_pass_at_k(agent_attempts, k).items():
            category = categories.get(challenge_id, "misc")
            total[category] = total.get(category, 0) + 1
            solved[category] = solved.get(category, 0) + (1 if ok else 0)
    return [
        ReportRow.from_counts(category, solved.get(category, 0), total[category])
        for category in sorted(total)
    ]


# -- journal replay --------------------------------------------------------


def replay_records(events: Iterable[Event]) -> tuple[str, int, list[AttemptRecord], dict[int, str]]:
    """Rebuild (run_id, k, records, categories) from a run journal."""
    run_id = ""
    k = 0
    categories: dict[int, str] = {}
    records: dict[str, AttemptRecord] = {}
    order: list[str] = []
    for event in events:
        payload = event.payload
        if event.kind == KIND_RUN_CREATED:
            run_id = payload["run_id"]
            k = payload["k"]
            categories = {
                int(c["challenge_id"]): c["category"] for c in payload["challenges"]
            }
        elif event.kind == KIND_ATTEMPT_SCHEDULED:
            record = AttemptRecord(
                attempt_id=payload["attempt_id"],
                agent_id=payload["agent_id"],
                challenge_id=payload["challenge_id"],
                attempt_index=payload["attempt_index"],
                model_label=payload["model_label"],
                agent_label=payload["agent_label"],
            )
            records[record.attempt_id] = record
            order.append(record.attempt_id)
        elif event.kind == KIND_ATTEMPT_STARTED:
            record = records[payload["attempt_id"]]
            record.state = ACTIVE
            record.started_at = datetime.fromisoformat(event.timestamp)
        elif event.kind == KIND_COST_REPORTED:
            records[payload["attempt_id"]].cost_usd = Decimal(payload["total_usd"])
        elif event.kind == KIND_ATTEMPT_TERMINATED:
            record = records[payload["attempt_id"]]
            record.state = TERMINAL
            record.status = AttemptStatus(payload["status"])
            record.signal = TerminationSignal(payload["signal"])
            record.cost_usd = Decimal(payload["cost_usd"])
            record.ended_at = datetime.fromisoformat(event.timestamp)
        elif event.kind == KIND_ATTEMPT_AMENDED:
            record = records[payload["attempt_id"]]
            record.status = AttemptStatus(payload["new_status"])
            record.signal = TerminationSignal.CORRECT_FLAG_ACCEPTED
        elif event.kind == KIND_ATTEMPT_EXCLUDED:
            # a superseded record keeps its old terminal status for the
            # audit trail; only the state flips
            record = records[payload["attempt_id"]]
            record.state = EXCLUDED
            record.excluded_reason = payload["reason"]
    if not run_id:
        raise InputRejected("journal has no run_created event")
    return run_id, k, [records[attempt_id] for attempt_id in order], categories


def report_from_journal(source: str | Path | Iterable[Event]) -> EvaluationReport:
    """Deterministically rebuild the final report from a run journal."""
    if isinstance(source, (str, Path)):
        events = read_events(source)
    else:
        events = list(source)
    run_id, k, records, categories = replay_records(events)
    return build_report(run_id, k, records, categories)
