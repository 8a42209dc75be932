"""Submission proxy: one upstream flag submission per challenge, ever.

Multiple agents share a single team account. The proxy forwards the first
correct flag for each challenge to the platform and answers every later
submission for that challenge from a local solve ledger, so agents get
truthful verdicts while the shared scoreboard sees each solve exactly once.

Every state transition is journaled before it takes effect; recovery
replays the journal and refuses to start on a sequence gap.

The decision procedure for a submission, serialized per challenge:

  1. normalize the flag (strip one trailing newline)
  2. published flag format exists and the flag misses it: reject locally
  3. ledger entry exists: verify locally, byte-exact
  4. otherwise forward upstream exactly once; a correct verdict writes the
     ledger and marks the submitting agent solved

Transient upstream failures leave the ledger and views untouched and
surface as retryable errors. The per-agent-per-challenge quota is enforced
only at the forwarding step, so verifying an already-solved challenge
never burns quota headroom that matters.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass
from typing import Iterable

from .journal import EventLog
from .model import (
    AgentId,
    ChallengeRecord,
    InputRejected,
    SubmissionVerdict,
    normalize_flag,
)

DEFAULT_SUBMISSION_QUOTA = 20

KIND_SUBMISSION_RECEIVED = "submission_received"
KIND_FORWARDED_UPSTREAM = "forwarded_upstream"
KIND_VERDICT_RECORDED = "verdict_recorded"
KIND_LEDGER_WRITTEN = "ledger_written"
KIND_AGENT_MARKED_SOLVED = "agent_marked_solved"

SOURCE_UPSTREAM = "upstream"
SOURCE_LOCAL_LEDGER = "local_ledger"
SOURCE_LOCAL_FORMAT = "local_format"


class UnknownAgentError(InputRejected):
    """Submission from an agent that never completed a handshake."""


class QuotaExhausted(RuntimeError):
    """The agent spent its submission quota for this challenge."""


@dataclass(frozen=True)
class LedgerEntry:
    """The canonical accepted flag for one solved challenge."""

    challenge_id: int
    flag: str
    solved_by: AgentId
    solved_at: str


@dataclass(frozen=True)
class SubmissionOutcome:
    """Verdict plus where it came from (upstream or a local check)."""

    verdict: SubmissionVerdict
    source: str

    @property
    def correct(self) -> bool:
        return self.verdict.correct


class SubmissionProxy:
    """Shared-account submission mediator with an event-sourced journal.

    upstream only needs a submit_attempt(challenge_id, flag) -> verdict
    method; in production that is a CtfdClient.
    """

    def __init__(self, upstream, journal: EventLog | None = None,
                 quota: int = DEFAULT_SUBMISSION_QUOTA):
        if quota < 1:
            raise InputRejected(f"quota must be >= 1, got {quota}")
        self._upstream = upstream
        self._journal = journal if journal is not None else EventLog()
        self._quota = quota
        self._state_lock = threading.Lock()
        self._challenge_locks: dict[int, threading.Lock] = {}
        self._catalog: dict[int, ChallengeRecord] = {}
        self._ledger: dict[int, LedgerEntry] = {}
        self._views: dict[AgentId, set[int]] = {}
        self._counts: dict[tuple[AgentId, int], int] = {}
        self.anomalies: list[str] = []
        self._replay(self._journal.snapshot())

    # -- wiring ------------------------------------------------------------

    @property
    def journal(self) -> EventLog:
        return self._journal

    @property
    def quota(self) -> int:
        return self._quota

    def register_agent(self, agent_id: AgentId) -> None:
        if not agent_id:
            raise InputRejected("agent_id must be non-empty")
        with self._state_lock:
            self._views.setdefault(agent_id, set())

    def update_catalog(self, records: Iterable[ChallengeRecord]) -> None:
        with self._state_lock:
            for record in records:
                self._catalog[record.challenge_id] = record

    def catalog(self) -> dict[int, ChallengeRecord]:
        with self._state_lock:
            return dict(self._catalog)

    # -- submission path ---------------------------------------------------

    def submit(self, agent_id: AgentId, challenge_id: int, flag: str) -> SubmissionOutcome:
        with self._state_lock:
            if agent_id not in self._views:
                raise UnknownAgentError(f"agent {agent_id!r} is not registered")
            record = self._catalog.get(challenge_id)
        if record is None:
            raise InputRejected(f"unknown challenge {challenge_id}")
        normalized = normalize_flag(flag)
        if not normalized:
            raise InputRejected("refusing to process an empty flag")
        with self._lock_for(challenge_id):
            self._journal.append(
                KIND_SUBMISSION_RECEIVED,
                agent_id=agent_id, challenge_id=challenge_id, flag=normalized,
            )
            with self._state_lock:
                key = (agent_id, challenge_id)
                self._counts[key] = self._counts.get(key, 0) + 1
                spent = self._counts[key]
                entry = self._ledger.get(challenge_id)

            if record.flag_format is not None and not re.fullmatch(record.flag_format, normalized):
                return self._local_verdict(
                    agent_id, challenge_id,
                    SubmissionVerdict(False, "flag does not match the published format", "malformed"),
                    SOURCE_LOCAL_FORMAT,
                )

            if entry is not None:
                if normalized == entry.flag:
                    # repeat solve by the same agent reads as already_solved,
                    # exactly what a private scoreboard would say
                    with self._state_lock:
                        repeat = challenge_id in self._views[agent_id]
                    verdict = (
                        SubmissionVerdict(True, "You already solved this", "already_solved")
                        if repeat
                        else SubmissionVerdict(True, "Correct", "correct")
                    )
                    outcome = self._local_verdict(
                        agent_id, challenge_id, verdict, SOURCE_LOCAL_LEDGER,
                    )
                    self._mark_solved(agent_id, challenge_id)
                    return outcome
                return self._local_verdict(
                    agent_id, challenge_id,
                    SubmissionVerdict(False, "Incorrect", "incorrect"),
                    SOURCE_LOCAL_LEDGER,
                )

            if spent > self._quota:
                raise QuotaExhausted(
                    f"agent {agent_id!r} spent its {self._quota} submissions "
                    f"for challenge {challenge_id}"
                )
            return self._forward(agent_id, challenge_id, normalized)

    def _forward(self, agent_id: AgentId, challenge_id: int, flag: str) -> SubmissionOutcome:
        self._journal.append(
            KIND_FORWARDED_UPSTREAM, agent_id=agent_id, challenge_id=challenge_id,
        )
        # on a transient failure the outcome is unknown: propagate without
        # touching the ledger, the caller may retry
        verdict = self._upstream.submit_attempt(challenge_id, flag)
        self._journal.append(
            KIND_VERDICT_RECORDED,
            agent_id=agent_id, challenge_id=challenge_id,
            status=verdict.raw_status, source=SOURCE_UPSTREAM,
        )
        if verdict.raw_status == "correct":
            ledger_event = self._journal.append(
                KIND_LEDGER_WRITTEN,
                challenge_id=challenge_id, flag=flag, solved_by=agent_id,
            )
            with self._state_lock:
                self._ledger[challenge_id] = LedgerEntry(
                    challenge_id=challenge_id, flag=flag,
                    solved_by=agent_id, solved_at=ledger_event.timestamp,
                )
            self._mark_solved(agent_id, challenge_id)
        elif verdict.correct:
            # platform says already solved but the ledger is empty: someone
            # used the team account outside the proxy. Record the anomaly;
            # an unverifiable flag never enters the ledger.
            with self._state_lock:
                self.anomalies.append(
                    f"challenge {challenge_id}: upstream verdict 'already_solved' "
                    "with no ledger entry"
                )
            self._mark_solved(agent_id, challenge_id)
        return SubmissionOutcome(verdict, SOURCE_UPSTREAM)

    def _local_verdict(self, agent_id: AgentId, challenge_id: int,
                       verdict: SubmissionVerdict, source: str) -> SubmissionOutcome:
        self._journal.append(
            KIND_VERDICT_RECORDED,
            agent_id=agent_id, challenge_id=challenge_id,
            status=verdict.raw_status, source=source,
        )
        return SubmissionOutcome(verdict, source)

    def _mark_solved(self, agent_id: AgentId, challenge_id: int) -> None:
        with self._state_lock:
            if challenge_id in self._views[agent_id]:
                return
            self._views[agent_id].add(challenge_id)
        self._journal.append(
            KIND_AGENT_MARKED_SOLVED, agent_id=agent_id, challenge_id=challenge_id,
        )

    def _lock_for(self, challenge_id: int) -> threading.Lock:
        with self._state_lock:
            return self._challenge_locks.setdefault(challenge_id, threading.Lock())

    # -- read side ---------------------------------------------------------

    def solved_view(self, agent_id: AgentId) -> frozenset[int]:
        """Challenges this agent has had accepted, and nothing anyone else did."""
        with self._state_lock:
            return frozenset(self._views.get(agent_id, ()))

    def ledger_snapshot(self) -> dict[int, LedgerEntry]:
        with self._state_lock:
            return dict(self._ledger)

    def views_snapshot(self) -> dict[AgentId, frozenset[int]]:
        with self._state_lock:
            return {agent: frozenset(view) for agent, view in self._views.items()}

    def counts_snapshot(self) -> dict[tuple[AgentId, int], int]:
        with self._state_lock:
            return dict(self._counts)

    def submission_count(self, agent_id: AgentId, challenge_id: int) -> int:
        with self._state_lock:
            return self._counts.get((agent_id, challenge_id), 0)

    def reconcile_platform_solves(self, platform_solved: Iterable[int]) -> list[str]:
        """Flag platform solves with no ledger entry. They are never adopted."""
        found = []
        with self._state_lock:
            for challenge_id in sorted(set(platform_solved)):
                if challenge_id not in self._ledger:
                    note = (
                        f"platform reports challenge {challenge_id} solved "
                        "but the ledger has no entry"
                    )
                    self.anomalies.append(note)
                    found.append(note)
        return found

    # -- recovery ----------------------------------------------------------

    def _replay(self, events) -> None:
        for event in events:
            payload = event.payload
            if event.kind == KIND_SUBMISSION_RECEIVED:
                agent_id = payload["agent_id"]
                self._views.setdefault(agent_id, set())
                key = (agent_id, payload["challenge_id"])
                self._counts[key] = self._counts.get(key, 0) + 1
            elif event.kind == KIND_LEDGER_WRITTEN:
                challenge_id = payload["challenge_id"]
                self._ledger[challenge_id] = LedgerEntry(
                    challenge_id=challenge_id,
                    flag=payload["flag"],
                    solved_by=payload["solved_by"],
                    solved_at=event.timestamp,
                )
            elif event.kind == KIND_AGENT_MARKED_SOLVED:
                agent_id = payload["agent_id"]
                self._views.setdefault(agent_id, set())
                self._views[agent_id].add(payload["challenge_id"])

    @classmethod
    def recover(cls, journal_path, upstream, quota: int = DEFAULT_SUBMISSION_QUOTA,
                now=None, catalog: Iterable[ChallengeRecord] = ()) -> "SubmissionProxy":
        """Rebuild proxy state from an existing journal and resume it.

        Raises JournalCorruption on a sequence gap rather than starting
        from a state that silently lost transitions.
        """
        journal = EventLog(journal_path, now=now, resume=True)
        proxy = cls(upstream, journal, quota)
        proxy.update_catalog(catalog)
        return proxy
