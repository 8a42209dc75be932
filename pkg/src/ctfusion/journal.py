"""Append-only JSONL event log with gap-free sequence numbers.

Both the submission proxy and the orchestrator persist their state
transitions through this log; recovery replays it and refuses to start on a
sequence gap. Appends are totally ordered by a single lock, and readers can
block-wait for new entries (used by the live event stream).
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Iterator


class JournalCorruption(RuntimeError):
    """The journal has a sequence gap or an unreadable entry."""


@dataclass(frozen=True)
class Event:
    seq: int
    kind: str
    timestamp: str
    payload: dict[str, Any]

    def to_json(self) -> str:
        return json.dumps(
            {"seq": self.seq, "kind": self.kind, "timestamp": self.timestamp, **self.payload},
            sort_keys=True,
            ensure_ascii=False,
        )

    @classmethod
    def from_line(cls, line: str) -> "Event":
        try:
            raw = json.loads(line)
        except json.JSONDecodeError as exc:
            raise JournalCorruption(f"unparseable journal line: {exc}") from exc
        try:
            seq = raw.pop("seq")
            kind = raw.pop("kind")
            timestamp = raw.pop("timestamp")
        except KeyError as exc:
            raise JournalCorruption(f"journal entry missing field {exc}") from exc
        return cls(seq=seq, kind=kind, timestamp=timestamp, payload=raw)


class EventLog:
    """Thread-safe append-only log, optionally backed by a JSONL file.

    Rotation is forbidden mid-run: the file handle stays open in append mode
    for the lifetime of the log.
    """

    def __init__(
        self,
        path: str | Path | None = None,
        now: Callable[[], datetime] | None = None,
        resume: bool = False,
    ):
        self._path = Path(path) if path is not None else None
        self._events: list[Event] = []
        self._lock = threading.Lock()
        self._appended = threading.Condition(self._lock)
        self._now = now
        self._fh = None
        if self._path is not None:
            if resume and self._path.exists():
                # raises JournalCorruption on a gap; never start on a bad log
                self._events = read_events(self._path)
            self._path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self._path, "a", encoding="utf-8")

    @property
    def path(self) -> Path | None:
        return self._path

    def append(self, kind: str, timestamp: datetime | str | None = None, **payload: Any) -> Event:
        if timestamp is None and self._now is not None:
            timestamp = self._now()
        if isinstance(timestamp, datetime):
            timestamp = timestamp.isoformat()
        with self._appended:
            event = Event(seq=len(self._events) + 1, kind=kind, timestamp=timestamp or "", payload=payload)
            self._events.append(event)
            if self._fh is not None:
                self._fh.write(event.to_json() + "\n")
                self._fh.flush()
            self._appended.notify_all()
            return event

    def snapshot(self) -> list[Event]:
        with self._lock:
            return list(self._events)

    def __len__(self) -> int:
        with self._lock:
            return len(self._events)

    def events_after(self, seq: int) -> list[Event]:
        with self._lock:
            return [e for e in self._events if e.seq > seq]

    def wait_for_next(self, seq: int, timeout: float | None = None) -> list[Event]:
        """Block until events with seq greater than the given exist."""
        with self._appended:
            if not self._appended.wait_for(lambda: len(self._events) > seq, timeout=timeout):
                return []
            return [e for e in self._events if e.seq > seq]

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None


def read_events(source: str | Path | Iterator[str]) -> list[Event]:
    """Parse a journal file (or line iterator) and verify seq is gap-free."""
    if isinstance(source, (str, Path)):
        text = Path(source).read_text(encoding="utf-8")
        lines: Iterator[str] = iter(text.splitlines())
    else:
        lines = source
    events = []
    for line in lines:
        if not line.strip():
            continue
        events.append(Event.from_line(line))
    verify_gap_free(events)
    return events


def verify_gap_free(events: list[Event]) -> None:
    for position, event in enumerate(events, start=1):
        if event.seq != position:
            raise JournalCorruption(
                f"journal sequence gap: expected seq {position}, found {event.seq}"
            )
