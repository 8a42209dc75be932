"""Injectable time source.

Everything that reads the wall clock (watchdog, rate-limit windows, journal
timestamps, scripted sleeps) goes through a Clock so tests can run on a
manual clock without real waiting.
"""

from __future__ import annotations

import threading
import time
from datetime import datetime, timezone
from typing import Protocol


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


class Clock(Protocol):
    def now(self) -> datetime: ...

    def sleep(self, seconds: float, cancel: threading.Event | None = None) -> None: ...


class SystemClock:
    """Real time. sleep() is interruptible via the cancel event."""

    def now(self) -> datetime:
        return utcnow()

    def sleep(self, seconds: float, cancel: threading.Event | None = None) -> None:
        if cancel is None:
            time.sleep(seconds)
        else:
            cancel.wait(seconds)


class ManualClock:
    """Deterministic clock advanced explicitly by tests.

    sleep() does not block: it advances the clock by the requested amount, so
    scripted scenarios stay single-threaded deterministic.
    """

    def __init__(self, start: datetime | None = None):
        self._now = start or datetime(2025, 1, 1, tzinfo=timezone.utc)
        self._lock = threading.Lock()

    def now(self) -> datetime:
        with self._lock:
            return self._now

    def advance(self, seconds: float) -> datetime:
        from datetime import timedelta

        with self._lock:
            self._now += timedelta(seconds=seconds)
            return self._now

    def set(self, moment: datetime) -> None:
        with self._lock:
            if moment < self._now:
                raise ValueError("manual clock cannot move backwards")
            self._now = moment

    def sleep(self, seconds: float, cancel: threading.Event | None = None) -> None:
        if cancel is not None and cancel.is_set():
            return
        self.advance(seconds)
