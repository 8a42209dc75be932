"""Desk-scale simulator of a CTFd-compatible competition server.

Serves the v1 wire contract the real client speaks (challenge listing and
detail, file downloads, flag submission, team solves) from a fixture file,
and records every request in an append-only journal so tests can assert
upstream traffic exactly. Supports fault injection and a deterministic
clock for rate-limit windows.
"""

from __future__ import annotations

import base64
import fnmatch
import hashlib
import json
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from typing import Any

from .clock import Clock, SystemClock
from .model import normalize_flag


class FixtureError(ValueError):
    """The competition fixture fails validation."""


@dataclass(frozen=True)
class FixtureFile:
    name: str
    content: bytes

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.content).hexdigest()


@dataclass(frozen=True)
class FixtureChallenge:
    challenge_id: int
    name: str
    category: str
    points: int
    flag: str
    description: str = ""
    connection_info: str | None = None
    flag_format: str | None = None
    case_insensitive: bool = False
    files: tuple[FixtureFile, ...] = ()

    def flag_matches(self, submission: str) -> bool:
        candidate = normalize_flag(submission)
        expected = self.flag
        if self.case_insensitive:
            return candidate.casefold() == expected.casefold()
        return candidate == expected


@dataclass(frozen=True)
class RateLimit:
    max_requests: int
    window_s: int


@dataclass
class FaultRule:
    """One-shot behavior override for the next request matching the pattern.

    Pattern is "METHOD /path/glob"; behaviors: http_500, timeout, drop.
    """

    match: str
    behavior: str
    consumed: bool = False

    def applies(self, method: str, path: str) -> bool:
        if self.consumed:
            return False
        want_method, _, want_path = self.match.partition(" ")
        return method == want_method and fnmatch.fnmatch(path, want_path or "*")


@dataclass(frozen=True)
class CompetitionFixture:
    name: str
    challenges: tuple[FixtureChallenge, ...]
    api_token: str | None = None
    session_cookie: str | None = None
    rate_limit: RateLimit | None = None
    fault_plan: tuple[FaultRule, ...] = ()

    def __post_init__(self):
        seen: set[int] = set()
        for challenge in self.challenges:
            if challenge.challenge_id in seen:
                raise FixtureError(f"duplicate challenge id {challenge.challenge_id}")
            seen.add(challenge.challenge_id)
            if not challenge.flag:
                raise FixtureError(f"challenge {challenge.challenge_id} has an empty flag")


def load_fixture(path: str | Path) -> CompetitionFixture:
    """Parse a fixture manifest file; file contents may be inline base64 or
    referenced relative to the manifest."""
    path = Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    return fixture_from_dict(raw, base_dir=path.parent)


def fixture_from_dict(raw: dict[str, Any], base_dir: Path | None = None) -> CompetitionFixture:
    challenges = []
    for entry in raw.get("challenges", []):
        files = []
        for file_entry in entry.get("files", []):
            if "content_base64" in file_entry:
                content = base64.b64decode(file_entry["content_base64"])
            elif "source_path" in file_entry:
                if base_dir is None:
                    raise FixtureError("source_path file requires a manifest on disk")
                content = (base_dir / file_entry["source_path"]).read_bytes()
            else:
                content = b""
            files.append(FixtureFile(name=file_entry["name"], content=content))
        challenges.append(
            FixtureChallenge(
                challenge_id=int(entry["id"]),
                name=entry["name"],
                category=entry.get("category", "misc"),
                points=int(entry.get("points", 0)),
                flag=entry["flag"],
                description=entry.get("description", ""),
                connection_info=entry.get("connection_info"),
                flag_format=entry.get("flag_format"),
                case_insensitive=bool(entry.get("case_insensitive", False)),
                files=tuple(files),
            )
        )
    rate_limit = None
    if raw.get("rate_limit"):
        rate_limit = RateLimit(
            max_requests=int(raw["rate_limit"]["max_requests"]),
            window_s=int(raw["rate_limit"]["window_s"]),
        )
    faults = tuple(
        FaultRule(match=f["match"], behavior=f["behavior"]) for f in raw.get("fault_plan", [])
    )
    return CompetitionFixture(
        name=raw.get("name", "fixture"),
        challenges=tuple(challenges),
        api_token=raw.get("api_token"),
        session_cookie=raw.get("session_cookie"),
        rate_limit=rate_limit,
        fault_plan=faults,
    )


@dataclass(frozen=True)
class RequestJournalEntry:
    seq: int
    method: str
    path: str
    body: bytes
    timestamp: datetime

    @property
    def body_digest(self) -> str:
        return hashlib.sha256(self.body).hexdigest()


@dataclass(frozen=True)
class SubmissionRecord:
    """One evaluated flag submission; the forward-once assertion surface."""

    challenge_id: int
    submission: str
    status: str  # correct | incorrect | already_solved


def _artifact_path(challenge: FixtureChallenge, file: FixtureFile) -> str:
    digest = hashlib.sha256(f"{challenge.challenge_id}:{file.name}".encode() + file.content)
    return f"/files/{digest.hexdigest()[:12]}/{file.name}"


class MockCtfd:
    """Fixture-backed competition server with a request journal.

    Scoreboard mutation is check-and-set under a lock, so a challenge can
    never be recorded as solved more than once regardless of request
    interleaving.
    """

    def __init__(
        self,
        fixture: CompetitionFixture,
        clock: Clock | None = None,
        listen: str = "127.0.0.1:0",
        timeout_fault_delay_s: float = 30.0,
    ):
        self.fixture = fixture
        self.clock = clock or SystemClock()
        self.timeout_fault_delay_s = timeout_fault_delay_s
        host, _, port = listen.partition(":")
        self._listen = (host or "127.0.0.1", int(port or 0))
        self._server: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

        self._lock = threading.Lock()
        self._journal: list[RequestJournalEntry] = []
        self._submissions: list[SubmissionRecord] = []
        self._solved: dict[int, str] = {}  # challenge_id -> first accepted flag
        self._attempt_times: list[datetime] = []
        self._faults = [FaultRule(f.match, f.behavior) for f in fixture.fault_plan]

        self._by_id = {c.challenge_id: c for c in fixture.challenges}
        self._artifacts: dict[str, FixtureFile] = {}
        self._artifact_paths: dict[int, list[str]] = {}
        for challenge in fixture.challenges:
            paths = []
            for file in challenge.files:
                url_path = _artifact_path(challenge, file)
                self._artifacts[url_path] = file
                paths.append(url_path)
            self._artifact_paths[challenge.challenge_id] = paths

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> "MockCtfd":
        if self._server is not None:
            return self
        handler = _make_handler(self)
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

    def __enter__(self) -> "MockCtfd":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    @property
    def base_url(self) -> str:
        assert self._server is not None, "server not started"
        host, port = self._server.server_address[:2]
        return f"http://{host}:{port}"

    # -- assertion surface -------------------------------------------------

    def journal(self) -> list[RequestJournalEntry]:
        with self._lock:
            return list(self._journal)

    def submissions(self) -> list[SubmissionRecord]:
        with self._lock:
            return list(self._submissions)

    def solve_count(self, challenge_id: int) -> int:
        with self._lock:
            return 1 if challenge_id in self._solved else 0

    def solved_ids(self) -> set[int]:
        with self._lock:
            return set(self._solved)

    def reset(self) -> None:
        """Clear scoreboard, journal and rate-limit state; fixture untouched."""
        with self._lock:
            self._journal.clear()
            self._submissions.clear()
            self._solved.clear()
            self._attempt_times.clear()
            self._faults = [FaultRule(f.match, f.behavior) for f in self.fixture.fault_plan]

    # -- request handling helpers (called from the handler) ----------------

    def _record(self, method: str, path: str, body: bytes) -> None:
        with self._lock:
            self._journal.append(
                RequestJournalEntry(
                    seq=len(self._journal) + 1,
                    method=method,
                    path=path,
                    body=body,
                    timestamp=self.clock.now(),
                )
            )

    def _take_fault(self, method: str, path: str) -> str | None:
        with self._lock:
            for rule in self._faults:
                if rule.applies(method, path):
                    rule.consumed = True
                    return rule.behavior
        return None

    def _authorized(self, headers) -> bool:
        if self.fixture.api_token is None and self.fixture.session_cookie is None:
            return True
        auth = headers.get("Authorization", "")
        if self.fixture.api_token is not None and auth == f"Token {self.fixture.api_token}":
            return True
        cookie = headers.get("Cookie", "")
        if self.fixture.session_cookie is not None and f"session={self.fixture.session_cookie}" in cookie:
            return True
        return False

    def _rate_limited(self) -> bool:
        limit = self.fixture.rate_limit
        if limit is None:
            return False
        now = self.clock.now()
        with self._lock:
            cutoff = now.timestamp() - limit.window_s
            self._attempt_times = [t for t in self._attempt_times if t.timestamp() > cutoff]
            if len(self._attempt_times) >= limit.max_requests:
                return True
            self._attempt_times.append(now)
            return False

    def evaluate_submission(self, challenge_id: int, submission: str) -> SubmissionRecord:
        challenge = self._by_id.get(challenge_id)
        if challenge is None:
            raise KeyError(challenge_id)
        correct = challenge.flag_matches(submission)
        with self._lock:
            if correct:
                if challenge_id in self._solved:
                    status = "already_solved"
                else:
                    self._solved[challenge_id] = normalize_flag(submission)
                    status = "correct"
            else:
                status = "incorrect"
            record = SubmissionRecord(challenge_id, submission, status)
            self._submissions.append(record)
            return record

    def _challenge_summary(self, challenge: FixtureChallenge) -> dict[str, Any]:
        return {
            "id": challenge.challenge_id,
            "name": challenge.name,
            "category": challenge.category,
            "value": challenge.points,
            "solved_by_me": self.solve_count(challenge.challenge_id) > 0,
        }

    def _challenge_detail(self, challenge: FixtureChallenge) -> dict[str, Any]:
        detail = self._challenge_summary(challenge)
        detail["description"] = challenge.description
        detail["connection_info"] = challenge.connection_info
        detail["files"] = self._artifact_paths[challenge.challenge_id]
        if challenge.flag_format:
            detail["flag_format"] = challenge.flag_format
        return detail


def _make_handler(mock: MockCtfd):
    class Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        server_version = "MockCtfd/0.1"

        def log_message(self, *args):  # keep test output quiet
            pass

        def _send_json(self, status: int, payload: dict, extra_headers: dict | None = None):
            body = json.dumps(payload).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            for name, value in (extra_headers or {}).items():
                self.send_header(name, value)
            self.end_headers()
            self.wfile.write(body)

        def _send_bytes(self, content: bytes):
            self.send_response(200)
            self.send_header("Content-Type", "application/octet-stream")
            self.send_header("Content-Length", str(len(content)))
            self.end_headers()
            self.wfile.write(content)

        def _fault_or_none(self, method: str, path: str) -> bool:
            behavior = mock._take_fault(method, path)
            if behavior is None:
                return False
            if behavior == "http_500":
                self._send_json(500, {"success": False, "message": "injected failure"})
            elif behavior == "timeout":
                time.sleep(mock.timeout_fault_delay_s)
                self._send_json(200, {"success": False, "message": "late"})
            elif behavior == "drop":
                self.connection.close()
            else:
                self._send_json(500, {"success": False, "message": f"unknown fault {behavior}"})
            return True

        def _handle(self, method: str):
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length) if length else b""
            path = self.path.split("?", 1)[0]
            mock._record(method, path, body)
            if self._fault_or_none(method, path):
                return
            if not mock._authorized(self.headers):
                self._send_json(401, {"success": False, "message": "unauthorized"})
                return
            try:
                self._route(method, path, body)
            except BrokenPipeError:
                pass

        def _route(self, method: str, path: str, body: bytes):
            if method == "GET" and path == "/api/v1/challenges":
                data = [mock._challenge_summary(c) for c in mock.fixture.challenges]
                self._send_json(200, {"success": True, "data": data})
            elif method == "GET" and path.startswith("/api/v1/challenges/"):
                tail = path.rsplit("/", 1)[-1]
                challenge = mock._by_id.get(int(tail)) if tail.isdigit() else None
                if challenge is None:
                    self._send_json(404, {"success": False, "message": "challenge not found"})
                else:
                    self._send_json(200, {"success": True, "data": mock._challenge_detail(challenge)})
            elif method == "POST" and path == "/api/v1/challenges/attempt":
                if mock._rate_limited():
                    self._send_json(
                        429,
                        {"success": False, "data": {"status": "ratelimited",
                                                    "message": "too many submissions"}},
                        extra_headers={"Retry-After": str(mock.fixture.rate_limit.window_s)},
                    )
                    return
                try:
                    payload = json.loads(body or b"{}")
                    challenge_id = int(payload["challenge_id"])
                    submission = str(payload["submission"])
                except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                    self._send_json(400, {"success": False, "message": "malformed attempt body"})
                    return
                try:
                    record = mock.evaluate_submission(challenge_id, submission)
                except KeyError:
                    self._send_json(404, {"success": False, "message": "challenge not found"})
                    return
                messages = {
                    "correct": "Correct",
                    "incorrect": "Incorrect",
                    "already_solved": "You already solved this",
                }
                self._send_json(
                    200,
                    {"success": True,
                     "data": {"status": record.status, "message": messages[record.status]}},
                )
            elif method == "GET" and path == "/api/v1/teams/me/solves":
                data = [{"challenge_id": cid} for cid in sorted(mock.solved_ids())]
                self._send_json(200, {"success": True, "data": data})
            elif method == "GET" and path in mock._artifacts:
                self._send_bytes(mock._artifacts[path].content)
            else:
                self._send_json(404, {"success": False, "message": "not found"})

        def do_GET(self):
            self._handle("GET")

        def do_POST(self):
            self._handle("POST")

    return Handler
