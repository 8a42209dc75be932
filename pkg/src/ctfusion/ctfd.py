"""Authenticated client for CTFd-compatible competition APIs.

Wire contract (v1): GET /api/v1/challenges, GET /api/v1/challenges/{id},
POST /api/v1/challenges/attempt, GET /api/v1/teams/me/solves, files via
their advertised relative paths. Auth is a Token header with a session
cookie fallback.

Idempotent GETs are retried with exponential backoff; submissions are
never retried (a double submission to a live scoreboard is the exact harm
this system exists to avoid). Artifact downloads are de-duplicated by a
content-addressed cache with per-path single-flight locking.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable

import httpx

from .model import (
    ArtifactRef,
    ChallengeRecord,
    InputRejected,
    SubmissionVerdict,
    sanitize_file_name,
    verdict_from_status,
)

ENV_URL = "CTFUSION_CTFD_URL"
ENV_TOKEN = "CTFUSION_CTFD_TOKEN"
ENV_COOKIE = "CTFUSION_CTFD_COOKIE"
ENV_CACHE_DIR = "CTFUSION_CACHE_DIR"

GET_RETRIES = 3
BACKOFF_INITIAL_S = 0.5


class UpstreamError(RuntimeError):
    pass


class CredentialError(UpstreamError):
    """401/403 from the platform: token or cookie is wrong."""


class TransientUpstreamError(UpstreamError):
    """Timeout, connection failure or 5xx; the outcome is unknown."""


class ProtocolError(UpstreamError):
    """Response parsed but did not match the expected shape."""


class MissingArtifactError(UpstreamError):
    pass


class IntegrityError(UpstreamError):
    """Fetched bytes disagree with the digest already cached for the path."""


class RateLimitedUpstream(UpstreamError):
    """Platform rejected the submission with a rate limit; caller decides."""

    def __init__(self, message: str, retry_after_s: float | None = None):
        super().__init__(message)
        self.retry_after_s = retry_after_s


@dataclass(frozen=True)
class CompetitionEndpoint:
    """Where and how to reach the competition. Exactly one auth variant."""

    base_url: str
    api_token: str | None = None
    session_cookie: str | None = None
    user_agent: str = "ctfusion/0.1"

    def __post_init__(self):
        object.__setattr__(self, "base_url", self.base_url.rstrip("/"))
        if (self.api_token is None) == (self.session_cookie is None):
            raise InputRejected("endpoint needs exactly one of api_token or session_cookie")

    @classmethod
    def from_env(cls, env: dict[str, str] | None = None) -> "CompetitionEndpoint":
        env = env if env is not None else dict(os.environ)
        url = env.get(ENV_URL)
        if not url:
            raise InputRejected(f"{ENV_URL} is not set")
        return cls(
            base_url=url,
            api_token=env.get(ENV_TOKEN) or None,
            session_cookie=(env.get(ENV_COOKIE) or None) if not env.get(ENV_TOKEN) else None,
        )

    def headers(self) -> dict[str, str]:
        headers = {"User-Agent": self.user_agent, "Content-Type": "application/json"}
        if self.api_token is not None:
            headers["Authorization"] = f"Token {self.api_token}"
        else:
            headers["Cookie"] = f"session={self.session_cookie}"
        return headers


@dataclass(frozen=True)
class ArtifactCacheEntry:
    url_path: str
    sha256: str
    local_path: str
    fetched_at: datetime
    size_bytes: int


class ArtifactCache:
    """Content-addressed store, one entry per url_path.

    Layout: <cache_dir>/<sha256[:2]>/<sha256> plus index.json mapping
    url_path to its entry. fetch() guarantees at most one upstream request
    per path for any schedule of concurrent callers.
    """

    def __init__(self, cache_dir: str | Path):
        self.cache_dir = Path(cache_dir)
        self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._index_path = self.cache_dir / "index.json"
        self._lock = threading.Lock()
        self._path_locks: dict[str, threading.Lock] = {}
        self._entries: dict[str, ArtifactCacheEntry] = {}
        self._load_index()

    def _load_index(self) -> None:
        if not self._index_path.exists():
            return
        raw = json.loads(self._index_path.read_text(encoding="utf-8"))
        for url_path, entry in raw.items():
            self._entries[url_path] = ArtifactCacheEntry(
                url_path=url_path,
                sha256=entry["sha256"],
                local_path=entry["local_path"],
                fetched_at=datetime.fromisoformat(entry["fetched_at"]),
                size_bytes=entry["size_bytes"],
            )

    def _save_index_locked(self) -> None:
        raw = {
            url_path: {
                "sha256": e.sha256,
                "local_path": e.local_path,
                "fetched_at": e.fetched_at.isoformat(),
                "size_bytes": e.size_bytes,
            }
            for url_path, e in self._entries.items()
        }
        tmp = self._index_path.with_suffix(".json.tmp")
        tmp.write_text(json.dumps(raw, sort_keys=True, indent=2), encoding="utf-8")
        os.replace(tmp, self._index_path)

    def get(self, url_path: str) -> ArtifactCacheEntry | None:
        with self._lock:
            return self._entries.get(url_path)

    def _lock_for(self, url_path: str) -> threading.Lock:
        with self._lock:
            return self._path_locks.setdefault(url_path, threading.Lock())

    def fetch(self, url_path: str, download: Callable[[], bytes]) -> ArtifactCacheEntry:
        """Return the entry for url_path, downloading at most once.

        A pre-existing entry whose file is intact short-circuits with zero
        upstream traffic. If a refetch (e.g. after the file vanished)
        produces different bytes the old entry is kept and IntegrityError
        raised.
        """
        with self._lock_for(url_path):
            entry = self.get(url_path)
            if entry is not None and Path(entry.local_path).exists():
                return entry
            content = download()
            digest = hashlib.sha256(content).hexdigest()
            if entry is not None and entry.sha256 != digest:
                raise IntegrityError(
                    f"artifact {url_path} now hashes to {digest[:12]}..., "
                    f"cache has {entry.sha256[:12]}..."
                )
            local = self.cache_dir / digest[:2] / digest
            local.parent.mkdir(parents=True, exist_ok=True)
            tmp = local.with_suffix(".tmp")
            tmp.write_bytes(content)
            os.replace(tmp, local)
            new_entry = ArtifactCacheEntry(
                url_path=url_path,
                sha256=digest,
                local_path=str(local),
                fetched_at=datetime.now(timezone.utc),
                size_bytes=len(content),
            )
            with self._lock:
                self._entries[url_path] = new_entry
                self._save_index_locked()
            return new_entry

    def read(self, entry: ArtifactCacheEntry) -> bytes:
        return Path(entry.local_path).read_bytes()

    def verify(self, entry: ArtifactCacheEntry) -> bool:
        return hashlib.sha256(self.read(entry)).hexdigest() == entry.sha256


class CtfdClient:
    """Thread-safe client bound to one endpoint and one artifact cache."""

    def __init__(
        self,
        endpoint: CompetitionEndpoint,
        cache: ArtifactCache,
        timeout_s: float = 10.0,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.endpoint = endpoint
        self.cache = cache
        self._sleep = sleep
        self._http = httpx.Client(
            base_url=endpoint.base_url, headers=endpoint.headers(), timeout=timeout_s
        )
        # solved markers seen on the platform; informational only, never
        # surfaced through agent-facing views
        self.platform_solved_markers: set[int] = set()

    def close(self) -> None:
        self._http.close()

    def __enter__(self) -> "CtfdClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- plumbing ----------------------------------------------------------

    def _get(self, path: str) -> httpx.Response:
        """GET with bounded retry on transient failures."""
        last_error: Exception | None = None
        for attempt in range(GET_RETRIES + 1):
            if attempt:
                self._sleep(BACKOFF_INITIAL_S * 2 ** (attempt - 1))
            try:
                response = self._http.get(path)
            except httpx.HTTPError as exc:
                last_error = exc
                continue
            if response.status_code in (401, 403):
                raise CredentialError(f"GET {path} -> {response.status_code}")
            if response.status_code >= 500:
                last_error = TransientUpstreamError(f"GET {path} -> {response.status_code}")
                continue
            return response
        raise TransientUpstreamError(f"GET {path} failed after retries: {last_error}")

    def _get_data(self, path: str) -> Any:
        response = self._get(path)
        if response.status_code == 404:
            raise MissingArtifactError(f"GET {path} -> 404")
        try:
            payload = response.json()
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"GET {path}: body is not JSON ({exc})") from exc
        if not isinstance(payload, dict) or "data" not in payload:
            raise ProtocolError(f"GET {path}: response missing field 'data'")
        return payload["data"]

    # -- operations --------------------------------------------------------

    def list_challenges(self) -> list[ChallengeRecord]:
        """All visible challenges with detail fields populated.

        Platform-side solved markers are captured on the client for
        reconciliation but not attached to the records.
        """
        listing = self._get_data("/api/v1/challenges")
        if not isinstance(listing, list):
            raise ProtocolError("GET /api/v1/challenges: field 'data' is not a list")
        records = []
        self.platform_solved_markers = set()
        for entry in listing:
            challenge_id = self._require_int(entry, "id")
            if entry.get("solved_by_me"):
                self.platform_solved_markers.add(challenge_id)
            records.append(self.get_challenge(challenge_id))
        return records

    def get_challenge(self, challenge_id: int) -> ChallengeRecord:
        detail = self._get_data(f"/api/v1/challenges/{challenge_id}")
        if not isinstance(detail, dict):
            raise ProtocolError(f"challenge {challenge_id}: field 'data' is not an object")
        refs = []
        for url_path in detail.get("files") or []:
            bare = str(url_path).split("?", 1)[0]
            if not bare or bare == "/":
                raise ProtocolError(f"challenge {challenge_id}: empty entry in field 'files'")
            refs.append(ArtifactRef(url_path=bare, file_name=sanitize_file_name(bare)))
        if detail.get("solved_by_me"):
            self.platform_solved_markers.add(challenge_id)
        return ChallengeRecord(
            challenge_id=self._require_int(detail, "id"),
            name=self._require_str(detail, "name"),
            category=str(detail.get("category", "misc")),
            points=int(detail.get("value") or 0),
            description=str(detail.get("description") or ""),
            artifact_refs=tuple(refs),
            connection_info=detail.get("connection_info") or None,
            flag_format=detail.get("flag_format") or None,
        )

    def download_artifact(self, ref: ArtifactRef) -> ArtifactCacheEntry:
        """Fetch through the cache; at most one upstream GET per url_path."""

        def pull() -> bytes:
            response = self._get(ref.url_path)
            if response.status_code == 404:
                raise MissingArtifactError(f"artifact {ref.url_path} -> 404")
            if response.status_code != 200:
                raise TransientUpstreamError(
                    f"artifact {ref.url_path} -> {response.status_code}"
                )
            return response.content

        return self.cache.fetch(ref.url_path, pull)

    def submit_attempt(self, challenge_id: int, flag: str) -> SubmissionVerdict:
        """Exactly one POST; never retried. Empty flags are refused locally."""
        if not flag:
            raise InputRejected("refusing to submit an empty flag")
        try:
            response = self._http.post(
                "/api/v1/challenges/attempt",
                json={"challenge_id": challenge_id, "submission": flag},
            )
        except httpx.HTTPError as exc:
            raise TransientUpstreamError(f"submission outcome unknown: {exc}") from exc
        if response.status_code in (401, 403):
            raise CredentialError(f"attempt POST -> {response.status_code}")
        if response.status_code == 429:
            retry_after = response.headers.get("Retry-After")
            raise RateLimitedUpstream(
                "platform rate-limited the submission",
                retry_after_s=float(retry_after) if retry_after else None,
            )
        if response.status_code >= 500:
            raise TransientUpstreamError(f"attempt POST -> {response.status_code}")
        try:
            data = response.json().get("data") or {}
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"attempt POST: body is not JSON ({exc})") from exc
        if "status" not in data:
            raise ProtocolError("attempt POST: response missing field 'data.status'")
        return verdict_from_status(str(data["status"]), str(data.get("message") or ""))

    def fetch_self_solves(self) -> set[int]:
        """Challenges the shared team account has solved on the platform."""
        data = self._get_data("/api/v1/teams/me/solves")
        if not isinstance(data, list):
            raise ProtocolError("GET /api/v1/teams/me/solves: field 'data' is not a list")
        return {self._require_int(entry, "challenge_id") for entry in data}

    @staticmethod
    def _require_int(obj: dict, field: str) -> int:
        try:
            return int(obj[field])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError(f"response missing or non-integer field {field!r}") from exc

    @staticmethod
    def _require_str(obj: dict, field: str) -> str:
        try:
            return str(obj[field])
        except KeyError as exc:
            raise ProtocolError(f"response missing field {field!r}") from exc


def client_from_env(env: dict[str, str] | None = None, **kwargs) -> CtfdClient:
    env = env if env is not None else dict(os.environ)
    endpoint = CompetitionEndpoint.from_env(env)
    cache_dir = env.get(ENV_CACHE_DIR) or os.path.join(
        os.path.expanduser("~"), ".cache", "ctfusion", "artifacts"
    )
    return CtfdClient(endpoint, ArtifactCache(cache_dir), **kwargs)
