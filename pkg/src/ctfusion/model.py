"""Shared domain model: challenges, attempts, statuses, evaluation config.

Rates are kept as exact fractions end to end; rounding happens only when a
report is rendered (see reporting.format_rate_pct).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime
from decimal import Decimal
from enum import Enum
from fractions import Fraction

AgentId = str

_PATH_SEP_RE = re.compile(r"[/\\]")


class InputRejected(ValueError):
    """Raised when an operation's preconditions on its inputs are violated."""


def sanitize_file_name(name: str) -> str:
    """Reduce a file name to a single safe path component.

    Strips directory parts and query strings, and refuses to resolve to a
    dot-only name.
    """
    name = name.split("?", 1)[0].split("#", 1)[0]
    name = _PATH_SEP_RE.split(name)[-1]
    name = name.strip()
    if name in ("", ".", ".."):
        raise InputRejected(f"artifact file name {name!r} is not a usable path component")
    return name


@dataclass(frozen=True)
class ArtifactRef:
    """A downloadable challenge file, addressed by its advertised URL path."""

    url_path: str
    file_name: str
    sha256: str | None = None

    def __post_init__(self):
        if not self.url_path:
            raise InputRejected("artifact url_path must be non-empty")
        object.__setattr__(self, "file_name", sanitize_file_name(self.file_name))


@dataclass(frozen=True)
class ChallengeRecord:
    """One competition challenge as seen through the platform API."""

    challenge_id: int
    name: str
    category: str
    points: int
    description: str = ""
    artifact_refs: tuple[ArtifactRef, ...] = ()
    connection_info: str | None = None
    flag_format: str | None = None

    def __post_init__(self):
        if self.challenge_id <= 0:
            raise InputRejected(f"challenge_id must be positive, got {self.challenge_id}")
        if self.points < 0:
            raise InputRejected(f"points must be non-negative, got {self.points}")
        if self.flag_format is not None:
            re.compile(self.flag_format)
        object.__setattr__(self, "artifact_refs", tuple(self.artifact_refs))


class AttemptStatus(str, Enum):
    """Terminal outcome of one budgeted agent-vs-challenge run."""

    SOLVED = "solved"
    COSTLIMIT = "costlimit"
    UNSOLVED = "unsolved"
    GIVEUP = "giveup"
    SUSPENDED = "suspended"


class TerminationSignal(str, Enum):
    """The single event that ends an attempt."""

    CORRECT_FLAG_ACCEPTED = "correct_flag_accepted"
    BUDGET_EXHAUSTED = "budget_exhausted"
    AGENT_DECLARED_GIVEUP = "agent_declared_giveup"
    INACTIVITY_TIMEOUT = "inactivity_timeout"
    RUN_WINDOW_CLOSED = "run_window_closed"


@dataclass
class Attempt:
    """One agent-vs-challenge run. status is None while the attempt is live."""

    attempt_id: str
    agent_id: AgentId
    challenge_id: int
    attempt_index: int
    status: AttemptStatus | None = None
    cost_usd: Decimal = Decimal("0.0000")
    started_at: datetime | None = None
    ended_at: datetime | None = None
    model_label: str = ""
    agent_label: str = ""

    def __post_init__(self):
        if self.attempt_index < 1:
            raise InputRejected(f"attempt_index must be >= 1, got {self.attempt_index}")
        self.cost_usd = Decimal(self.cost_usd).quantize(Decimal("0.0001"))
        if self.cost_usd < 0:
            raise InputRejected("cost_usd must be non-negative")

    @property
    def terminal(self) -> bool:
        return self.status is not None


@dataclass(frozen=True)
class EvaluationConfig:
    """Per-run evaluation limits. Defaults: 3 attempts, $3 cap per attempt."""

    k: int = 3
    cost_cap_usd: Decimal = Decimal("3.00")
    inactivity_timeout_s: int = 600

    def __post_init__(self):
        if self.k < 1:
            raise InputRejected(f"k must be >= 1, got {self.k}")
        object.__setattr__(self, "cost_cap_usd", Decimal(self.cost_cap_usd))
        if self.cost_cap_usd <= 0:
            raise InputRejected("cost_cap_usd must be positive")
        if self.inactivity_timeout_s <= 0:
            raise InputRejected("inactivity_timeout_s must be positive")


@dataclass(frozen=True)
class ReportRow:
    """Solve rate for one reporting group.

    For leaf rows (one model+agent pair) pass_at_k_rate is exactly
    problems_solved / problems_total. Aggregate rows keep summed counts but
    their rate is the unweighted mean of the member rates, which is what the
    published tables use.
    """

    group_key: str
    problems_total: int
    problems_solved: int
    pass_at_k_rate: Fraction

    def __post_init__(self):
        if self.problems_total < 0 or self.problems_solved < 0:
            raise InputRejected("problem counts must be non-negative")
        if self.problems_solved > self.problems_total:
            raise InputRejected("problems_solved cannot exceed problems_total")
        if not (0 <= self.pass_at_k_rate <= 1):
            raise InputRejected("pass_at_k_rate must lie in [0, 1]")

    @classmethod
    def from_counts(cls, group_key: str, solved: int, total: int) -> "ReportRow":
        if total <= 0:
            raise InputRejected(f"group {group_key!r} has no problems")
        return cls(group_key, total, solved, Fraction(solved, total))


PAIR_KEY_SEPARATOR = "+"


def pair_key(model_label: str, agent_label: str) -> str:
    """Canonical group key for a model+agent pair row."""
    return f"{model_label}{PAIR_KEY_SEPARATOR}{agent_label}"


def split_pair_key(group_key: str) -> tuple[str, str]:
    """Invert pair_key. The agent label must not contain the separator."""
    if PAIR_KEY_SEPARATOR not in group_key:
        raise InputRejected(f"{group_key!r} is not a model{PAIR_KEY_SEPARATOR}agent pair key")
    model, agent = group_key.rsplit(PAIR_KEY_SEPARATOR, 1)
    return model, agent


@dataclass(frozen=True)
class SubmissionVerdict:
    """What the competition platform said about one flag submission."""

    correct: bool
    message: str
    raw_status: str


# Platform statuses that mean the flag was accepted.
ACCEPTING_STATUSES = frozenset({"correct", "already_solved"})


def verdict_from_status(raw_status: str, message: str = "") -> SubmissionVerdict:
    return SubmissionVerdict(
        correct=raw_status in ACCEPTING_STATUSES,
        message=message,
        raw_status=raw_status,
    )


def normalize_flag(flag: str) -> str:
    """Strip exactly one trailing newline; everything else is preserved.

    Comparison elsewhere is byte-exact, so case and interior whitespace
    survive normalization.
    """
    if flag.endswith("\r\n"):
        return flag[:-2]
    if flag.endswith("\n"):
        return flag[:-1]
    return flag


@dataclass(frozen=True)
class AttemptRef:
    """Identity of an attempt inside a run, used by journals and reports."""

    agent_id: AgentId
    challenge_id: int
    attempt_index: int

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.agent_id, self.challenge_id, self.attempt_index)
