"""Streaming evaluation gateway for multi-agent CTF runs.

Multiple agents share one competition account; the submission proxy
forwards each challenge's first correct flag upstream exactly once and
answers everything later from a local ledger, while the orchestrator
schedules budgeted attempts and reports pass@k.
"""

from .clock import ManualClock, SystemClock, utcnow
from .model import (
    AgentId,
    ArtifactRef,
    Attempt,
    AttemptStatus,
    ChallengeRecord,
    EvaluationConfig,
    InputRejected,
    ReportRow,
    SubmissionVerdict,
    TerminationSignal,
    normalize_flag,
)
from .proxy import LedgerEntry, QuotaExhausted, SubmissionOutcome, SubmissionProxy

__version__ = "0.1.0"

__all__ = [
    "AgentId",
    "ArtifactRef",
    "Attempt",
    "AttemptStatus",
    "ChallengeRecord",
    "EvaluationConfig",
    "InputRejected",
    "LedgerEntry",
    "ManualClock",
    "QuotaExhausted",
    "ReportRow",
    "SubmissionOutcome",
    "SubmissionProxy",
    "SubmissionVerdict",
    "SystemClock",
    "TerminationSignal",
    "normalize_flag",
    "utcnow",
    "__version__",
]
