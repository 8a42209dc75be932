"""Evaluation metrics: pass@k, group-rate aggregation, failure-mode shares.

All functions are pure over immutable inputs and keep rates as exact
fractions. Aggregation averages member rates without weighting by group
size; that is the convention the published summary tables follow, and with
equal denominators it coincides with pooling.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Literal, Sequence

from .model import (
    Attempt,
    AttemptStatus,
    InputRejected,
    ReportRow,
    TerminationSignal,
    split_pair_key,
)

GroupDimension = Literal["model", "agent"]


def compute_pass_at_k(attempts: Sequence[Attempt], k: int) -> dict[int, bool]:
    """Map each attempted challenge to whether any of its attempts solved it.

    Challenges with no attempts do not appear in the result. Attempts with an
    index outside [1, k] are rejected rather than silently dropped.
    """
    if k < 1:
        raise InputRejected(f"k must be >= 1, got {k}")
    solved: dict[int, bool] = {}
    for attempt in attempts:
        if not (1 <= attempt.attempt_index <= k):
            raise InputRejected(
                f"attempt {attempt.attempt_id!r} has index {attempt.attempt_index} "
                f"outside [1, {k}]"
            )
        prior = solved.get(attempt.challenge_id, False)
        solved[attempt.challenge_id] = prior or attempt.status is AttemptStatus.SOLVED
    return solved


def solve_rate(pass_map: dict[int, bool]) -> Fraction:
    """Fraction of attempted challenges with at least one solving attempt."""
    if not pass_map:
        raise InputRejected("cannot compute a solve rate over zero challenges")
    return Fraction(sum(1 for v in pass_map.values() if v), len(pass_map))


def aggregate_rates(rows: Sequence[ReportRow], group_by: GroupDimension) -> list[ReportRow]:
    """Collapse model+agent pair rows into per-model or per-agent rows.

    The group rate is the unweighted arithmetic mean of the member pair
    rates, computed on the exact fractions. Counts are summed for context
    but do not define the rate.
    """
    if not rows:
        raise InputRejected("aggregate_rates requires at least one row")
    if group_by not in ("model", "agent"):
        raise InputRejected(f"unknown grouping dimension {group_by!r}")
    groups: dict[str, list[ReportRow]] = defaultdict(list)
    for row in rows:
        model, agent = split_pair_key(row.group_key)
        groups[model if group_by == "model" else agent].append(row)
    out = []
    for key in sorted(groups):
        members = groups[key]
        mean = sum((m.pass_at_k_rate for m in members), Fraction(0)) / len(members)
        out.append(
            ReportRow(
                group_key=key,
                problems_total=sum(m.problems_total for m in members),
                problems_solved=sum(m.problems_solved for m in members),
                pass_at_k_rate=mean,
            )
        )
    return out


@dataclass(frozen=True)
class FailureDistribution:
    """Status counts plus shares of each failure mode among failed attempts."""

    counts: dict[AttemptStatus, int]
    attempt_success_rate: Fraction
    failure_shares: dict[AttemptStatus, Fraction] = field(default_factory=dict)

    @property
    def total_attempts(self) -> int:
        return sum(self.counts.values())


def failure_distribution(attempts: Sequence[Attempt]) -> FailureDistribution:
    """Tally terminal statuses and the failure-mode breakdown.

    Shares are computed over non-solved attempts only; when every attempt
    solved, the share table is empty rather than NaN.
    """
    if not attempts:
        raise InputRejected("failure_distribution requires at least one attempt")
    for attempt in attempts:
        if attempt.status is None:
            raise InputRejected(f"attempt {attempt.attempt_id!r} is not terminal")
    counts = Counter(a.status for a in attempts)
    full: dict[AttemptStatus, int] = {status: counts.get(status, 0) for status in AttemptStatus}
    failed = sum(n for status, n in full.items() if status is not AttemptStatus.SOLVED)
    shares: dict[AttemptStatus, Fraction] = {}
    if failed:
        shares = {
            status: Fraction(n, failed)
            for status, n in full.items()
            if status is not AttemptStatus.SOLVED
        }
    return FailureDistribution(
        counts=full,
        attempt_success_rate=Fraction(full[AttemptStatus.SOLVED], len(attempts)),
        failure_shares=shares,
    )


_SIGNAL_TO_STATUS = {
    TerminationSignal.CORRECT_FLAG_ACCEPTED: AttemptStatus.SOLVED,
    TerminationSignal.BUDGET_EXHAUSTED: AttemptStatus.COSTLIMIT,
    TerminationSignal.AGENT_DECLARED_GIVEUP: AttemptStatus.GIVEUP,
    TerminationSignal.INACTIVITY_TIMEOUT: AttemptStatus.SUSPENDED,
    TerminationSignal.RUN_WINDOW_CLOSED: AttemptStatus.UNSOLVED,
}


def classify_termination(signal: TerminationSignal) -> AttemptStatus:
    """Total mapping from termination signal to terminal attempt status."""
    return _SIGNAL_TO_STATUS[TerminationSignal(signal)]


def pair_rows(attempts: Iterable[Attempt], k: int) -> list[ReportRow]:
    """Build one ReportRow per (model_label, agent_label) pair from attempts."""
    from .model import pair_key

    by_pair: dict[str, list[Attempt]] = defaultdict(list)
    for attempt in attempts:
        by_pair[pair_key(attempt.model_label, attempt.agent_label)].append(attempt)
    rows = []
    for key in sorted(by_pair):
        pass_map = compute_pass_at_k(by_pair[key], k)
        rows.append(
            ReportRow(
                group_key=key,
                problems_total=len(pass_map),
                problems_solved=sum(1 for v in pass_map.values() if v),
                pass_at_k_rate=solve_rate(pass_map),
            )
        )
    return rows
