"""Metrics: frozen count-table oracles plus structural properties.

The frozen tables pin the exact rendering of known solved/total counts at
two decimal places, including the cases where averaging the rendered
percentages would give a different answer than averaging the exact rates.
"""

from __future__ import annotations

from decimal import Decimal
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctfusion.metrics import (
    aggregate_rates,
    classify_termination,
    compute_pass_at_k,
    failure_distribution,
    pair_rows,
    solve_rate,
)
from ctfusion.model import (
    Attempt,
    AttemptStatus,
    InputRejected,
    ReportRow,
    TerminationSignal,
)
from ctfusion.reporting import format_rate_pct


def make_attempt(
    status: AttemptStatus,
    challenge_id: int,
    index: int = 1,
    agent_id: str = "agent1",
    model: str = "m1",
    agent: str = "a1",
) -> Attempt:
    return Attempt(
        attempt_id=f"{agent_id}-{challenge_id}-{index}",
        agent_id=agent_id,
        challenge_id=challenge_id,
        attempt_index=index,
        status=status,
        model_label=model,
        agent_label=agent,
    )


# -- frozen tables ---------------------------------------------------------

# six pairs over 180 problems each
TABLE_180 = {
    "m1+a1": (35, "19.44"),
    "m1+a2": (26, "14.44"),
    "m2+a1": (22, "12.22"),
    "m2+a2": (19, "10.56"),
    "m3+a1": (31, "17.22"),
    "m3+a2": (23, "12.78"),
}
TABLE_180_MODEL = {"m1": "16.94", "m2": "11.39", "m3": "15.00"}
TABLE_180_AGENT = {"a1": "16.30", "a2": "12.59"}

# six pairs over 176 problems each
TABLE_176 = {
    "m1+a1": (17, "9.66"),
    "m1+a2": (9, "5.11"),
    "m2+a1": (9, "5.11"),
    "m2+a2": (9, "5.11"),
    "m3+a1": (12, "6.82"),
    "m3+a2": (10, "5.68"),
}
TABLE_176_AGENT = {"a1": "7.20", "a2": "5.30"}


def rows_from_table(table: dict, total: int) -> list[ReportRow]:
    return [ReportRow.from_counts(key, solved, total)
            for key, (solved, _) in sorted(table.items())]


@pytest.mark.parametrize("table,total", [(TABLE_180, 180), (TABLE_176, 176)])
def test_pair_rate_rendering_matches_frozen_counts(table, total):
    for key, (solved, expected) in table.items():
        assert format_rate_pct(Fraction(solved, total)) == expected


def test_model_aggregation_over_180():
    rows = rows_from_table(TABLE_180, 180)
    by_model = {r.group_key: r for r in aggregate_rates(rows, "model")}
    assert set(by_model) == set(TABLE_180_MODEL)
    for model, expected in TABLE_180_MODEL.items():
        assert format_rate_pct(by_model[model].pass_at_k_rate) == expected
        assert by_model[model].problems_total == 360


def test_agent_aggregation_over_180():
    rows = rows_from_table(TABLE_180, 180)
    by_agent = {r.group_key: r for r in aggregate_rates(rows, "agent")}
    for agent, expected in TABLE_180_AGENT.items():
        assert format_rate_pct(by_agent[agent].pass_at_k_rate) == expected
    # a1 is exactly (35+22+31)/540; both counts and rate must agree
    assert by_agent["a1"].pass_at_k_rate == Fraction(88, 540)
    assert by_agent["a1"].problems_solved == 88


def test_exact_aggregation_differs_from_rendered_mean():
    """Averaging the 2dp strings gives 16.29; the exact mean renders 16.30.

    This is the regression that justifies carrying fractions end to end.
    """
    rendered = [Decimal(TABLE_180[key][1]) for key in ("m1+a1", "m2+a1", "m3+a1")]
    rendered_mean = (sum(rendered) / 3).quantize(Decimal("0.01"))
    assert str(rendered_mean) == "16.29"
    exact_mean = sum(Fraction(TABLE_180[k][0], 180) for k in ("m1+a1", "m2+a1", "m3+a1")) / 3
    assert format_rate_pct(exact_mean) == "16.30"


def test_agent_aggregation_over_176():
    rows = rows_from_table(TABLE_176, 176)
    by_agent = {r.group_key: r for r in aggregate_rates(rows, "agent")}
    for agent, expected in TABLE_176_AGENT.items():
        assert format_rate_pct(by_agent[agent].pass_at_k_rate) == expected
    assert by_agent["a1"].pass_at_k_rate == Fraction(38, 528)


def test_model_aggregation_over_176_is_exact_mean():
    # the m1 mean is (17/176 + 9/176) / 2 = 26/352, whatever a rendered
    # table might claim
    rows = rows_from_table(TABLE_176, 176)
    by_model = {r.group_key: r for r in aggregate_rates(rows, "model")}
    assert by_model["m1"].pass_at_k_rate == Fraction(26, 352)
    assert format_rate_pct(by_model["m1"].pass_at_k_rate) == "7.39"


FROZEN_TAXONOMY = {
    AttemptStatus.SOLVED: 158,
    AttemptStatus.COSTLIMIT: 1296,
    AttemptStatus.GIVEUP: 700,
    AttemptStatus.SUSPENDED: 870,
    AttemptStatus.UNSOLVED: 0,
}


def test_failure_distribution_frozen_taxonomy():
    attempts = []
    challenge = 0
    for status, count in FROZEN_TAXONOMY.items():
        for _ in range(count):
            challenge += 1
            attempts.append(make_attempt(status, challenge))
    dist = failure_distribution(attempts)
    assert dist.total_attempts == 3024
    assert dist.counts == FROZEN_TAXONOMY
    assert format_rate_pct(dist.attempt_success_rate) == "5.22"
    shares = {s: format_rate_pct(f) for s, f in dist.failure_shares.items()}
    assert shares == {
        AttemptStatus.COSTLIMIT: "45.22",
        AttemptStatus.SUSPENDED: "30.36",
        AttemptStatus.GIVEUP: "24.42",
        AttemptStatus.UNSOLVED: "0.00",
    }


# -- unit behavior ---------------------------------------------------------

def test_pass_at_k_any_solving_attempt_counts():
    attempts = [
        make_attempt(AttemptStatus.UNSOLVED, 1, 1),
        make_attempt(AttemptStatus.SOLVED, 1, 2),
        make_attempt(AttemptStatus.GIVEUP, 2, 1),
    ]
    assert compute_pass_at_k(attempts, 3) == {1: True, 2: False}


def test_pass_at_k_rejects_out_of_range_index():
    with pytest.raises(InputRejected):
        compute_pass_at_k([make_attempt(AttemptStatus.SOLVED, 1, 4)], 3)
    with pytest.raises(InputRejected):
        compute_pass_at_k([], 0)


def test_solve_rate_rejects_empty():
    with pytest.raises(InputRejected):
        solve_rate({})


def test_aggregate_rejects_empty_and_bad_dimension():
    with pytest.raises(InputRejected):
        aggregate_rates([], "model")
    with pytest.raises(InputRejected):
        aggregate_rates(rows_from_table(TABLE_180, 180), "category")


def test_classify_termination_is_total():
    expected = {
        TerminationSignal.CORRECT_FLAG_ACCEPTED: AttemptStatus.SOLVED,
        TerminationSignal.BUDGET_EXHAUSTED: AttemptStatus.COSTLIMIT,
        TerminationSignal.AGENT_DECLARED_GIVEUP: AttemptStatus.GIVEUP,
        TerminationSignal.INACTIVITY_TIMEOUT: AttemptStatus.SUSPENDED,
        TerminationSignal.RUN_WINDOW_CLOSED: AttemptStatus.UNSOLVED,
    }
    for signal in TerminationSignal:
        assert classify_termination(signal) is expected[signal]


def test_pair_rows_groups_by_labels():
    attempts = [
        make_attempt(AttemptStatus.SOLVED, 1, 1, model="mA", agent="aX"),
        make_attempt(AttemptStatus.UNSOLVED, 2, 1, model="mA", agent="aX"),
        make_attempt(AttemptStatus.SOLVED, 1, 1, agent_id="other", model="mB", agent="aX"),
    ]
    rows = {r.group_key: r for r in pair_rows(attempts, 3)}
    assert rows["mA+aX"].problems_total == 2
    assert rows["mA+aX"].pass_at_k_rate == Fraction(1, 2)
    assert rows["mB+aX"].pass_at_k_rate == Fraction(1, 1)


def test_failure_distribution_rejects_live_attempts():
    live = make_attempt(AttemptStatus.SOLVED, 1)
    live.status = None
    with pytest.raises(InputRejected):
        failure_distribution([live])
    with pytest.raises(InputRejected):
        failure_distribution([])


def test_failure_shares_empty_when_everything_solved():
    dist = failure_distribution([make_attempt(AttemptStatus.SOLVED, 1)])
    assert dist.failure_shares == {}
    assert dist.attempt_success_rate == 1


# -- properties ------------------------------------------------------------

attempt_specs = st.lists(
    st.tuples(
        st.integers(min_value=1, max_value=12),  # challenge
        st.integers(min_value=1, max_value=3),   # index
        st.sampled_from(list(AttemptStatus)),
    ),
    min_size=1,
    max_size=50,
)


@given(specs=attempt_specs)
def test_pass_at_k_matches_brute_force(specs):
    attempts = [
        make_attempt(status, cid, idx) for cid, idx, status in specs
    ]
    got = compute_pass_at_k(attempts, 3)
    challenges = {a.challenge_id for a in attempts}
    assert set(got) == challenges
    for cid in challenges:
        expect = any(
            a.status is AttemptStatus.SOLVED for a in attempts if a.challenge_id == cid
        )
        assert got[cid] == expect


@given(specs=attempt_specs)
def test_failure_distribution_conserves_counts(specs):
    attempts = [make_attempt(status, cid, idx) for cid, idx, status in specs]
    dist = failure_distribution(attempts)
    assert dist.total_attempts == len(attempts)
    assert sum(dist.counts.values()) == len(attempts)
    solved = dist.counts[AttemptStatus.SOLVED]
    assert dist.attempt_success_rate == Fraction(solved, len(attempts))
    if dist.failure_shares:
        assert sum(dist.failure_shares.values(), Fraction(0)) == 1


group_tables = st.dictionaries(
    keys=st.tuples(st.sampled_from(["mA", "mB", "mC"]), st.sampled_from(["aX", "aY"])),
    values=st.tuples(st.integers(0, 40), st.integers(1, 40)),
    min_size=1,
    max_size=6,
)


@given(table=group_tables)
def test_aggregate_rate_is_unweighted_mean(table):
    rows = []
    for (model, agent), (solved, extra) in table.items():
        total = solved + extra
        rows.append(ReportRow.from_counts(f"{model}+{agent}", solved, total))
    for dimension, position in (("model", 0), ("agent", 1)):
        for group in aggregate_rates(rows, dimension):
            members = [
                r for r in rows
                if r.group_key.split("+")[position] == group.group_key
            ]
            expect = sum((m.pass_at_k_rate for m in members), Fraction(0)) / len(members)
            assert group.pass_at_k_rate == expect
            assert group.problems_total == sum(m.problems_total for m in members)


@given(n=st.integers(0, 1000), d=st.integers(1, 1000))
def test_format_rate_pct_is_half_up_two_decimals(n, d):
    n = min(n, d)
    rendered = format_rate_pct(Fraction(n, d))
    assert rendered == str(
        (Decimal(n) * 100 / Decimal(d)).quantize(Decimal("0.01"), rounding="ROUND_HALF_UP")
    )
    assert Decimal("0.00") <= Decimal(rendered) <= Decimal("100.00")
