"""Submission proxy: forward-once, ledger verdicts, quota, recovery."""

from __future__ import annotations

import tempfile
import threading
import time
from pathlib import Path

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from ctfusion.clock import ManualClock
from ctfusion.ctfd import TransientUpstreamError
from ctfusion.journal import EventLog, JournalCorruption
from ctfusion.model import ChallengeRecord, InputRejected, normalize_flag, verdict_from_status
from ctfusion.proxy import (
    KIND_AGENT_MARKED_SOLVED,
    KIND_FORWARDED_UPSTREAM,
    KIND_LEDGER_WRITTEN,
    KIND_SUBMISSION_RECEIVED,
    KIND_VERDICT_RECORDED,
    QuotaExhausted,
    SubmissionProxy,
    UnknownAgentError,
)


class StubUpstream:
    """In-memory scoreboard with scriptable failures and optional delay."""

    def __init__(self, flags: dict[int, str], fail: list | None = None):
        self.flags = dict(flags)
        self.calls: list[tuple[int, str]] = []
        self.solved: dict[int, str] = {}
        self.delay_s = 0.0
        self._fail = list(fail or [])
        self._lock = threading.Lock()

    def submit_attempt(self, challenge_id: int, flag: str):
        with self._lock:
            self.calls.append((challenge_id, flag))
            if self._fail:
                fault = self._fail.pop(0)
                if fault is not None:
                    raise fault
        if self.delay_s:
            time.sleep(self.delay_s)
        with self._lock:
            if normalize_flag(flag) == self.flags.get(challenge_id):
                if challenge_id in self.solved:
                    return verdict_from_status("already_solved", "You already solved this")
                self.solved[challenge_id] = flag
                return verdict_from_status("correct", "Correct")
            return verdict_from_status("incorrect", "Incorrect")

    def calls_for(self, challenge_id: int) -> list[str]:
        with self._lock:
            return [f for c, f in self.calls if c == challenge_id]


def make_record(challenge_id: int, flag_format: str | None = None) -> ChallengeRecord:
    return ChallengeRecord(
        challenge_id=challenge_id,
        name=f"c{challenge_id}",
        category="misc",
        points=100,
        flag_format=flag_format,
    )


FLAGS = {1: "flag{alpha}", 2: "flag{beta}", 3: "flag{gamma}"}


def make_proxy(journal=None, quota=20, flag_format=None, upstream=None):
    upstream = upstream if upstream is not None else StubUpstream(FLAGS)
    proxy = SubmissionProxy(upstream, journal=journal, quota=quota)
    proxy.update_catalog([make_record(cid, flag_format) for cid in FLAGS])
    for agent in ("a1", "a2", "a3"):
        proxy.register_agent(agent)
    return proxy, upstream


def test_first_correct_flag_forwards_and_writes_ledger():
    proxy, upstream = make_proxy()
    outcome = proxy.submit("a1", 1, "flag{alpha}")
    assert outcome.correct
    assert outcome.source == "upstream"
    assert outcome.verdict.raw_status == "correct"
    assert upstream.calls == [(1, "flag{alpha}")]
    entry = proxy.ledger_snapshot()[1]
    assert entry.flag == "flag{alpha}"
    assert entry.solved_by == "a1"
    assert proxy.solved_view("a1") == {1}


def test_second_agent_verified_locally():
    proxy, upstream = make_proxy()
    proxy.submit("a1", 1, "flag{alpha}")
    outcome = proxy.submit("a2", 1, "flag{alpha}")
    assert outcome.correct
    assert outcome.source == "local_ledger"
    assert outcome.verdict.raw_status == "correct"
    assert len(upstream.calls) == 1
    assert proxy.solved_view("a2") == {1}
    # each agent's view is private
    assert proxy.solved_view("a3") == frozenset()


def test_repeat_by_same_agent_reads_already_solved():
    proxy, upstream = make_proxy()
    proxy.submit("a1", 1, "flag{alpha}")
    again = proxy.submit("a1", 1, "flag{alpha}")
    assert again.verdict.raw_status == "already_solved"
    assert again.source == "local_ledger"
    assert again.correct
    assert len(upstream.calls) == 1


def test_wrong_flag_after_solve_is_local_incorrect():
    proxy, upstream = make_proxy()
    proxy.submit("a1", 1, "flag{alpha}")
    wrong = proxy.submit("a2", 1, "flag{wrong}")
    assert not wrong.correct
    assert wrong.source == "local_ledger"
    assert wrong.verdict.raw_status == "incorrect"
    assert len(upstream.calls) == 1
    assert proxy.solved_view("a2") == frozenset()


def test_ledger_comparison_is_byte_exact():
    proxy, _ = make_proxy()
    proxy.submit("a1", 1, "flag{alpha}")
    assert not proxy.submit("a2", 1, "FLAG{ALPHA}").correct
    assert not proxy.submit("a2", 1, "flag{alpha} ").correct
    # one trailing newline is normalization, not a mismatch
    assert proxy.submit("a2", 1, "flag{alpha}\n").correct
    assert proxy.submit("a3", 1, "flag{alpha}\r\n").correct


def test_incorrect_upstream_verdict_leaves_state_untouched():
    proxy, upstream = make_proxy()
    outcome = proxy.submit("a1", 2, "flag{wrong}")
    assert not outcome.correct
    assert outcome.source == "upstream"
    assert proxy.ledger_snapshot() == {}
    assert proxy.solved_view("a1") == frozenset()
    assert len(upstream.calls) == 1


def test_format_gate_rejects_without_upstream_traffic():
    proxy, upstream = make_proxy(flag_format=r"flag\{[a-z-]+\}")
    outcome = proxy.submit("a1", 1, "alpha")
    assert not outcome.correct
    assert outcome.source == "local_format"
    assert outcome.verdict.raw_status == "malformed"
    assert upstream.calls == []
    # the attempt still consumed a submission
    assert proxy.submission_count("a1", 1) == 1
    # format must match the whole flag, not a prefix
    assert proxy.submit("a1", 1, "flag{alpha}x").verdict.raw_status == "malformed"
    assert proxy.submit("a1", 1, "flag{alpha}").correct


def test_input_validation():
    proxy, upstream = make_proxy()
    with pytest.raises(UnknownAgentError):
        proxy.submit("ghost", 1, "flag{alpha}")
    with pytest.raises(InputRejected, match="unknown challenge"):
        proxy.submit("a1", 99, "flag{alpha}")
    with pytest.raises(InputRejected, match="empty flag"):
        proxy.submit("a1", 1, "\n")
    with pytest.raises(InputRejected):
        proxy.register_agent("")
    with pytest.raises(InputRejected):
        SubmissionProxy(upstream, quota=0)
    # none of the rejected submissions were journaled or counted
    assert proxy.submission_count("a1", 1) == 0
    assert len(proxy.journal) == 0


def test_register_agent_is_idempotent():
    proxy, _ = make_proxy()
    proxy.submit("a1", 1, "flag{alpha}")
    proxy.register_agent("a1")
    assert proxy.solved_view("a1") == {1}


def test_quota_enforced_at_forward_per_agent_per_challenge():
    proxy, upstream = make_proxy(quota=3)
    for i in range(3):
        assert not proxy.submit("a1", 1, f"flag{{wrong-{i}}}").correct
    with pytest.raises(QuotaExhausted, match="challenge 1"):
        proxy.submit("a1", 1, "flag{wrong-3}")
    assert len(upstream.calls) == 3
    # a different challenge and a different agent are unaffected
    assert proxy.submit("a1", 2, "flag{beta}").correct
    assert proxy.submit("a2", 1, "flag{alpha}").correct


def test_ledger_verification_ignores_quota():
    proxy, upstream = make_proxy(quota=2)
    proxy.submit("a1", 1, "flag{wrong-a}")
    proxy.submit("a1", 1, "flag{wrong-b}")
    proxy.submit("a2", 1, "flag{alpha}")
    # a1 is out of forwarding quota, but the ledger answers locally
    outcome = proxy.submit("a1", 1, "flag{alpha}")
    assert outcome.correct
    assert outcome.source == "local_ledger"
    assert proxy.submission_count("a1", 1) == 3
    assert len(upstream.calls_for(1)) == 3


def test_transient_failure_propagates_without_mutation():
    upstream = StubUpstream(FLAGS, fail=[TransientUpstreamError("boom")])
    proxy, _ = make_proxy(upstream=upstream)
    with pytest.raises(TransientUpstreamError):
        proxy.submit("a1", 1, "flag{alpha}")
    assert proxy.ledger_snapshot() == {}
    assert proxy.solved_view("a1") == frozenset()
    # the submission itself was received and counted before the forward
    assert proxy.submission_count("a1", 1) == 1
    retry = proxy.submit("a1", 1, "flag{alpha}")
    assert retry.correct
    assert proxy.submission_count("a1", 1) == 2
    assert len(upstream.calls) == 2


def test_upstream_already_solved_without_ledger_is_anomaly():
    upstream = StubUpstream(FLAGS)
    upstream.solved[1] = "flag{alpha}"  # solved outside the proxy
    proxy, _ = make_proxy(upstream=upstream)
    outcome = proxy.submit("a1", 1, "flag{alpha}")
    assert outcome.correct
    assert outcome.verdict.raw_status == "already_solved"
    # the flag was never verified first-hand, so it must not enter the ledger
    assert proxy.ledger_snapshot() == {}
    assert proxy.solved_view("a1") == {1}
    assert any("no ledger entry" in note for note in proxy.anomalies)


def test_journal_event_sequence_for_first_solve():
    proxy, _ = make_proxy()
    proxy.submit("a1", 1, "flag{alpha}")
    kinds = [e.kind for e in proxy.journal.snapshot()]
    assert kinds == [
        KIND_SUBMISSION_RECEIVED,
        KIND_FORWARDED_UPSTREAM,
        KIND_VERDICT_RECORDED,
        KIND_LEDGER_WRITTEN,
        KIND_AGENT_MARKED_SOLVED,
    ]
    verdict_event = proxy.journal.snapshot()[2]
    assert verdict_event.payload["status"] == "correct"
    assert verdict_event.payload["source"] == "upstream"


def test_agent_marked_solved_journaled_once():
    proxy, _ = make_proxy()
    proxy.submit("a1", 1, "flag{alpha}")
    proxy.submit("a1", 1, "flag{alpha}")
    proxy.submit("a1", 1, "flag{alpha}")
    marks = [e for e in proxy.journal.snapshot() if e.kind == KIND_AGENT_MARKED_SOLVED]
    assert len(marks) == 1


def test_concurrent_correct_submissions_forward_once():
    upstream = StubUpstream(FLAGS)
    upstream.delay_s = 0.02
    proxy, _ = make_proxy(upstream=upstream)
    agents = [f"a{i}" for i in range(1, 4)]
    barrier = threading.Barrier(len(agents))
    outcomes = {}

    def worker(agent):
        barrier.wait()
        outcomes[agent] = proxy.submit(agent, 1, "flag{alpha}")

    threads = [threading.Thread(target=worker, args=(a,)) for a in agents]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(upstream.calls_for(1)) == 1
    assert all(o.correct for o in outcomes.values())
    # exactly one outcome came from upstream, the rest from the ledger
    sources = sorted(o.source for o in outcomes.values())
    assert sources == ["local_ledger", "local_ledger", "upstream"]
    assert set(proxy.views_snapshot()) == {"a1", "a2", "a3"}
    assert all(view == {1} for view in proxy.views_snapshot().values())


def test_reconcile_platform_solves_never_adopts():
    proxy, _ = make_proxy()
    proxy.submit("a1", 1, "flag{alpha}")
    notes = proxy.reconcile_platform_solves({1, 2})
    assert len(notes) == 1
    assert "challenge 2" in notes[0]
    assert proxy.ledger_snapshot().keys() == {1}
    assert proxy.reconcile_platform_solves({1}) == []


def run_scenario(proxy):
    proxy.submit("a1", 1, "flag{wrong}")
    proxy.submit("a1", 1, "flag{alpha}")
    proxy.submit("a2", 1, "flag{alpha}")
    proxy.submit("a2", 2, "flag{beta}")
    proxy.submit("a3", 3, "flag{nope}")


def test_recovery_round_trip_matches_original(tmp_path):
    clock = ManualClock()
    path = tmp_path / "proxy.jsonl"
    journal = EventLog(path, now=lambda: clock.advance(1))
    proxy, _ = make_proxy(journal=journal)
    run_scenario(proxy)
    journal.close()

    recovered = SubmissionProxy.recover(
        path, StubUpstream(FLAGS), catalog=[make_record(cid) for cid in FLAGS]
    )
    assert recovered.ledger_snapshot() == proxy.ledger_snapshot()
    assert recovered.views_snapshot() == proxy.views_snapshot()
    assert recovered.counts_snapshot() == proxy.counts_snapshot()
    # recovered state keeps answering from the ledger without new forwards
    upstream2 = recovered._upstream
    assert recovered.submit("a3", 1, "flag{alpha}").source == "local_ledger"
    assert upstream2.calls == []
    recovered.journal.close()


def test_recovery_continues_journal_sequence(tmp_path):
    path = tmp_path / "proxy.jsonl"
    journal = EventLog(path)
    proxy, _ = make_proxy(journal=journal)
    proxy.submit("a1", 1, "flag{alpha}")
    before = len(journal)
    journal.close()

    recovered = SubmissionProxy.recover(
        path, StubUpstream(FLAGS), catalog=[make_record(cid) for cid in FLAGS]
    )
    recovered.register_agent("a2")
    recovered.submit("a2", 2, "flag{beta}")
    recovered.journal.close()
    from ctfusion.journal import read_events

    events = read_events(path)
    assert events[before].seq == before + 1


def test_recovery_refuses_sequence_gap(tmp_path):
    path = tmp_path / "proxy.jsonl"
    journal = EventLog(path)
    proxy, _ = make_proxy(journal=journal)
    run_scenario(proxy)
    journal.close()
    lines = path.read_text().splitlines()
    del lines[3]
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(JournalCorruption):
        SubmissionProxy.recover(path, StubUpstream(FLAGS))


# -- properties ------------------------------------------------------------

operations = st.lists(
    st.tuples(
        st.sampled_from(["a1", "a2", "a3"]),
        st.sampled_from([1, 2, 3]),
        st.sampled_from(["flag{alpha}", "flag{beta}", "flag{gamma}", "flag{no}", "flag{way}"]),
    ),
    min_size=1,
    max_size=40,
)


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(ops=operations)
def test_random_schedules_keep_invariants_and_replay_equal(ops):
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "proxy.jsonl"
        journal = EventLog(path)
        proxy, upstream = make_proxy(journal=journal, quota=4)
        accepted = 0
        for agent, challenge, flag in ops:
            try:
                outcome = proxy.submit(agent, challenge, flag)
            except QuotaExhausted:
                continue
            accepted += outcome.correct

        ledger = proxy.ledger_snapshot()
        # at most one upstream submission per challenge was ever correct
        for challenge_id, entry in ledger.items():
            assert entry.flag == FLAGS[challenge_id]
            assert upstream.solved[challenge_id] == entry.flag
        assert set(ledger) == set(upstream.solved)
        # a solved view only ever contains ledgered challenges
        for view in proxy.views_snapshot().values():
            assert view <= set(ledger)
        # forwards stop once a challenge is ledgered
        for challenge_id in ledger:
            flags_sent = upstream.calls_for(challenge_id)
            assert flags_sent.count(FLAGS[challenge_id]) == 1

        journal.close()
        recovered = SubmissionProxy.recover(
            path, StubUpstream(FLAGS), catalog=[make_record(cid) for cid in FLAGS]
        )
        # agents re-register on handshake after a restart; views of agents
        # that never submitted are not journaled state
        for agent in ("a1", "a2", "a3"):
            recovered.register_agent(agent)
        assert recovered.ledger_snapshot() == ledger
        assert recovered.views_snapshot() == proxy.views_snapshot()
        assert recovered.counts_snapshot() == proxy.counts_snapshot()
        recovered.journal.close()
