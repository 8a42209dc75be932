"""Shared fixtures and the acceptance-criteria reporting hook."""

from __future__ import annotations

import base64

import pytest

from ctfusion.clock import ManualClock
from ctfusion.ctfd import ArtifactCache, CompetitionEndpoint, CtfdClient
from ctfusion.mockctfd import CompetitionFixture, MockCtfd, fixture_from_dict

API_TOKEN = "team-token"


def build_fixture(
    challenge_count: int = 5,
    with_files: bool = False,
    rate_limit: dict | None = None,
    fault_plan: list | None = None,
) -> CompetitionFixture:
    """A fixture of sequentially numbered challenges with stable flags."""
    challenges = []
    for i in range(1, challenge_count + 1):
        entry = {
            "id": i,
            "name": f"challenge-{i}",
            "category": ["pwn", "rev", "web", "crypto", "forensics"][(i - 1) % 5],
            "points": 100 * i,
            "description": f"find flag {i}",
            "flag": f"flag{{answer-{i}}}",
        }
        if with_files:
            entry["files"] = [
                {"name": f"task{i}.bin", "content_base64": base64.b64encode(
                    f"binary payload {i}".encode()).decode()},
                {"name": f"notes{i}.txt", "content_base64": base64.b64encode(
                    f"reading material {i}".encode()).decode()},
            ]
        challenges.append(entry)
    raw = {"name": "test-event", "api_token": API_TOKEN, "challenges": challenges}
    if rate_limit:
        raw["rate_limit"] = rate_limit
    if fault_plan:
        raw["fault_plan"] = fault_plan
    return fixture_from_dict(raw)


@pytest.fixture
def manual_clock() -> ManualClock:
    return ManualClock()


@pytest.fixture
def mock_server():
    with MockCtfd(build_fixture()) as mock:
        yield mock


@pytest.fixture
def mock_server_with_files():
    with MockCtfd(build_fixture(with_files=True)) as mock:
        yield mock


def make_client(mock: MockCtfd, cache_dir, **kwargs) -> CtfdClient:
    endpoint = CompetitionEndpoint(base_url=mock.base_url, api_token=API_TOKEN)
    return CtfdClient(endpoint, ArtifactCache(cache_dir), **kwargs)


@pytest.fixture
def client(mock_server, tmp_path):
    c = make_client(mock_server, tmp_path / "cache")
    yield c
    c.close()


# -- acceptance criteria summary ------------------------------------------

_acceptance_results: list[tuple[str, str]] = []


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance(criterion): a gate criterion; reported pass/fail by name"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker and report.when == "call":
        _acceptance_results.append((marker.args[0], report.outcome))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, outcome in _acceptance_results:
        word = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{word}  {criterion}")
