"""Command line entry points: run, report, mock, agent."""

from __future__ import annotations

import json
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

import click
import httpx

from .agent import HttpConnection, ScriptedAgent, load_script
from .mockctfd import MockCtfd, load_fixture
from .model import InputRejected
from .orchestrator import load_plan, report_from_journal
from .reporting import render_report_table, write_report
from .session import ENV_DATA_DIR, RUN_JOURNAL, RunHub, RunSession

ENV_CONTROL_LISTEN = "CTFUSION_CONTROL_LISTEN"
ENV_CONTROL_URL = "CTFUSION_CONTROL_URL"
ENV_ATTEMPT_ID = "CTFUSION_ATTEMPT_ID"
ENV_CHALLENGE_ID = "CTFUSION_CHALLENGE_ID"
ENV_MCP_LISTEN = "CTFUSION_MCP_LISTEN"
ENV_AGENT_TOKEN = "CTFUSION_AGENT_TOKEN"


@click.group()
@click.version_option(package_name="ctfusion")
def main() -> None:
    """Streaming evaluation gateway for multi-agent CTF runs."""


@main.command(name="run")
@click.option("--plan", "plan_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="run plan JSON file")
@click.option("--data-dir", default=None, help=f"run data root (default ${ENV_DATA_DIR})")
@click.option("--control", "control_listen", default=None,
              help=f"serve the operator API on host:port (default ${ENV_CONTROL_LISTEN})")
@click.option("--mcp-listen", default=None,
              help="bind the agent-facing HTTP endpoint on host:port")
def run_command(plan_path: Path, data_dir: str | None, control_listen: str | None,
                mcp_listen: str | None) -> None:
    """Execute a run plan to completion and write its report bundle."""
    default_run_id = "run-" + datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S")
    try:
        plan = load_plan(plan_path, default_run_id=default_run_id)
        session = RunSession(
            plan, data_dir=data_dir, mcp_listen=mcp_listen, plan_dir=plan_path.parent
        )
    except InputRejected as exc:
        raise click.ClickException(str(exc)) from exc

    control = None
    listen = control_listen or os.environ.get(ENV_CONTROL_LISTEN)
    if listen:
        from .control_api import ControlServer, create_app

        hub = RunHub()
        hub.add(session)
        control = ControlServer(create_app(hub), listen).start()
        click.echo(f"control API: {control.base_url}", err=True)
    try:
        session.start()
        if session.mcp_endpoint:
            click.echo(f"agent endpoint: {session.mcp_endpoint}", err=True)
        report = session.run()
    finally:
        if control is not None:
            control.stop()
    click.echo(render_report_table(report), nl=False)
    click.echo(f"report bundle: {session.run_dir / 'report'}", err=True)


@main.command(name="report")
@click.option("--run", "run_id", required=True, help="run id under the data root")
@click.option("--data-dir", default=None, help=f"run data root (default ${ENV_DATA_DIR})")
@click.option("--format", "fmt", type=click.Choice(["table", "json"]), default="table")
@click.option("--out", "out_dir", default=None,
              help="bundle directory (default <run dir>/report)")
def report_command(run_id: str, data_dir: str | None, fmt: str, out_dir: str | None) -> None:
    """Rebuild a run's report from its journal; write tables and figures."""
    data_root = Path(data_dir or os.environ.get(ENV_DATA_DIR) or "ctfusion-data")
    journal_path = data_root / run_id / RUN_JOURNAL
    if not journal_path.exists():
        raise click.ClickException(f"no journal at {journal_path}")
    try:
        report = report_from_journal(journal_path)
    except InputRejected as exc:
        raise click.ClickException(str(exc)) from exc
    bundle_dir = Path(out_dir) if out_dir else data_root / run_id / "report"
    write_report(report, bundle_dir)
    if fmt == "json":
        click.echo(report.to_json(), nl=False)
    else:
        click.echo(render_report_table(report), nl=False)
    click.echo(f"report bundle: {bundle_dir}", err=True)


@main.command(name="mock")
@click.option("--fixture", "fixture_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="competition fixture JSON")
@click.option("--listen", default="127.0.0.1:8000", show_default=True)
def mock_command(fixture_path: Path, listen: str) -> None:
    """Serve a fixture as a local CTFd-compatible platform."""
    fixture = load_fixture(fixture_path)
    with MockCtfd(fixture, listen=listen) as mock:
        click.echo(f"serving {fixture.name!r} at {mock.base_url}", err=True)
        click.echo(mock.base_url)
        try:
            while True:
                time.sleep(3600)
        except KeyboardInterrupt:
            click.echo("stopping", err=True)


def _normalize_endpoint(value: str) -> str:
    if not value.startswith("http://") and not value.startswith("https://"):
        value = f"http://{value}"
    if not value.rstrip("/").endswith("/mcp"):
        value = value.rstrip("/") + "/mcp"
    return value


@main.command(name="agent")
@click.option("--script", "script_path", required=True,
              type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="agent script JSON file")
@click.option("--endpoint", default=None,
              help=f"gateway endpoint (default ${ENV_MCP_LISTEN})")
@click.option("--token", default=None, help=f"agent token (default ${ENV_AGENT_TOKEN})")
@click.option("--challenge", "challenge_id", type=int, default=None,
              help=f"fills $current in the script (default ${ENV_CHALLENGE_ID})")
def agent_command(script_path: Path, endpoint: str | None, token: str | None,
                  challenge_id: int | None) -> None:
    """Run a script against a gateway; prints the transcript as JSON."""
    endpoint = endpoint or os.environ.get(ENV_MCP_LISTEN)
    token = token or os.environ.get(ENV_AGENT_TOKEN)
    if not endpoint:
        raise click.ClickException(f"no endpoint: pass --endpoint or set {ENV_MCP_LISTEN}")
    if not token:
        raise click.ClickException(f"no token: pass --token or set {ENV_AGENT_TOKEN}")
    if challenge_id is None and os.environ.get(ENV_CHALLENGE_ID):
        challenge_id = int(os.environ[ENV_CHALLENGE_ID])
    script = load_script(script_path)

    report_cost = None
    give_up = None
    control_url = os.environ.get(ENV_CONTROL_URL)
    attempt_id = os.environ.get(ENV_ATTEMPT_ID)
    if control_url and attempt_id:
        base = control_url.rstrip("/")

        def report_cost(total: str, _base=base, _attempt=attempt_id) -> None:
            httpx.post(
                f"{_base}/api/attempts/{_attempt}/cost",
                json={"total_usd": total}, timeout=10.0,
            ).raise_for_status()

        def give_up(reason: str, _base=base, _attempt=attempt_id) -> None:
            httpx.post(
                f"{_base}/api/attempts/{_attempt}/terminate",
                json={"signal": "agent_declared_giveup", "note": reason}, timeout=10.0,
            ).raise_for_status()

    connection = HttpConnection(_normalize_endpoint(endpoint), token)
    runner = ScriptedAgent(
        connection, challenge_id=challenge_id,
        report_cost=report_cost, give_up=give_up,
    )
    transcript = runner.run(script)
    out = {
        "script": transcript.script_name,
        "gave_up": transcript.gave_up,
        "aborted": transcript.aborted,
        "steps": [
            {"index": s.index, "action": s.action, "ok": s.ok,
             "payload": s.payload, "error": s.error}
            for s in transcript.steps
        ],
    }
    click.echo(json.dumps(out, indent=2, sort_keys=True))
    if transcript.aborted:
        sys.exit(1)


if __name__ == "__main__":
    main()
