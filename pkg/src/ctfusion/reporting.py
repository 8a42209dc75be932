"""Report rendering: delimited tables, canonical JSON, and figures.

Rates are exact fractions until this point; rendering rounds half-up to two
decimal places, matching how the summary tables are published.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from .metrics import FailureDistribution
from .model import AttemptStatus, ReportRow


def format_rate_pct(rate: Fraction) -> str:
    """Render a fraction as a percentage with two decimals, half-up."""
    exact = Decimal(rate.numerator * 100) / Decimal(rate.denominator)
    return str(exact.quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class EvaluationReport:
    """Finalized output of a run: group rows, failure modes, attempt ledger."""

    run_id: str
    k: int
    pair_rows: tuple[ReportRow, ...]
    model_rows: tuple[ReportRow, ...]
    agent_rows: tuple[ReportRow, ...]
    category_rows: tuple[ReportRow, ...]
    failure: FailureDistribution
    attempts: tuple[dict, ...]

    def to_dict(self) -> dict:
        return {
            "run_id": self.run_id,
            "k": self.k,
            "rows": {
                "pair": [_row_dict(r) for r in self.pair_rows],
                "model": [_row_dict(r) for r in self.model_rows],
                "agent": [_row_dict(r) for r in self.agent_rows],
                "category": [_row_dict(r) for r in self.category_rows],
            },
            "failure_distribution": {
                "counts": {s.value: n for s, n in sorted(self.failure.counts.items())},
                "attempt_success_rate_pct": format_rate_pct(self.failure.attempt_success_rate),
                "failure_shares_pct": {
                    s.value: format_rate_pct(f) for s, f in sorted(self.failure.failure_shares.items())
                },
            },
            "attempts": list(self.attempts),
        }

    def to_json(self) -> str:
        # sort_keys + no trailing spaces keeps repeated renders byte-identical
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _row_dict(row: ReportRow) -> dict:
    return {
        "group_key": row.group_key,
        "problems_total": row.problems_total,
        "problems_solved": row.problems_solved,
        "rate": [row.pass_at_k_rate.numerator, row.pass_at_k_rate.denominator],
        "rate_pct": format_rate_pct(row.pass_at_k_rate),
    }


def render_rows_table(rows: Sequence[ReportRow], k: int, delimiter: str = "\t") -> str:
    """Delimiter-separated table of report rows, one group per line."""
    lines = [delimiter.join(["group", "problems", "solved", f"pass@{k}_pct"])]
    for row in rows:
        lines.append(
            delimiter.join(
                [
                    row.group_key,
                    str(row.problems_total),
                    str(row.problems_solved),
                    format_rate_pct(row.pass_at_k_rate),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def render_failure_table(failure: FailureDistribution, delimiter: str = "\t") -> str:
    lines = [delimiter.join(["status", "count", "share_of_failures_pct"])]
    for status in AttemptStatus:
        share = failure.failure_shares.get(status)
        lines.append(
            delimiter.join(
                [
                    status.value,
                    str(failure.counts.get(status, 0)),
                    format_rate_pct(share) if share is not None else "-",
                ]
            )
        )
    lines.append(
        delimiter.join(["attempt_success_rate", str(failure.total_attempts),
                        format_rate_pct(failure.attempt_success_rate)])
    )
    return "\n".join(lines) + "\n"


def render_report_table(report: EvaluationReport, delimiter: str = "\t") -> str:
    parts = [
        f"# run {report.run_id} (pass@{report.k})",
        "## by model+agent",
        render_rows_table(report.pair_rows, report.k, delimiter).rstrip("\n"),
        "## by model",
        render_rows_table(report.model_rows, report.k, delimiter).rstrip("\n"),
        "## by agent",
        render_rows_table(report.agent_rows, report.k, delimiter).rstrip("\n"),
    ]
    if report.category_rows:
        parts += [
            "## by category",
            render_rows_table(report.category_rows, report.k, delimiter).rstrip("\n"),
        ]
    parts += [
        "## attempt outcomes",
        render_failure_table(report.failure, delimiter).rstrip("\n"),
    ]
    return "\n".join(parts) + "\n"


def render_figures(report: EvaluationReport, out_dir: str | Path) -> list[Path]:
    """Write PNG figures for the report next to the delimited output.

    Produces a pass-rate bar chart per grouping that has data and a
    failure-mode breakdown chart. Returns the written paths.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    groupings = [
        ("pair", report.pair_rows),
        ("model", report.model_rows),
        ("agent", report.agent_rows),
        ("category", report.category_rows),
    ]
    for name, rows in groupings:
        if not rows:
            continue
        labels = [r.group_key for r in rows]
        values = [float(r.pass_at_k_rate) * 100 for r in rows]
        fig, ax = plt.subplots(figsize=(max(4.0, 1.0 + 0.9 * len(rows)), 3.2))
        bars = ax.bar(labels, values, color="#0b7d77")
        ax.bar_label(bars, labels=[format_rate_pct(r.pass_at_k_rate) for r in rows], padding=2, fontsize=8)
        ax.set_ylabel(f"pass@{report.k} (%)")
        ax.set_title(f"Solve rate by {name}")
        ax.set_ylim(0, max(values + [1.0]) * 1.25)
        ax.tick_params(axis="x", labelrotation=25)
        fig.tight_layout()
        path = out / f"pass_rate_by_{name}.png"
        fig.savefig(path, dpi=150)
        plt.close(fig)
        written.append(path)

    statuses = [s for s in AttemptStatus]
    counts = [report.failure.counts.get(s, 0) for s in statuses]
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    colors = ["#1f7a37" if s is AttemptStatus.SOLVED else "#b8612f" for s in statuses]
    bars = ax.bar([s.value for s in statuses], counts, color=colors)
    ax.bar_label(bars, padding=2, fontsize=8)
    ax.set_ylabel("attempts")
    ax.set_title("Attempt outcomes")
    fig.tight_layout()
    path = out / "attempt_outcomes.png"
    fig.savefig(path, dpi=150)
    plt.close(fig)
    written.append(path)
    return written


def write_report(report: EvaluationReport, out_dir: str | Path, delimiter: str = "\t") -> dict[str, Path]:
    """Write report.json, report.tsv and figures under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "report.json"
    json_path.write_text(report.to_json(), encoding="utf-8")
    table_path = out / "report.tsv"
    table_path.write_text(render_report_table(report, delimiter), encoding="utf-8")
    figure_paths = render_figures(report, out / "figures")
    return {"json": json_path, "table": table_path, "figures_dir": out / "figures",
            **{p.stem: p for p in figure_paths}}
