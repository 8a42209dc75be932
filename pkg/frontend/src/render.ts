// Static HTML renderers.
//
// Pure string-in string-out, so they run identically under node in tests
// and in the browser. Styling hooks are CSS classes only; the page owns
// the stylesheet.

import type { RunStore } from "./store.js";
import type { AttemptPublic, LedgerRow, RunSummary } from "./types.js";

const ESCAPES: Record<string, string> = {
  "&": "&amp;",
  "<": "&lt;",
  ">": "&gt;",
  '"': "&quot;",
  "'": "&#39;",
};

export function escapeHtml(value: unknown): string {
  return String(value).replace(/[&<>"']/g, (ch) => ESCAPES[ch] ?? ch);
}

function pill(label: string): string {
  const safe = escapeHtml(label);
  return `<span class="pill pill-${safe}">${safe}</span>`;
}

function statusLabel(row: AttemptPublic): string {
  if (row.state === "terminal") return row.status ?? "terminal";
  return row.state;
}

function clock(iso: string | null): string {
  if (!iso) return "";
  const t = iso.indexOf("T");
  return t === -1 ? iso : iso.slice(t + 1, t + 9);
}

// ─── Run inventory ───────────────────────────────────────────────────────

export function renderRunList(runs: RunSummary[], selected?: string): string {
  if (runs.length === 0) {
    return `<p class="empty">no runs yet</p>`;
  }
  const items = runs
    .map((run) => {
      const counts = Object.entries(run.attempt_counts)
        .map(([state, n]) => `${n} ${escapeHtml(state)}`)
        .join(", ");
      const cls = run.run_id === selected ? ` class="selected"` : "";
      return (
        `<li${cls} data-run="${escapeHtml(run.run_id)}">` +
        `<strong>${escapeHtml(run.run_id)}</strong>` +
        ` <span class="meta">pass@${run.k}, cap $${escapeHtml(run.cost_cap_usd)}</span>` +
        ` <span class="meta">${counts || "empty"}</span>` +
        (run.finalized ? ` ${pill("finalized")}` : ` ${pill("live")}`) +
        `</li>`
      );
    })
    .join("\n");
  return `<ul class="run-list">\n${items}\n</ul>`;
}

// ─── Attempts table ──────────────────────────────────────────────────────

const ATTEMPT_COLUMNS = [
  "attempt",
  "agent",
  "challenge",
  "try",
  "model",
  "state",
  "signal",
  "cost (USD)",
  "started",
  "ended",
] as const;

export function renderAttemptsTable(rows: AttemptPublic[]): string {
  const head = ATTEMPT_COLUMNS.map((c) => `<th>${escapeHtml(c)}</th>`).join("");
  const body = rows
    .map((row) => {
      const cells = [
        `<td class="mono">${escapeHtml(row.attempt_id)}</td>`,
        `<td>${escapeHtml(row.agent_id)}</td>`,
        `<td>${escapeHtml(row.challenge_id)}</td>`,
        `<td>${escapeHtml(row.attempt_index)}</td>`,
        `<td>${escapeHtml(row.model_label)}</td>`,
        `<td>${pill(statusLabel(row))}${
          row.excluded_reason
            ? ` <span class="meta">${escapeHtml(row.excluded_reason)}</span>`
            : ""
        }</td>`,
        `<td>${row.signal ? escapeHtml(row.signal) : ""}</td>`,
        `<td class="mono">${escapeHtml(row.cost_usd)}</td>`,
        `<td class="mono">${escapeHtml(clock(row.started_at))}</td>`,
        `<td class="mono">${escapeHtml(clock(row.ended_at))}</td>`,
      ];
      return `<tr data-attempt="${escapeHtml(row.attempt_id)}">${cells.join("")}</tr>`;
    })
    .join("\n");
  return (
    `<table class="attempts">` +
    `<thead><tr>${head}</tr></thead>` +
    `<tbody>\n${body}\n</tbody></table>`
  );
}

// ─── Agent × challenge matrix ────────────────────────────────────────────

export function renderMatrix(store: RunStore): string {
  const agents = store.agents();
  const challenges = store.challenges();
  if (agents.length === 0 || challenges.length === 0) {
    return `<p class="empty">waiting for run_created</p>`;
  }
  const head = challenges
    .map(
      (cid) =>
        `<th>#${cid} <span class="meta">${escapeHtml(store.categoryOf(cid))}</span></th>`,
    )
    .join("");
  const body = agents
    .map((agent) => {
      const cells = challenges
        .map((cid) => {
          const outcome = store.cellOutcome(agent.agent_id, cid);
          const tries = store.cell(agent.agent_id, cid).length;
          return `<td>${pill(outcome)} <span class="meta">${tries}x</span></td>`;
        })
        .join("");
      return (
        `<tr><th>${escapeHtml(agent.agent_id)} ` +
        `<span class="meta">${escapeHtml(agent.model_label)}</span></th>${cells}</tr>`
      );
    })
    .join("\n");
  return (
    `<table class="matrix">` +
    `<thead><tr><th></th>${head}</tr></thead>` +
    `<tbody>\n${body}\n</tbody></table>`
  );
}

// ─── Solve ledger ────────────────────────────────────────────────────────

export function renderLedger(rows: LedgerRow[]): string {
  if (rows.length === 0) {
    return `<p class="empty">no solves recorded</p>`;
  }
  const body = rows
    .map(
      (row) =>
        `<tr>` +
        `<td>${escapeHtml(row.run_id)}</td>` +
        `<td>${escapeHtml(row.challenge_id)}</td>` +
        `<td>${escapeHtml(row.solved_by)}</td>` +
        `<td class="mono">${escapeHtml(clock(row.solved_at))}</td>` +
        `<td class="mono" title="${escapeHtml(row.flag_sha256)}">` +
        `${escapeHtml(row.flag_sha256.slice(0, 12))}…</td>` +
        `</tr>`,
    )
    .join("\n");
  return (
    `<table class="ledger">` +
    `<thead><tr><th>run</th><th>challenge</th><th>solved by</th>` +
    `<th>at</th><th>flag sha256</th></tr></thead>` +
    `<tbody>\n${body}\n</tbody></table>`
  );
}
