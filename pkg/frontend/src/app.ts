// Browser entry: wire the live stream into the store and repaint.
//
// The page points at a control API with ?api=http://host:port (defaults
// to its own origin) and optionally carries ?token= for interventions.
// All state lives in RunStore; every repaint rerenders from it, so a
// reconnect or a run switch is just a store swap.

import { ApiError, ControlClient } from "./client.js";
import {
  renderAttemptsTable,
  renderLedger,
  renderMatrix,
  renderRunList,
} from "./render.js";
import { RunStore, SeqGapError } from "./store.js";
import { subscribeRun } from "./stream.js";
import type { RunEvent, TerminationSignal } from "./types.js";

const params = new URLSearchParams(window.location.search);
const apiBase = params.get("api") ?? window.location.origin;
const operatorToken = params.get("token") ?? undefined;

const client = new ControlClient({
  baseUrl: apiBase,
  operatorToken,
});

let store = new RunStore();
let currentRun: string | null = params.get("run");
let closeStream: (() => void) | null = null;

// ─── DOM helpers ─────────────────────────────────────────────────────────

function mount(id: string, html: string): void {
  const node = document.getElementById(id);
  if (node) node.innerHTML = html;
}

function note(message: string, isError = false): void {
  const node = document.getElementById("notice");
  if (!node) return;
  node.textContent = message;
  node.className = isError ? "notice error" : "notice";
}

function repaint(): void {
  mount("matrix", renderMatrix(store));
  mount("attempts", renderAttemptsTable(store.attempts()));
}

// ─── Data flow ───────────────────────────────────────────────────────────

async function refreshRunList(): Promise<void> {
  const runs = await client.listRuns();
  mount("runs", renderRunList(runs, currentRun ?? undefined));
  if (currentRun === null && runs.length > 0) {
    attachRun(runs[0].run_id);
  }
}

async function refreshLedger(): Promise<void> {
  mount("ledger", renderLedger(await client.ledger()));
}

function onEvent(event: RunEvent): void {
  try {
    if (!store.apply(event)) return;
  } catch (err) {
    if (err instanceof SeqGapError) {
      // the stream skipped ahead of us; rebuild from scratch
      if (currentRun) attachRun(currentRun);
      return;
    }
    throw err;
  }
  repaint();
  if (event.kind === "attempt_terminated" || event.kind === "run_finalized") {
    void refreshLedger();
    void refreshRunList();
  }
}

function attachRun(runId: string): void {
  closeStream?.();
  currentRun = runId;
  store = new RunStore();
  repaint();
  note(`following ${runId}`);
  closeStream = subscribeRun(apiBase, runId, 0, onEvent, () => {
    note(`stream to ${runId} dropped; retrying`, true);
  });
}

// ─── Interventions ───────────────────────────────────────────────────────

function inputValue(id: string): string {
  const node = document.getElementById(id) as HTMLInputElement | null;
  return node ? node.value.trim() : "";
}

async function intervene(action: () => Promise<unknown>): Promise<void> {
  try {
    await action();
    note("accepted");
  } catch (err) {
    if (err instanceof ApiError) note(`refused (${err.status}): ${err.detail}`, true);
    else note(String(err), true);
  }
}

function wireControls(): void {
  document.getElementById("terminate")?.addEventListener("click", () => {
    const attempt = inputValue("attempt-id");
    const signal = inputValue("signal") as TerminationSignal;
    if (!attempt) return note("attempt id required", true);
    void intervene(() => client.terminateAttempt(attempt, signal));
  });
  document.getElementById("post-cost")?.addEventListener("click", () => {
    const attempt = inputValue("attempt-id");
    const total = inputValue("cost-total");
    if (!attempt || !total) return note("attempt id and total required", true);
    void intervene(() => client.reportCost(attempt, total));
  });
  document.getElementById("runs")?.addEventListener("click", (evt) => {
    const item = (evt.target as HTMLElement).closest("[data-run]");
    const runId = item?.getAttribute("data-run");
    if (runId) attachRun(runId);
  });
}

// ─── Boot ────────────────────────────────────────────────────────────────

wireControls();
void refreshRunList().catch((err) => note(`control API unreachable: ${err}`, true));
void refreshLedger().catch(() => undefined);
setInterval(() => void refreshRunList().catch(() => undefined), 15000);
