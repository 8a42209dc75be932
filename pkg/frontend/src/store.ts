// Event-sourced mirror of one run.
//
// apply() folds journal events, exactly as delivered on the SSE stream,
// into the same projection the REST endpoints serve. A panel that replays
// the stream from seq 1 lands on rows deep-equal to what
// /api/runs/{id}/attempts would return at that moment, so the view never
// drifts from the server and never needs to poll.

import type {
  AgentInfo,
  AttemptPublic,
  AttemptState,
  RunEvent,
} from "./types.js";

export class SeqGapError extends Error {
  constructor(
    readonly expected: number,
    readonly got: number,
  ) {
    super(`journal gap: expected seq ${expected}, got ${got}`);
    this.name = "SeqGapError";
  }
}

export interface RequeueLink {
  old_attempt_id: string;
  new_attempt_id: string;
}

interface RunConfig {
  run_id: string;
  k: number;
  cost_cap_usd: string;
  inactivity_timeout_s: number;
  window_s: number | null;
  agents: AgentInfo[];
  challenges: number[];
  categories: Map<number, string>;
}

// ─── Money ───────────────────────────────────────────────────────────────

// Render a dollar total with exactly four decimal places, rounding half
// to even like the server does. Totals arrive as decimal strings and stay
// strings throughout; floats never touch them.
export function usd4(raw: string): string {
  const neg = raw.startsWith("-");
  const bare = neg ? raw.slice(1) : raw;
  const dot = bare.indexOf(".");
  const int = dot === -1 ? bare : bare.slice(0, dot);
  const frac = dot === -1 ? "" : bare.slice(dot + 1);
  const sign = neg ? "-" : "";
  if (frac.length <= 4) {
    return `${sign}${int || "0"}.${frac.padEnd(4, "0")}`;
  }
  let scaled = BigInt((int || "0") + frac.slice(0, 4));
  const rest = frac.slice(4);
  const head = rest.charAt(0);
  if (head > "5") scaled += 1n;
  else if (head === "5") {
    const tie = /^50*$/.test(rest);
    if (!tie || scaled % 2n === 1n) scaled += 1n;
  }
  const digits = scaled.toString().padStart(5, "0");
  return `${sign}${digits.slice(0, -4)}.${digits.slice(-4)}`;
}

// ─── Store ───────────────────────────────────────────────────────────────

export class RunStore {
  private rows = new Map<string, AttemptPublic>();
  private config: RunConfig | null = null;
  lastSeq = 0;
  windowClosed = false;
  finalized = false;
  requeues: RequeueLink[] = [];

  /** Fold one event in. Returns false for frames already applied
   *  (redelivery after a reconnect); throws SeqGapError when the stream
   *  skipped ahead and the store must be rebuilt from seq 0. */
  apply(event: RunEvent): boolean {
    if (event.seq <= this.lastSeq) return false;
    if (event.seq !== this.lastSeq + 1) {
      throw new SeqGapError(this.lastSeq + 1, event.seq);
    }
    this.lastSeq = event.seq;
    switch (event.kind) {
      case "run_created":
        this.config = {
          run_id: event.run_id,
          k: event.k,
          cost_cap_usd: event.cost_cap_usd,
          inactivity_timeout_s: event.inactivity_timeout_s,
          window_s: event.window_s,
          agents: event.agents,
          challenges: event.challenges.map((c) => c.challenge_id),
          categories: new Map(
            event.challenges.map((c) => [c.challenge_id, c.category]),
          ),
        };
        break;
      case "attempt_scheduled":
        this.rows.set(event.attempt_id, {
          attempt_id: event.attempt_id,
          agent_id: event.agent_id,
          challenge_id: event.challenge_id,
          attempt_index: event.attempt_index,
          model_label: event.model_label,
          agent_label: event.agent_label,
          state: "pending",
          status: null,
          signal: null,
          excluded_reason: null,
          cost_usd: "0.0000",
          started_at: null,
          ended_at: null,
        });
        break;
      case "attempt_started": {
        const row = this.row(event.attempt_id);
        row.state = "active";
        row.started_at = event.timestamp;
        break;
      }
      case "cost_reported":
        this.row(event.attempt_id).cost_usd = usd4(event.total_usd);
        break;
      case "attempt_terminated": {
        const row = this.row(event.attempt_id);
        row.state = "terminal";
        row.status = event.status;
        row.signal = event.signal;
        row.cost_usd = event.cost_usd;
        row.ended_at = event.timestamp;
        break;
      }
      case "attempt_amended":
        this.row(event.attempt_id).status = event.new_status;
        break;
      case "attempt_excluded": {
        // a pending or active sibling cancelled after a solve keeps its
        // null status; a requeued record keeps its terminal one
        const row = this.row(event.attempt_id);
        row.state = "excluded";
        row.excluded_reason = event.reason;
        break;
      }
      case "attempt_requeued":
        this.requeues.push({
          old_attempt_id: event.old_attempt_id,
          new_attempt_id: event.new_attempt_id,
        });
        break;
      case "run_window_closed":
        this.windowClosed = true;
        break;
      case "run_finalized":
        this.finalized = true;
        break;
    }
    return true;
  }

  applyAll(events: Iterable<RunEvent>): void {
    for (const event of events) this.apply(event);
  }

  private row(attemptId: string): AttemptPublic {
    const row = this.rows.get(attemptId);
    if (!row) throw new Error(`unknown attempt ${attemptId}`);
    return row;
  }

  // ─── Selectors ─────────────────────────────────────────────────────────

  /** Rows in scheduling order, shaped exactly like the attempts endpoint. */
  attempts(): AttemptPublic[] {
    return [...this.rows.values()].map((row) => ({ ...row }));
  }

  attempt(attemptId: string): AttemptPublic | null {
    const row = this.rows.get(attemptId);
    return row ? { ...row } : null;
  }

  attemptCounts(): Partial<Record<AttemptState, number>> {
    const counts: Partial<Record<AttemptState, number>> = {};
    for (const row of this.rows.values()) {
      counts[row.state] = (counts[row.state] ?? 0) + 1;
    }
    return counts;
  }

  runId(): string | null {
    return this.config?.run_id ?? null;
  }

  agents(): AgentInfo[] {
    return this.config ? [...this.config.agents] : [];
  }

  challenges(): number[] {
    return this.config ? [...this.config.challenges] : [];
  }

  categoryOf(challengeId: number): string {
    return this.config?.categories.get(challengeId) ?? "misc";
  }

  /** All of one agent's attempts at one challenge, in scheduling order. */
  cell(agentId: string, challengeId: number): AttemptPublic[] {
    return this.attempts().filter(
      (row) => row.agent_id === agentId && row.challenge_id === challengeId,
    );
  }

  /** Single word summarising a matrix cell: a solve wins outright, then
   *  anything still running, then anything still queued, then the status
   *  of the last attempt that actually finished. */
  cellOutcome(agentId: string, challengeId: number): string {
    const rows = this.cell(agentId, challengeId);
    if (rows.some((r) => r.status === "solved")) return "solved";
    if (rows.some((r) => r.state === "active")) return "active";
    if (rows.some((r) => r.state === "pending")) return "pending";
    const finished = rows.filter((r) => r.state === "terminal" && r.status);
    const last = finished[finished.length - 1];
    if (last && last.status) return last.status;
    return rows.length ? "excluded" : "none";
  }
}
