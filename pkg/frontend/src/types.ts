// Wire shapes for the ctfusion control API.
//
// Everything here mirrors what the server serialises: attempt projections
// from /api/runs/{id}/attempts, run summaries, ledger rows, and the
// journal events carried on the SSE stream.

export type AttemptState = "pending" | "active" | "terminal" | "excluded";

export type AttemptStatus =
  | "solved"
  | "costlimit"
  | "unsolved"
  | "giveup"
  | "suspended";

export type TerminationSignal =
  | "correct_flag_accepted"
  | "budget_exhausted"
  | "agent_declared_giveup"
  | "inactivity_timeout"
  | "run_window_closed";

export interface AgentInfo {
  agent_id: string;
  model_label: string;
  agent_label: string;
}

export interface RunSummary {
  run_id: string;
  k: number;
  cost_cap_usd: string;
  inactivity_timeout_s: number;
  window_s: number | null;
  window_deadline: string | null;
  finalized: boolean;
  agents: AgentInfo[];
  challenges: number[];
  attempt_counts: Partial<Record<AttemptState, number>>;
  mcp_endpoint: string | null;
}

export interface AttemptPublic {
  attempt_id: string;
  agent_id: string;
  challenge_id: number;
  attempt_index: number;
  model_label: string;
  agent_label: string;
  state: AttemptState;
  status: AttemptStatus | null;
  signal: TerminationSignal | null;
  excluded_reason: string | null;
  cost_usd: string; // always rendered with four decimal places
  started_at: string | null;
  ended_at: string | null;
}

export interface LedgerRow {
  run_id: string;
  challenge_id: number;
  solved_by: string;
  solved_at: string;
  flag_sha256: string; // the raw flag never leaves the server
}

// ─── Journal events ──────────────────────────────────────────────────────

export const EVENT_KINDS = [
  "run_created",
  "attempt_scheduled",
  "attempt_started",
  "cost_reported",
  "attempt_terminated",
  "attempt_amended",
  "attempt_excluded",
  "attempt_requeued",
  "run_window_closed",
  "run_finalized",
] as const;

export type EventKind = (typeof EVENT_KINDS)[number];

interface EventBase {
  seq: number;
  timestamp: string;
}

export interface RunCreatedEvent extends EventBase {
  kind: "run_created";
  run_id: string;
  k: number;
  cost_cap_usd: string;
  inactivity_timeout_s: number;
  window_s: number | null;
  challenges: { challenge_id: number; category: string }[];
  agents: AgentInfo[];
}

export interface AttemptScheduledEvent extends EventBase {
  kind: "attempt_scheduled";
  attempt_id: string;
  agent_id: string;
  challenge_id: number;
  attempt_index: number;
  model_label: string;
  agent_label: string;
}

export interface AttemptStartedEvent extends EventBase {
  kind: "attempt_started";
  attempt_id: string;
}

export interface CostReportedEvent extends EventBase {
  kind: "cost_reported";
  attempt_id: string;
  total_usd: string; // cumulative, not yet quantised
}

export interface AttemptTerminatedEvent extends EventBase {
  kind: "attempt_terminated";
  attempt_id: string;
  signal: TerminationSignal;
  status: AttemptStatus;
  cost_usd: string;
  note: string | null;
}

export interface AttemptAmendedEvent extends EventBase {
  kind: "attempt_amended";
  attempt_id: string;
  old_status: AttemptStatus;
  new_status: AttemptStatus;
}

export interface AttemptExcludedEvent extends EventBase {
  kind: "attempt_excluded";
  attempt_id: string;
  reason: string;
}

export interface AttemptRequeuedEvent extends EventBase {
  kind: "attempt_requeued";
  old_attempt_id: string;
  new_attempt_id: string;
}

export interface RunWindowClosedEvent extends EventBase {
  kind: "run_window_closed";
  run_id: string;
}

export interface RunFinalizedEvent extends EventBase {
  kind: "run_finalized";
  run_id: string;
}

export type RunEvent =
  | RunCreatedEvent
  | AttemptScheduledEvent
  | AttemptStartedEvent
  | CostReportedEvent
  | AttemptTerminatedEvent
  | AttemptAmendedEvent
  | AttemptExcludedEvent
  | AttemptRequeuedEvent
  | RunWindowClosedEvent
  | RunFinalizedEvent;
