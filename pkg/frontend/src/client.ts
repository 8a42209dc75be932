// Typed fetch wrappers for the control API.
//
// One method call is one request: interventions never retry on their
// own, so an operator click maps to exactly one POST. The operator token
// rides X-Operator-Token on mutations only; reads are open.

import type {
  AttemptPublic,
  LedgerRow,
  RunSummary,
  TerminationSignal,
} from "./types.js";

export type FetchLike = (
  url: string,
  init?: RequestInit,
) => Promise<Response>;

export interface ClientOptions {
  baseUrl: string; // e.g. http://127.0.0.1:8300
  operatorToken?: string;
  fetchFn?: FetchLike; // injectable for tests
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(`${status}: ${detail}`);
    this.name = "ApiError";
  }
}

export class ControlClient {
  private readonly base: string;
  private readonly token?: string;
  private readonly fetchFn: FetchLike;

  constructor(options: ClientOptions) {
    this.base = options.baseUrl.replace(/\/+$/, "");
    this.token = options.operatorToken;
    this.fetchFn = options.fetchFn ?? ((url, init) => fetch(url, init));
  }

  // ─── Reads ─────────────────────────────────────────────────────────────

  listRuns(): Promise<RunSummary[]> {
    return this.request("GET", "/api/runs");
  }

  getRun(runId: string): Promise<RunSummary> {
    return this.request("GET", `/api/runs/${encodeURIComponent(runId)}`);
  }

  listAttempts(runId: string): Promise<AttemptPublic[]> {
    return this.request(
      "GET",
      `/api/runs/${encodeURIComponent(runId)}/attempts`,
    );
  }

  ledger(): Promise<LedgerRow[]> {
    return this.request("GET", "/api/ledger");
  }

  // ─── Interventions ─────────────────────────────────────────────────────

  createRun(plan: Record<string, unknown>): Promise<RunSummary> {
    return this.request("POST", "/api/runs", plan);
  }

  terminateAttempt(
    attemptId: string,
    signal: TerminationSignal,
    note?: string,
  ): Promise<AttemptPublic> {
    const body = note === undefined ? { signal } : { signal, note };
    return this.request(
      "POST",
      `/api/attempts/${encodeURIComponent(attemptId)}/terminate`,
      body,
    );
  }

  reportCost(attemptId: string, totalUsd: string): Promise<AttemptPublic> {
    return this.request(
      "POST",
      `/api/attempts/${encodeURIComponent(attemptId)}/cost`,
      { total_usd: totalUsd },
    );
  }

  // ─── Transport ─────────────────────────────────────────────────────────

  private async request<T>(
    method: "GET" | "POST",
    path: string,
    body?: unknown,
  ): Promise<T> {
    const headers: Record<string, string> = {};
    if (body !== undefined) headers["Content-Type"] = "application/json";
    if (method !== "GET" && this.token !== undefined) {
      headers["X-Operator-Token"] = this.token;
    }
    const resp = await this.fetchFn(this.base + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await resp.text();
    let payload: unknown = null;
    if (text) {
      try {
        payload = JSON.parse(text);
      } catch {
        payload = null;
      }
    }
    if (!resp.ok) {
      const detail =
        payload !== null &&
        typeof payload === "object" &&
        typeof (payload as { detail?: unknown }).detail === "string"
          ? (payload as { detail: string }).detail
          : text || resp.statusText;
      throw new ApiError(resp.status, detail);
    }
    return payload as T;
  }
}
