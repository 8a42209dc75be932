// SSE plumbing for /api/runs/{id}/events.
//
// The browser path rides the native EventSource; SseParser exists so the
// same wire format can be consumed from node (tests, scripts) and so the
// captured fixture streams are checked byte-for-byte.

import { EVENT_KINDS, type RunEvent } from "./types.js";

export interface SseFrame {
  id: number | null;
  event: string;
  data: string;
}

export function eventsUrl(
  baseUrl: string,
  runId: string,
  after = 0,
  limit?: number,
): string {
  const base = baseUrl.replace(/\/+$/, "");
  const params = new URLSearchParams({ after: String(after) });
  if (limit !== undefined) params.set("limit", String(limit));
  return `${base}/api/runs/${encodeURIComponent(runId)}/events?${params}`;
}

// ─── Incremental parser ──────────────────────────────────────────────────

export class SseParser {
  private buf = "";

  /** Feed a chunk of stream text; returns every frame completed by it.
   *  Comment-only blocks (the server's keep-alives) are swallowed. */
  feed(chunk: string): SseFrame[] {
    this.buf += chunk;
    const frames: SseFrame[] = [];
    let cut: number;
    while ((cut = this.buf.indexOf("\n\n")) !== -1) {
      const block = this.buf.slice(0, cut);
      this.buf = this.buf.slice(cut + 2);
      const frame = parseBlock(block);
      if (frame) frames.push(frame);
    }
    return frames;
  }
}

function parseBlock(block: string): SseFrame | null {
  let id: number | null = null;
  let event = "message";
  const data: string[] = [];
  for (const line of block.split("\n")) {
    if (!line || line.startsWith(":")) continue;
    const colon = line.indexOf(":");
    if (colon === -1) continue;
    const field = line.slice(0, colon);
    let value = line.slice(colon + 1);
    if (value.startsWith(" ")) value = value.slice(1);
    if (field === "id") id = Number(value);
    else if (field === "event") event = value;
    else if (field === "data") data.push(value);
  }
  if (data.length === 0) return null;
  return { id, event, data: data.join("\n") };
}

export function frameToEvent(frame: SseFrame): RunEvent {
  return JSON.parse(frame.data) as RunEvent;
}

// ─── Browser subscription ────────────────────────────────────────────────

/** Open a live EventSource on the run journal. Events arrive named by
 *  kind, so one listener is registered per kind. Returns a closer. */
export function subscribeRun(
  baseUrl: string,
  runId: string,
  after: number,
  onEvent: (event: RunEvent) => void,
  onError?: (err: Event) => void,
): () => void {
  const source = new EventSource(eventsUrl(baseUrl, runId, after));
  for (const kind of EVENT_KINDS) {
    source.addEventListener(kind, (msg) => {
      onEvent(JSON.parse((msg as MessageEvent<string>).data) as RunEvent);
    });
  }
  if (onError) source.onerror = onError;
  return () => source.close();
}
