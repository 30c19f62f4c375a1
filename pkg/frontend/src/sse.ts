/**
 * Server-sent-events client over fetch.
 *
 * The native EventSource cannot start from an arbitrary event id and is
 * absent from test DOMs, so this speaks text/event-stream directly: it
 * tracks the last delivered id and reconnects with the standard
 * Last-Event-ID header plus the equivalent query parameter until the
 * server signals "end" or the caller closes the stream.
 */

import type { FetchLike } from "./api.js";

export interface SseEvent {
  id: number | null;
  event: string;
  data: string;
}

export interface EventStreamOptions {
  onEvent: (ev: SseEvent) => void;
  /** Called once when the server declares the stream complete. */
  onEnd?: () => void;
  /** Called on transport trouble; willRetry tells whether a reconnect follows. */
  onError?: (error: unknown, willRetry: boolean) => void;
  lastEventId?: number;
  retryMs?: number;
  /** Consecutive failed connections before giving up. */
  maxRetries?: number;
}

/** Split a text/event-stream body into events. Exposed for tests. */
export function parseSseBlock(block: string): SseEvent | null {
  let id: number | null = null;
  let event = "message";
  const data: string[] = [];
  let sawField = false;
  for (const rawLine of block.split("\n")) {
    const line = rawLine.endsWith("\r") ? rawLine.slice(0, -1) : rawLine;
    if (!line || line.startsWith(":")) continue; // blank or comment (keep-alive)
    sawField = true;
    const colon = line.indexOf(":");
    const field = colon === -1 ? line : line.slice(0, colon);
    let value = colon === -1 ? "" : line.slice(colon + 1);
    if (value.startsWith(" ")) value = value.slice(1);
    if (field === "id") {
      const parsed = Number.parseInt(value, 10);
      if (!Number.isNaN(parsed)) id = parsed;
    } else if (field === "event") {
      event = value;
    } else if (field === "data") {
      data.push(value);
    }
  }
  if (!sawField) return null;
  return { id, event, data: data.join("\n") };
}

export class EventStream {
  private closed = false;
  private controller: AbortController | null = null;
  lastEventId: number | null = null;

  constructor(
    private readonly url: string,
    private readonly fetchImpl: FetchLike,
    private readonly options: EventStreamOptions,
  ) {
    this.lastEventId = options.lastEventId ?? null;
  }

  close(): void {
    this.closed = true;
    this.controller?.abort();
  }

  /** Runs until the server ends the stream, retries are exhausted, or close(). */
  async run(): Promise<void> {
    const retryMs = this.options.retryMs ?? 1000;
    const maxRetries = this.options.maxRetries ?? 20;
    let failures = 0;
    while (!this.closed) {
      try {
        const ended = await this.consumeOnce();
        if (ended) {
          this.options.onEnd?.();
          return;
        }
        failures = 0; // a working connection that closed early; resume
      } catch (error) {
        if (this.closed) return;
        failures += 1;
        this.options.onError?.(error, failures <= maxRetries);
        if (failures > maxRetries) return;
      }
      if (this.closed) return;
      await sleep(retryMs);
    }
  }

  /** One connection. Returns true when the server sent the "end" event. */
  private async consumeOnce(): Promise<boolean> {
    this.controller = new AbortController();
    const headers: Record<string, string> = { accept: "text/event-stream" };
    let url = this.url;
    if (this.lastEventId !== null) {
      headers["last-event-id"] = String(this.lastEventId);
      url += (url.includes("?") ? "&" : "?") + `last_event_id=${this.lastEventId}`;
    }
    const response = await this.fetchImpl(url, {
      headers,
      signal: this.controller.signal,
    });
    if (!response.ok) throw new Error(`event stream HTTP ${response.status}`);
    if (!response.body) throw new Error("event stream has no body");

    const reader = response.body.getReader();
    const decoder = new TextDecoder();
    let buffer = "";
    try {
      for (;;) {
        const { done, value } = await reader.read();
        if (done) break;
        buffer += decoder.decode(value, { stream: true });
        buffer = buffer.replace(/\r\n/g, "\n");
        let cut;
        while ((cut = buffer.indexOf("\n\n")) !== -1) {
          const block = buffer.slice(0, cut);
          buffer = buffer.slice(cut + 2);
          if (this.deliver(block)) return true;
        }
      }
      // Trailing block without a final blank line.
      if (buffer.trim() && this.deliver(buffer)) return true;
    } finally {
      reader.releaseLock();
    }
    return false;
  }

  private deliver(block: string): boolean {
    const ev = parseSseBlock(block);
    if (!ev) return false;
    if (ev.id !== null) this.lastEventId = ev.id;
    if (ev.event === "end") return true;
    this.options.onEvent(ev);
    return false;
  }
}

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}
