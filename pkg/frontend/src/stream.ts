/** Websocket stream consumption: URL building, seq dedupe, gap handling. */

import type { StreamEvent, StreamGap, StreamMessage, StreamSession } from "./types";

export interface StreamFilters {
  kinds?: string[];
  sessions?: string[];
  columns?: string[];
}

/**
 * Build the stream URL for an http(s) origin.  Filter params repeat; a
 * positive `since` asks the server to replay journal events after that seq.
 */
export function streamUrl(httpBase: string, filters: StreamFilters = {}, since = 0): string {
  const qs = new URLSearchParams();
  for (const k of filters.kinds ?? []) qs.append("kind", k);
  for (const s of filters.sessions ?? []) qs.append("session", s);
  for (const c of filters.columns ?? []) qs.append("column", c);
  if (since > 0) qs.set("since", String(since));
  const base = httpBase.replace(/^http/, "ws");
  const suffix = qs.toString();
  return `${base}/api/v1/stream${suffix ? `?${suffix}` : ""}`;
}

/**
 * Orders a stream into exactly-once event delivery.
 *
 * The server replays events after `since` and then switches to live fan-out,
 * so an event can arrive twice across a reconnect; anything with seq <= the
 * cursor is dropped.  A gap marker means the server's buffer overflowed and
 * events were lost for good: the consumer must refetch snapshots, then call
 * snapshotRestored() with the snapshot's journal_seq.
 */
export class StreamCursor {
  lastSeq = 0;
  needsSnapshot = false;

  constructor(
    private onEvent: (msg: StreamEvent) => void,
    private onSession?: (msg: StreamSession) => void,
    private onGap?: (msg: StreamGap) => void,
  ) {}

  /** Feed one message (parsed or raw JSON); returns false for dropped duplicates. */
  feed(raw: string | StreamMessage): boolean {
    const msg: StreamMessage = typeof raw === "string" ? JSON.parse(raw) : raw;
    if (msg.type === "gap") {
      this.needsSnapshot = true;
      this.onGap?.(msg);
      return true;
    }
    if (msg.type === "session") {
      this.onSession?.(msg);
      return true;
    }
    if (msg.seq <= this.lastSeq) return false;
    this.lastSeq = msg.seq;
    this.onEvent(msg);
    return true;
  }

  /** Seq to reconnect with (`since=` param) after a dropped connection. */
  reconnectSince(): number {
    return this.lastSeq;
  }

  snapshotRestored(journalSeq: number): void {
    this.needsSnapshot = false;
    this.lastSeq = Math.max(this.lastSeq, journalSeq);
  }
}
