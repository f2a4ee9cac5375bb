/**
 * Wire types for the gateway's HTTP and websocket interfaces.
 *
 * These mirror the JSON the server actually sends; the authoritative
 * description is served at GET /api/v1/schema.
 */

/** Non-finite floats travel as tagged strings so every line stays strict JSON. */
export type MetricValue = number | "NaN" | "Infinity" | "-Infinity";

export interface MetricRecord {
  value: MetricValue;
  direction: string; // "min" | "max"
  scope: string; // "smoke" | "full"
  recorded_at: number;
}

export interface JobRef {
  id: string;
  state: string;
}

/** One experiment as it appears in board columns. */
export interface Card {
  id: string;
  name: string;
  hypothesis: string;
  state: string;
  fix_attempts: number;
  priority_hint: string | null;
  worker_id: string | null;
  job: JobRef | null;
  metrics: Record<string, MetricRecord[]>;
  flags: string[];
  cancel_reason: string | null;
  created_at: number;
  updated_at: number;
  analyzed_at: number | null;
}

export interface MetricInfo {
  name: string;
  direction: string;
}

export interface BoardView {
  campaign: Record<string, unknown>;
  metric: MetricInfo & { known: string[]; directions: Record<string, string> };
  columns: Record<string, Card[]>;
  journal_seq: number;
}

export interface LeaderboardRow {
  rank: number;
  id: string;
  name: string;
  value: MetricValue;
  analyzed_at: number | null;
}

export interface LeaderboardView {
  metric: MetricInfo;
  rows: LeaderboardRow[];
  flagged: string[];
}

export interface StatusView {
  id: string;
  phase: string;
  halt_reason: string | null;
  budget_initial: number;
  budget_remaining: number;
  band: string;
  analyzed_count: number;
  stall_count: number;
  best_primary: MetricValue | null;
  best_experiment: string | null;
  strategist_turns: number;
  milestones_emitted: number;
  supervisor_interventions: number;
  journal_seq: number;
}

export interface TreeEntry {
  name: string;
  dir: boolean;
  size: number | null;
}

export interface TreeView {
  path: string;
  entries: TreeEntry[];
}

export interface FileView {
  path: string;
  content: string;
  truncated: boolean;
  bytes: number;
}

export interface ReportsView {
  reports: string[];
}

export interface SessionRow {
  id: string;
  role: string;
  phase: string;
  parent: string | null;
  outcome: string | null;
  tokens_in: number;
  tokens_out: number;
  tool_calls: number | null;
}

export interface SessionsView {
  sessions: SessionRow[];
}

export interface SessionDetail {
  meta: Record<string, unknown>;
  records: Array<{ kind: string; payload: unknown }>;
}

export interface ChatAck {
  status: "queued";
  pending: number;
}

export interface HaltAck {
  status: "halt_requested";
  reason: string;
}

// -- websocket stream ------------------------------------------------------

export interface StreamEvent {
  type: "event";
  seq: number;
  kind: string;
  at: number;
  payload: Record<string, any>;
}

export interface StreamSession {
  type: "session";
  session: string;
  record: Record<string, any>;
}

/** Emitted when the server dropped messages; consumers should refetch snapshots. */
export interface StreamGap {
  type: "gap";
  dropped: number;
}

export type StreamMessage = StreamEvent | StreamSession | StreamGap;
