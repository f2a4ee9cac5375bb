/**
 * Client-side board model.
 *
 * The kanban can be seeded from a GET /api/v1/board snapshot, advanced one
 * journal event at a time from the websocket stream, or both: snapshot first,
 * then live events with seq greater than the snapshot's journal_seq.  Applying
 * a full event log from an empty board reproduces the server's snapshot
 * exactly, which is what the replay tests pin.
 */

import type { BoardView, Card, StreamEvent } from "./types";

export const DISPLAY_COLUMNS = [
  "to_implement",
  "implemented",
  "checked",
  "queued",
  "running",
  "finished",
  "failed",
  "analyzed",
  "done",
  "cancelled",
] as const;

export type ColumnName = (typeof DISPLAY_COLUMNS)[number];

// total projection of the 12 internal states onto the 10 display columns
export const COLUMN_OF_STATE: Record<string, ColumnName> = {
  to_implement: "to_implement",
  implementing: "to_implement",
  implemented: "implemented",
  checked: "checked",
  queued: "queued",
  running: "running",
  finished: "finished",
  failed: "failed",
  failed_terminal: "failed",
  analyzed: "analyzed",
  done: "done",
  cancelled: "cancelled",
};

export interface BoardState {
  cards: Map<string, Card>;
  budgetRemaining: number | null;
  phase: string | null;
  haltReason: string | null;
  strategistTurns: number;
  milestonesEmitted: number;
  supervisorInterventions: number;
  chatPending: string[];
  lastSeq: number;
  lastAt: number;
}

export function emptyBoard(): BoardState {
  return {
    cards: new Map(),
    budgetRemaining: null,
    phase: null,
    haltReason: null,
    strategistTurns: 0,
    milestonesEmitted: 0,
    supervisorInterventions: 0,
    chatPending: [],
    lastSeq: 0,
    lastAt: 0,
  };
}

/** Rebuild local state from a board snapshot (initial load, or gap recovery). */
export function seedFromView(view: BoardView): BoardState {
  const state = emptyBoard();
  for (const cards of Object.values(view.columns)) {
    for (const card of cards) state.cards.set(card.id, structuredClone(card));
  }
  const camp = view.campaign as Record<string, any>;
  state.budgetRemaining = camp.budget_remaining ?? null;
  state.phase = camp.phase ?? null;
  state.haltReason = camp.halt_reason ?? null;
  state.strategistTurns = camp.strategist_turns ?? 0;
  state.milestonesEmitted = camp.milestones_emitted ?? 0;
  state.supervisorInterventions = camp.supervisor_interventions ?? 0;
  state.chatPending = Array.isArray(camp.chat_pending) ? [...camp.chat_pending] : [];
  state.lastSeq = view.journal_seq;
  return state;
}

/**
 * Apply one journal event in place.  Mirrors the server's replay rules; kinds
 * that carry no rendered state (playbook, cancel decisions) only advance seq.
 */
export function applyEvent(state: BoardState, msg: StreamEvent): void {
  const p = msg.payload;
  switch (msg.kind) {
    case "proposal":
      if (p.accepted) {
        state.cards.set(p.exp_id, {
          id: p.exp_id,
          name: p.name,
          hypothesis: p.hypothesis,
          state: "to_implement",
          fix_attempts: 0,
          priority_hint: p.priority_hint ?? null,
          worker_id: null,
          job: null,
          metrics: {},
          flags: [],
          cancel_reason: null,
          created_at: msg.at,
          updated_at: msg.at,
          analyzed_at: null,
        });
        state.budgetRemaining = p.budget_after;
      }
      break;
    case "transition": {
      const card = state.cards.get(p.exp_id);
      if (!card) break;
      card.state = p.to;
      card.fix_attempts = p.fix_attempts;
      card.updated_at = msg.at;
      if (p.worker_id != null) card.worker_id = p.worker_id;
      if (p.cancel_reason != null) card.cancel_reason = p.cancel_reason;
      if (p.to === "analyzed") card.analyzed_at = msg.at;
      break;
    }
    case "metric": {
      const card = state.cards.get(p.exp_id);
      if (!card) break;
      (card.metrics[p.name] ??= []).push({
        value: p.value,
        direction: p.direction,
        scope: p.scope,
        recorded_at: msg.at,
      });
      if (!p.finite && !card.flags.includes("non_finite_metric")) {
        card.flags.push("non_finite_metric");
      }
      break;
    }
    case "job": {
      const card = state.cards.get(p.exp_id);
      if (card) card.job = { id: p.external_id, state: p.state };
      break;
    }
    case "chat":
      state.chatPending.push(p.message);
      break;
    case "strategist_turn":
      state.strategistTurns = p.turn;
      // chat_drained counts messages consumed from the front of the queue
      if (p.chat_drained) state.chatPending.splice(0, p.chat_drained);
      break;
    case "milestone":
      state.milestonesEmitted = p.n;
      break;
    case "supervisor":
      if (p.event === "intervention") state.supervisorInterventions += 1;
      break;
    case "phase":
      state.phase = p.phase;
      if (p.phase === "halted") state.haltReason = p.reason ?? null;
      break;
    default:
      break;
  }
  state.lastSeq = msg.seq;
  state.lastAt = msg.at;
}

/** Project cards onto the display columns, each column ordered by id. */
export function columnsOf(state: BoardState): Record<ColumnName, Card[]> {
  const cols = {} as Record<ColumnName, Card[]>;
  for (const name of DISPLAY_COLUMNS) cols[name] = [];
  const sorted = [...state.cards.values()].sort((a, b) =>
    a.id < b.id ? -1 : a.id > b.id ? 1 : 0,
  );
  for (const card of sorted) {
    const col = COLUMN_OF_STATE[card.state];
    if (col !== undefined) cols[col].push(card);
  }
  return cols;
}
