import { describe, expect, it } from "vitest";

import {
  COLUMN_OF_STATE,
  DISPLAY_COLUMNS,
  columnsOf,
  emptyBoard,
  seedFromView,
} from "../src/board";
import { renderBoard, renderStatus } from "../src/render";
import type { BoardView, StatusView } from "../src/types";
import finalBoardJson from "./fixtures/final_board.json";
import midBoardJson from "./fixtures/mid_board.json";
import statusJson from "./fixtures/status_final.json";

// snapshots of GET /api/v1/board: one finished 50-experiment campaign and a
// mid-campaign cut of the same run
const finalView = finalBoardJson as unknown as BoardView;
const midView = midBoardJson as unknown as BoardView;

const INTERNAL_STATES = [
  "to_implement",
  "implementing",
  "implemented",
  "checked",
  "queued",
  "running",
  "finished",
  "failed",
  "analyzed",
  "done",
  "cancelled",
  "failed_terminal",
];

describe("display columns", () => {
  it("defines the ten kanban columns in lifecycle order", () => {
    expect([...DISPLAY_COLUMNS]).toEqual([
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
    ]);
  });

  it("projects every internal state onto exactly one column", () => {
    expect(Object.keys(COLUMN_OF_STATE).sort()).toEqual([...INTERNAL_STATES].sort());
    for (const state of INTERNAL_STATES) {
      expect(DISPLAY_COLUMNS).toContain(COLUMN_OF_STATE[state]);
    }
  });

  it("folds implementing and failed_terminal into their display columns", () => {
    expect(COLUMN_OF_STATE["implementing"]).toBe("to_implement");
    expect(COLUMN_OF_STATE["failed_terminal"]).toBe("failed");
  });
});

describe("kanban from an empty board", () => {
  it("yields all ten columns with no cards", () => {
    const cols = columnsOf(emptyBoard());
    expect(Object.keys(cols)).toEqual([...DISPLAY_COLUMNS]);
    for (const name of DISPLAY_COLUMNS) {
      expect(cols[name]).toEqual([]);
    }
  });

  it("renders ten empty column sections", () => {
    const html = renderBoard(emptyBoard());
    for (const name of DISPLAY_COLUMNS) {
      expect(html).toContain(`data-column="${name}"`);
    }
    expect(html).not.toContain("card-name");
  });
});

describe("kanban from a snapshot", () => {
  it("reproduces the finished 50-experiment board column for column", () => {
    const cols = columnsOf(seedFromView(finalView));
    expect(cols).toEqual(finalView.columns);
    expect(cols.done).toHaveLength(50);
    expect(cols.done.map((c) => c.id)).toEqual(
      Array.from({ length: 50 }, (_, i) => `x-${String(i + 1).padStart(4, "0")}`),
    );
  });

  it("places mid-campaign cards in their exact columns", () => {
    const cols = columnsOf(seedFromView(midView));
    expect(cols).toEqual(midView.columns);
    expect(cols.to_implement.map((c) => c.id)).toEqual([
      "x-0031",
      "x-0032",
      "x-0033",
      "x-0034",
      "x-0035",
    ]);
    expect(cols.done).toHaveLength(25);
    expect(cols.analyzed).toHaveLength(5);
  });

  it("keeps campaign counters from the snapshot", () => {
    const state = seedFromView(finalView);
    expect(state.lastSeq).toBe(finalView.journal_seq);
    expect(state.budgetRemaining).toBe(0);
    expect(state.phase).toBe("halted");
  });

  it("orders cards within a column by id", () => {
    const state = seedFromView(finalView);
    // insertion order scrambled: rebuild the map in reverse
    const reversed = [...state.cards.values()].reverse();
    state.cards.clear();
    for (const card of reversed) state.cards.set(card.id, card);
    const ids = columnsOf(state).done.map((c) => c.id);
    expect(ids).toEqual([...ids].sort());
  });
});

describe("board rendering", () => {
  it("shows column counts and card names", () => {
    const html = renderBoard(seedFromView(finalView));
    expect(html).toContain("exp-001");
    expect(html).toContain("exp-050");
    expect(html).toContain('<span class="count">50</span>');
  });

  it("summarizes campaign status from a live response", () => {
    const html = renderStatus(statusJson as unknown as StatusView);
    expect(html).toContain("fixture-happy_path");
    expect(html).toContain("halted");
    expect(html).toContain("budget_exhausted");
    expect(html).toContain("budget 0/50 (stop)");
    expect(html).toContain("analyzed 50");
    expect(html).toContain("best x-0049 at 0.92");
    expect(html).toContain("turns 11");
  });

  it("escapes card text", () => {
    const state = emptyBoard();
    state.cards.set("x-0001", {
      id: "x-0001",
      name: "<script>alert(1)</script>",
      hypothesis: 'a "risky" <b>idea</b>',
      state: "to_implement",
      fix_attempts: 0,
      priority_hint: null,
      worker_id: null,
      job: null,
      metrics: {},
      flags: [],
      cancel_reason: null,
      created_at: 0,
      updated_at: 0,
      analyzed_at: null,
    });
    const html = renderBoard(state);
    expect(html).not.toContain("<script>");
    expect(html).toContain("&lt;script&gt;");
    expect(html).toContain("&quot;risky&quot;");
  });
});
