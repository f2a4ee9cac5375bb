import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api";
import type { FetchLike } from "../src/api";
import { applyEvent, emptyBoard } from "../src/board";
import { ChatPanel, renderChat } from "../src/chat";

// a real strategist_turn payload shape; chat_drained counts consumed messages
function strategistTurn(turn: number, chatDrained: number) {
  return {
    accepted: 0,
    analyzed_count: 30,
    budget_after: 10,
    budget_before: 10,
    cancelled: [],
    chat_drained: chatDrained,
    outcome: "reported",
    playbook_updated: false,
    reason: null,
    rejected: 0,
    session: "s0042",
    turn,
  };
}

describe("chat round trip", () => {
  it("a posted message is queued, then delivered into the next strategist turn", async () => {
    const calls: Array<{ url: string; body: string }> = [];
    const fetchImpl: FetchLike = async (url, init) => {
      calls.push({ url, body: init?.body ?? "" });
      return { ok: true, status: 200, json: async () => ({ status: "queued", pending: 1 }) };
    };
    const api = new ApiClient("http://gw", fetchImpl);
    const panel = new ChatPanel((m) => api.chat(m));

    const entry = await panel.send("prefer weekly seasonality ablations");
    expect(calls).toHaveLength(1);
    expect(calls[0]!.url).toBe("http://gw/api/v1/chat");
    expect(JSON.parse(calls[0]!.body)).toEqual({ message: "prefer weekly seasonality ablations" });
    expect(entry!.status).toBe("queued");
    expect(entry!.pendingAfter).toBe(1);
    expect(renderChat(panel.entries)).toContain("waiting for the next strategist turn");

    // the next strategist turn drains the queue and the stream reports it
    panel.noteStrategistTurn(strategistTurn(7, 1));
    expect(panel.entries[0]).toMatchObject({ status: "delivered", turn: 7 });
    expect(renderChat(panel.entries)).toContain("read by strategist turn 7");
  });

  it("drains oldest first when a turn consumes only part of the queue", async () => {
    const panel = new ChatPanel(async () => ({ status: "queued", pending: 1 }));
    await panel.send("first note");
    await panel.send("second note");
    panel.noteStrategistTurn(strategistTurn(3, 1));
    expect(panel.entries.map((e) => e.status)).toEqual(["delivered", "queued"]);
    expect(panel.entries[0]!.turn).toBe(3);
    panel.noteStrategistTurn(strategistTurn(4, 1));
    expect(panel.entries.map((e) => e.status)).toEqual(["delivered", "delivered"]);
    expect(panel.entries[1]!.turn).toBe(4);
  });

  it("ignores turns that drained nothing", async () => {
    const panel = new ChatPanel(async () => ({ status: "queued", pending: 1 }));
    await panel.send("still waiting");
    panel.noteStrategistTurn(strategistTurn(5, 0));
    expect(panel.entries[0]!.status).toBe("queued");
  });

  it("rejects blank input locally without posting", async () => {
    let posted = 0;
    const panel = new ChatPanel(async () => {
      posted += 1;
      return { status: "queued", pending: 1 };
    });
    expect(await panel.send("   ")).toBeNull();
    expect(posted).toBe(0);
    expect(panel.entries).toHaveLength(0);
  });

  it("marks the entry failed when the campaign is halted", async () => {
    const fetchImpl: FetchLike = async () => ({
      ok: false,
      status: 409,
      json: async () => ({ detail: "campaign is halted; chat is closed" }),
    });
    const api = new ApiClient("", fetchImpl);
    const panel = new ChatPanel((m) => api.chat(m));
    const entry = await panel.send("too late");
    expect(entry!.status).toBe("failed");
    expect(renderChat(panel.entries)).toContain("failed to send");
  });

  it("escapes message text in the log", async () => {
    const panel = new ChatPanel(async () => ({ status: "queued", pending: 1 }));
    await panel.send("<img src=x onerror=alert(1)>");
    const html = renderChat(panel.entries);
    expect(html).not.toContain("<img");
    expect(html).toContain("&lt;img");
  });
});

describe("chat in the board reducer", () => {
  it("chat events queue and strategist turns drain from the front", () => {
    const state = emptyBoard();
    applyEvent(state, {
      type: "event",
      seq: 1,
      kind: "chat",
      at: 100,
      payload: { message: "look at horizon 48" },
    });
    applyEvent(state, {
      type: "event",
      seq: 2,
      kind: "chat",
      at: 101,
      payload: { message: "drop the linear baseline" },
    });
    expect(state.chatPending).toEqual(["look at horizon 48", "drop the linear baseline"]);

    applyEvent(state, {
      type: "event",
      seq: 3,
      kind: "strategist_turn",
      at: 130,
      payload: strategistTurn(8, 1),
    });
    expect(state.chatPending).toEqual(["drop the linear baseline"]);
    expect(state.strategistTurns).toBe(8);
  });
});
