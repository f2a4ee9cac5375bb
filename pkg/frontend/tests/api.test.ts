import { describe, expect, it } from "vitest";

import { ApiClient, ApiError } from "../src/api";
import type { FetchLike, HttpResponse } from "../src/api";

interface Call {
  url: string;
  method: string;
  body: string | null;
}

function client(respond: (url: string) => HttpResponse | Promise<HttpResponse>) {
  const calls: Call[] = [];
  const fetchImpl: FetchLike = async (url, init) => {
    calls.push({ url, method: init?.method ?? "GET", body: init?.body ?? null });
    return respond(url);
  };
  return { api: new ApiClient("http://gw", fetchImpl), calls };
}

const ok = (body: unknown): HttpResponse => ({
  ok: true,
  status: 200,
  json: async () => body,
});

describe("request shapes", () => {
  it("hits each read endpoint with the right path", async () => {
    const { api, calls } = client(() => ok({}));
    await api.board();
    await api.leaderboard();
    await api.leaderboard(5);
    await api.status();
    await api.tree();
    await api.tree("reports/milestone_001");
    await api.file("logs/sessions/s0001.jsonl");
    await api.reports();
    await api.sessions();
    await api.session("s0042");
    expect(calls.map((c) => c.url)).toEqual([
      "http://gw/api/v1/board",
      "http://gw/api/v1/leaderboard",
      "http://gw/api/v1/leaderboard?top_k=5",
      "http://gw/api/v1/status",
      "http://gw/api/v1/tree?path=.",
      "http://gw/api/v1/tree?path=reports%2Fmilestone_001",
      "http://gw/api/v1/files?path=logs%2Fsessions%2Fs0001.jsonl",
      "http://gw/api/v1/reports",
      "http://gw/api/v1/sessions",
      "http://gw/api/v1/sessions/s0042",
    ]);
    expect(calls.every((c) => c.method === "GET")).toBe(true);
  });

  it("posts chat messages as JSON", async () => {
    const { api, calls } = client(() => ok({ status: "queued", pending: 2 }));
    const ack = await api.chat("try a longer context window");
    expect(calls[0]).toMatchObject({ url: "http://gw/api/v1/chat", method: "POST" });
    expect(JSON.parse(calls[0]!.body!)).toEqual({ message: "try a longer context window" });
    expect(ack.pending).toBe(2);
  });

  it("posts halt with and without a reason", async () => {
    const { api, calls } = client(() =>
      ok({ status: "halt_requested", reason: "user_requested" }),
    );
    await api.halt();
    await api.halt("stopping for the weekend");
    expect(JSON.parse(calls[0]!.body!)).toEqual({});
    expect(JSON.parse(calls[1]!.body!)).toEqual({ reason: "stopping for the weekend" });
  });

  it("works same-origin with an empty base", async () => {
    const calls: string[] = [];
    const fetchImpl: FetchLike = async (url) => {
      calls.push(url);
      return ok({});
    };
    await new ApiClient("", fetchImpl).status();
    expect(calls).toEqual(["/api/v1/status"]);
  });
});

describe("error mapping", () => {
  it("surfaces the server's detail string", async () => {
    const { api } = client(() => ({
      ok: false,
      status: 409,
      json: async () => ({ detail: "campaign is already halted" }),
    }));
    await expect(api.halt()).rejects.toThrowError(ApiError);
    await expect(api.halt()).rejects.toMatchObject({
      status: 409,
      detail: "campaign is already halted",
    });
  });

  it("falls back to the status code for non-JSON error bodies", async () => {
    const { api } = client(() => ({
      ok: false,
      status: 502,
      json: async () => {
        throw new Error("not json");
      },
    }));
    await expect(api.board()).rejects.toMatchObject({ status: 502, detail: "status 502" });
  });
});
