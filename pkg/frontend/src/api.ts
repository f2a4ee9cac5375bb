/** Thin typed client for the gateway's REST endpoints. */

import type {
  BoardView,
  ChatAck,
  FileView,
  HaltAck,
  LeaderboardView,
  ReportsView,
  SessionDetail,
  SessionsView,
  StatusView,
  TreeView,
} from "./types";

export interface HttpResponse {
  ok: boolean;
  status: number;
  json(): Promise<any>;
}

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<HttpResponse>;

export class ApiError extends Error {
  constructor(
    public status: number,
    public detail: string,
  ) {
    super(`HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }
}

export class ApiClient {
  /** base is an origin like "http://127.0.0.1:8000", or "" for same-origin. */
  constructor(
    private base: string = "",
    private fetchImpl: FetchLike = globalThis.fetch as unknown as FetchLike,
  ) {}

  private async request<T>(path: string, init?: Parameters<FetchLike>[1]): Promise<T> {
    const resp = await this.fetchImpl(this.base + path, init);
    if (!resp.ok) {
      let detail = `status ${resp.status}`;
      try {
        const body = await resp.json();
        if (body && typeof body.detail === "string") detail = body.detail;
      } catch {
        // non-JSON error body; keep the generic detail
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  board(): Promise<BoardView> {
    return this.request("/api/v1/board");
  }

  leaderboard(topK?: number): Promise<LeaderboardView> {
    const q = topK !== undefined ? `?top_k=${topK}` : "";
    return this.request(`/api/v1/leaderboard${q}`);
  }

  status(): Promise<StatusView> {
    return this.request("/api/v1/status");
  }

  tree(path: string = "."): Promise<TreeView> {
    return this.request(`/api/v1/tree?path=${encodeURIComponent(path)}`);
  }

  file(path: string): Promise<FileView> {
    return this.request(`/api/v1/files?path=${encodeURIComponent(path)}`);
  }

  reports(): Promise<ReportsView> {
    return this.request("/api/v1/reports");
  }

  sessions(): Promise<SessionsView> {
    return this.request("/api/v1/sessions");
  }

  session(id: string): Promise<SessionDetail> {
    return this.request(`/api/v1/sessions/${encodeURIComponent(id)}`);
  }

  chat(message: string): Promise<ChatAck> {
    return this.post("/api/v1/chat", { message });
  }

  halt(reason?: string): Promise<HaltAck> {
    return this.post("/api/v1/halt", reason === undefined ? {} : { reason });
  }
}
