/**
 * Browser bootstrap.  Everything testable lives in the other modules; this
 * file only wires them to the DOM, fetch, and WebSocket of a real page served
 * by the gateway (campaign launch ... --serve --frontend frontend/dist).
 */

import { ApiClient } from "./api";
import { applyEvent, emptyBoard, seedFromView } from "./board";
import type { BoardState } from "./board";
import { ChatPanel, renderChat } from "./chat";
import { FileBrowser, joinPath, renderFile, renderTree } from "./files";
import { LeaderboardPoller, renderLeaderboard } from "./leaderboard";
import { renderBoard, renderStatus, renderStreamLine } from "./render";
import { StreamCursor, streamUrl } from "./stream";
import type { StreamMessage } from "./types";

const STREAM_LOG_CAP = 500;

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node;
}

export function main(): void {
  const api = new ApiClient("");
  let board: BoardState = emptyBoard();
  const streamLog: string[] = [];

  const boardEl = el("board");
  const statusEl = el("status");
  const streamEl = el("stream-log");

  const rerenderBoard = () => {
    boardEl.innerHTML = renderBoard(board);
  };

  const refreshStatus = () => {
    api
      .status()
      .then((view) => {
        statusEl.innerHTML = renderStatus(view);
      })
      .catch(() => {});
  };

  const logMessage = (msg: StreamMessage) => {
    streamLog.push(renderStreamLine(msg));
    if (streamLog.length > STREAM_LOG_CAP) streamLog.splice(0, streamLog.length - STREAM_LOG_CAP);
    streamEl.innerHTML = streamLog.join("\n");
  };

  // chat
  const chat = new ChatPanel((message) => api.chat(message));
  const chatLogEl = el("chat-log");
  const chatInput = el("chat-input") as HTMLInputElement;
  const rerenderChat = () => {
    chatLogEl.innerHTML = renderChat(chat.entries);
  };
  el("chat-send").addEventListener("click", () => {
    void chat.send(chatInput.value).then((entry) => {
      if (entry) chatInput.value = "";
      rerenderChat();
    });
  });

  // leaderboard, refreshed on a fixed cadence
  const leaderboardEl = el("leaderboard");
  const poller = new LeaderboardPoller(
    () => api.leaderboard(),
    (view) => {
      leaderboardEl.innerHTML = renderLeaderboard(view);
    },
  );
  void poller.start();

  // workspace browser
  const browser = new FileBrowser(api);
  const treeEl = el("tree");
  const fileEl = el("file-view");
  const rerenderFiles = () => {
    treeEl.innerHTML = browser.tree ? renderTree(browser.tree) : "";
    fileEl.innerHTML = browser.file ? renderFile(browser.file) : "";
  };
  treeEl.addEventListener("click", (ev) => {
    const item = (ev.target as HTMLElement).closest("li[data-name]");
    if (!(item instanceof HTMLElement)) return;
    const name = item.dataset.name ?? "";
    const target = joinPath(browser.path, name);
    const open = item.classList.contains("dir") ? browser.openDir(target) : browser.openFile(target);
    void open.then(rerenderFiles).catch(() => {});
  });
  el("tree-up").addEventListener("click", () => void browser.up().then(rerenderFiles));
  void browser.openDir(".").then(rerenderFiles);

  // halt button
  el("halt").addEventListener("click", () => {
    if (!window.confirm("Request a campaign halt?")) return;
    void api.halt().then(refreshStatus).catch(refreshStatus);
  });

  // live stream; on gaps refetch the snapshot the stream can no longer rebuild
  const cursor = new StreamCursor(
    (msg) => {
      applyEvent(board, msg);
      if (msg.kind === "strategist_turn") {
        chat.noteStrategistTurn(msg.payload as { turn: number; chat_drained?: number });
        rerenderChat();
      }
      logMessage(msg);
      rerenderBoard();
      refreshStatus();
    },
    (msg) => logMessage(msg),
    (msg) => {
      logMessage(msg);
      void api.board().then((view) => {
        board = seedFromView(view);
        cursor.snapshotRestored(view.journal_seq);
        rerenderBoard();
      });
    },
  );

  const connect = () => {
    const base = `${location.protocol}//${location.host}`;
    const ws = new WebSocket(streamUrl(base, {}, cursor.reconnectSince()));
    ws.onmessage = (ev) => cursor.feed(String(ev.data));
    ws.onclose = () => setTimeout(connect, 2000);
  };

  // seed from the snapshot, then stream from its seq
  void api
    .board()
    .then((view) => {
      board = seedFromView(view);
      cursor.snapshotRestored(view.journal_seq);
      rerenderBoard();
      refreshStatus();
    })
    .finally(connect);
}

if (typeof document !== "undefined") {
  if (document.readyState === "loading") {
    document.addEventListener("DOMContentLoaded", main);
  } else {
    main();
  }
}
