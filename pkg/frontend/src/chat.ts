/**
 * Operator chat.
 *
 * Messages are queued on the campaign and drained by the strategist at the
 * start of its next turn; the strategist_turn journal event reports how many
 * it consumed via chat_drained.  The panel tracks its own sends and flips
 * them to "delivered" (tagged with the turn number) as drains come in, so an
 * operator can see which turn actually read their guidance.
 */

import { escapeHtml } from "./render";
import type { ChatAck } from "./types";

export type ChatStatus = "queued" | "delivered" | "failed";

export interface ChatEntry {
  text: string;
  status: ChatStatus;
  /** strategist turn that consumed the message, once known */
  turn: number | null;
  /** queue length right after the ack, including this message */
  pendingAfter: number | null;
}

export class ChatPanel {
  entries: ChatEntry[] = [];

  constructor(private post: (message: string) => Promise<ChatAck>) {}

  /** Send one message; blank input is rejected locally (the server 422s it anyway). */
  async send(text: string): Promise<ChatEntry | null> {
    const trimmed = text.trim();
    if (!trimmed) return null;
    const entry: ChatEntry = { text: trimmed, status: "queued", turn: null, pendingAfter: null };
    try {
      const ack = await this.post(trimmed);
      entry.pendingAfter = ack.pending;
    } catch (err) {
      entry.status = "failed";
    }
    this.entries.push(entry);
    return entry;
  }

  /**
   * Note a strategist_turn event.  chat_drained counts the whole campaign
   * queue, which drains oldest first, so mark that many of our own oldest
   * still-queued entries as delivered into this turn.
   */
  noteStrategistTurn(payload: { turn: number; chat_drained?: number }): void {
    let budget = payload.chat_drained ?? 0;
    for (const entry of this.entries) {
      if (budget <= 0) break;
      if (entry.status === "queued") {
        entry.status = "delivered";
        entry.turn = payload.turn;
        budget -= 1;
      }
    }
  }
}

export function renderChat(entries: ChatEntry[]): string {
  if (!entries.length) {
    return `<p class="chat-empty">No messages yet. Guidance posted here reaches the strategist on its next turn.</p>`;
  }
  const items = entries
    .map((e) => {
      const note =
        e.status === "delivered"
          ? `read by strategist turn ${e.turn}`
          : e.status === "failed"
            ? "failed to send"
            : "waiting for the next strategist turn";
      return `<li class="chat-${e.status}"><span class="text">${escapeHtml(e.text)}</span> <span class="note">${note}</span></li>`;
    })
    .join("\n");
  return `<ul class="chat-log">\n${items}\n</ul>`;
}
