/** HTML-string renderers shared across panels.  Pure functions, no DOM. */

import { columnsOf, DISPLAY_COLUMNS } from "./board";
import type { BoardState } from "./board";
import type { Card, MetricValue, StatusView, StreamMessage } from "./types";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

export function formatValue(value: MetricValue | null): string {
  if (value === null) return "";
  return typeof value === "number" ? String(value) : value;
}

/** Latest full-scope record of any metric, for the card footer. */
function latestMetrics(card: Card): string {
  const parts: string[] = [];
  for (const [name, recs] of Object.entries(card.metrics)) {
    const last = recs[recs.length - 1];
    if (last !== undefined) parts.push(`${name}=${formatValue(last.value)}`);
  }
  return parts.join(" ");
}

function renderCard(card: Card): string {
  const fix = card.fix_attempts > 0 ? ` <span class="fix">fix ${card.fix_attempts}</span>` : "";
  const worker = card.worker_id ? ` <span class="worker">${escapeHtml(card.worker_id)}</span>` : "";
  const flags = card.flags.length
    ? `<span class="flags">${card.flags.map(escapeHtml).join(", ")}</span>`
    : "";
  const metrics = latestMetrics(card);
  return `<div class="card state-${escapeHtml(card.state)}" data-id="${escapeHtml(card.id)}" title="${escapeHtml(card.hypothesis)}">
<span class="card-name">${escapeHtml(card.name)}</span>${fix}${worker}
${metrics ? `<span class="card-metrics">${escapeHtml(metrics)}</span>` : ""}${flags}
</div>`;
}

export function renderBoard(state: BoardState): string {
  const cols = columnsOf(state);
  const sections = DISPLAY_COLUMNS.map((name) => {
    const cards = cols[name];
    return `<section class="column col-${name}" data-column="${name}">
<h3>${name} <span class="count">${cards.length}</span></h3>
${cards.map(renderCard).join("\n")}
</section>`;
  });
  return `<div class="board">\n${sections.join("\n")}\n</div>`;
}

export function renderStatus(view: StatusView): string {
  const halt = view.halt_reason ? ` (${escapeHtml(view.halt_reason)})` : "";
  const best =
    view.best_experiment === null
      ? "none yet"
      : `${escapeHtml(view.best_experiment)} at ${formatValue(view.best_primary)}`;
  return `<div class="status">
<span class="campaign-id">${escapeHtml(view.id)}</span>
<span class="phase">${escapeHtml(view.phase)}${halt}</span>
<span class="budget">budget ${view.budget_remaining}/${view.budget_initial} (${escapeHtml(view.band)})</span>
<span class="analyzed">analyzed ${view.analyzed_count}</span>
<span class="best">best ${best}</span>
<span class="turns">turns ${view.strategist_turns}</span>
</div>`;
}

/** One stream message as a log line for the event viewer. */
export function renderStreamLine(msg: StreamMessage): string {
  if (msg.type === "gap") {
    return `<li class="gap">stream gap: ${msg.dropped} messages dropped, snapshots stale</li>`;
  }
  if (msg.type === "session") {
    const kind = typeof msg.record.kind === "string" ? msg.record.kind : "record";
    return `<li class="session">[${escapeHtml(msg.session)}] ${escapeHtml(kind)}</li>`;
  }
  const detail = summarizeEvent(msg.kind, msg.payload);
  return `<li class="event kind-${escapeHtml(msg.kind)}">#${msg.seq} t=${msg.at} ${escapeHtml(msg.kind)}${detail ? " " + escapeHtml(detail) : ""}</li>`;
}

function summarizeEvent(kind: string, p: Record<string, any>): string {
  switch (kind) {
    case "proposal":
      return `${p.name} ${p.accepted ? "accepted" : "rejected"}`;
    case "transition":
      return `${p.exp_id} ${p.from} -> ${p.to}`;
    case "metric":
      return `${p.exp_id} ${p.name}=${formatValue(p.value)}`;
    case "job":
      return `${p.exp_id} ${p.state}`;
    case "strategist_turn":
      return `turn ${p.turn} (+${p.accepted} proposals)`;
    case "milestone":
      return `#${p.n} ${p.path}`;
    case "phase":
      return String(p.phase);
    default:
      return "";
  }
}
