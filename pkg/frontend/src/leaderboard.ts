/** Leaderboard polling and rendering. */

import { escapeHtml, formatValue } from "./render";
import type { LeaderboardView } from "./types";

/**
 * Periodically refetches the leaderboard.  start() fetches once immediately
 * and then every intervalMs; a failed poll keeps the last good view and
 * records the error instead of blanking the table.
 */
export class LeaderboardPoller {
  view: LeaderboardView | null = null;
  error: string | null = null;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private load: () => Promise<LeaderboardView>,
    private onChange: (view: LeaderboardView) => void = () => {},
    private intervalMs: number = 10_000,
  ) {}

  async refresh(): Promise<void> {
    try {
      this.view = await this.load();
      this.error = null;
      this.onChange(this.view);
    } catch (err) {
      this.error = String(err);
    }
  }

  async start(): Promise<void> {
    await this.refresh();
    if (this.timer === null) {
      this.timer = setInterval(() => void this.refresh(), this.intervalMs);
    }
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }
}

export function renderLeaderboard(view: LeaderboardView): string {
  const dir = view.metric.direction === "min" ? "lower is better" : "higher is better";
  const rows = view.rows
    .map(
      (r) => `<tr>
  <td class="rank">${r.rank}</td>
  <td class="name">${escapeHtml(r.name)}</td>
  <td class="value">${escapeHtml(formatValue(r.value))}</td>
  <td class="at">${r.analyzed_at ?? ""}</td>
</tr>`,
    )
    .join("\n");
  const flagged = view.flagged.length
    ? `<p class="flagged">flagged: ${view.flagged.map(escapeHtml).join(", ")}</p>`
    : "";
  return `<div class="leaderboard">
<h2>${escapeHtml(view.metric.name)} <small>(${dir})</small></h2>
<table>
<thead><tr><th>#</th><th>experiment</th><th>value</th><th>analyzed at</th></tr></thead>
<tbody>
${rows}
</tbody>
</table>
${flagged}
</div>`;
}
