// Capture-history pane: thumbnail, timestamp, and the top score per entry.

import { formatTimestamp, percentHalfUp } from "./format.js";
import { HistoryEntry } from "./types.js";

export function renderHistory(root: HTMLElement, entries: HistoryEntry[]): void {
  root.textContent = "";
  if (entries.length === 0) {
    const empty = document.createElement("div");
    empty.className = "empty";
    empty.textContent = "no captures yet";
    root.appendChild(empty);
    return;
  }
  for (const entry of [...entries].reverse()) {
    const item = document.createElement("div");
    item.className = "history-entry";
    item.dataset.entryId = String(entry.id);

    const img = document.createElement("img");
    img.className = "history-thumb";
    img.src = `data:image/png;base64,${entry.frame_png_base64}`;
    img.alt = `capture ${entry.id}`;

    const meta = document.createElement("div");
    meta.className = "history-meta";
    const best = entry.result.top[0];
    meta.textContent = `#${entry.id} ${formatTimestamp(entry.timestamp)} · ${best.label} ${percentHalfUp(best.probability)}%`;

    item.append(img, meta);
    root.appendChild(item);
  }
}
