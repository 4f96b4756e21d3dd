// Top-5 probability bar rendering. The disclaimer banner is created by the
// same function so scores can never appear in the DOM without it.

import { percentHalfUp } from "./format.js";
import { ResultPayload } from "./types.js";

export function renderScores(root: HTMLElement, result: ResultPayload | null): void {
  root.textContent = "";
  if (result === null) {
    const empty = document.createElement("div");
    empty.className = "empty";
    empty.textContent = "waiting for scores…";
    root.appendChild(empty);
    return;
  }
  for (const entry of result.top) {
    const pct = percentHalfUp(entry.probability);
    const row = document.createElement("div");
    row.className = "score-row";

    const label = document.createElement("span");
    label.className = "score-label";
    label.textContent = entry.label;

    const track = document.createElement("div");
    track.className = "score-track";
    const bar = document.createElement("div");
    bar.className = "score-bar";
    bar.style.width = `${(entry.probability * 100).toFixed(2)}%`;
    track.appendChild(bar);

    const value = document.createElement("span");
    value.className = "score-value";
    value.textContent = `${pct}%`;

    row.append(label, track, value);
    root.appendChild(row);
  }
  const banner = document.createElement("div");
  banner.className = "disclaimer";
  banner.textContent = result.disclaimer;
  root.appendChild(banner);
}
