// Presentation helpers shared by bars and history panes.

/** Probability -> integer percent, rounding halves up (0.145 -> 15). */
export function percentHalfUp(probability: number): number {
  return Math.floor(probability * 100 + 0.5);
}

export function formatTimestamp(epochSeconds: number): string {
  return new Date(epochSeconds * 1000).toLocaleTimeString();
}
