// Payload shapes of the classification service, plus runtime validation so
// malformed stream events can be skipped instead of crashing the console.

export interface TopEntry {
  label: string;
  probability: number;
}

export interface ResultPayload {
  top: TopEntry[];
  timestamp: number;
  model_checksum: string;
  disclaimer: string;
}

export interface HistoryEntry {
  id: number;
  timestamp: number;
  result: ResultPayload;
  frame_png_base64: string;
}

function isTopEntry(v: unknown): v is TopEntry {
  if (typeof v !== "object" || v === null) return false;
  const e = v as Record<string, unknown>;
  return (
    typeof e.label === "string" &&
    typeof e.probability === "number" &&
    Number.isFinite(e.probability) &&
    e.probability >= 0 &&
    e.probability <= 1
  );
}

export function parseResultPayload(v: unknown): ResultPayload | null {
  if (typeof v !== "object" || v === null) return null;
  const r = v as Record<string, unknown>;
  if (!Array.isArray(r.top) || r.top.length === 0 || !r.top.every(isTopEntry)) return null;
  if (typeof r.timestamp !== "number" || !Number.isFinite(r.timestamp)) return null;
  if (typeof r.model_checksum !== "string") return null;
  if (typeof r.disclaimer !== "string" || r.disclaimer.length === 0) return null;
  return {
    top: r.top as TopEntry[],
    timestamp: r.timestamp,
    model_checksum: r.model_checksum,
    disclaimer: r.disclaimer,
  };
}

export function parseHistoryEntry(v: unknown): HistoryEntry | null {
  if (typeof v !== "object" || v === null) return null;
  const e = v as Record<string, unknown>;
  const result = parseResultPayload(e.result);
  if (result === null) return null;
  if (typeof e.id !== "number" || typeof e.timestamp !== "number") return null;
  if (typeof e.frame_png_base64 !== "string") return null;
  return { id: e.id, timestamp: e.timestamp, result, frame_png_base64: e.frame_png_base64 };
}
