// Console state as a pure reducer over the event/history stream plus the
// local freeze flag: replaying the same events always yields the same state.

import { HistoryEntry, ResultPayload } from "./types.js";

export type Connection = "connecting" | "live" | "offline";

export interface ConsoleState {
  connection: Connection;
  latestResult: ResultPayload | null;
  frozen: boolean;
  frozenResult: ResultPayload | null;
  history: HistoryEntry[];
  errorCount: number;
}

export type ConsoleEvent =
  | { kind: "connected" }
  | { kind: "disconnected" }
  | { kind: "result"; payload: ResultPayload }
  | { kind: "malformed" }
  | { kind: "freeze"; on: boolean }
  | { kind: "captured"; entry: HistoryEntry }
  | { kind: "historyLoaded"; entries: HistoryEntry[] };

export const initialState: ConsoleState = {
  connection: "connecting",
  latestResult: null,
  frozen: false,
  frozenResult: null,
  history: [],
  errorCount: 0,
};

function mergeHistory(current: HistoryEntry[], incoming: HistoryEntry[]): HistoryEntry[] {
  // Append-only within a session: existing entries are never dropped.
  const byId = new Map<number, HistoryEntry>();
  for (const e of current) byId.set(e.id, e);
  for (const e of incoming) if (!byId.has(e.id)) byId.set(e.id, e);
  return [...byId.values()].sort((a, b) => a.id - b.id);
}

export function reduce(state: ConsoleState, event: ConsoleEvent): ConsoleState {
  switch (event.kind) {
    case "connected":
      return { ...state, connection: "live" };
    case "disconnected":
      return { ...state, connection: "offline" };
    case "result":
      return { ...state, latestResult: event.payload };
    case "malformed":
      return { ...state, errorCount: state.errorCount + 1 };
    case "freeze":
      return {
        ...state,
        frozen: event.on,
        frozenResult: event.on ? state.latestResult : null,
      };
    case "captured":
      return { ...state, history: mergeHistory(state.history, [event.entry]) };
    case "historyLoaded":
      return { ...state, history: mergeHistory(state.history, event.entries) };
  }
}

/** The result the operator is looking at: frozen reading or the live one. */
export function displayedResult(state: ConsoleState): ResultPayload | null {
  return state.frozen ? state.frozenResult : state.latestResult;
}
