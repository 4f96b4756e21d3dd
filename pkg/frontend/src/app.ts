// Console wiring: subscribe to the event stream, poll the latest frame,
// render score bars and history, and handle the freeze/capture controls.

import { renderScores } from "./bars.js";
import { renderHistory } from "./history.js";
import { EventStream } from "./sse.js";
import { ConsoleEvent, ConsoleState, displayedResult, initialState, reduce } from "./state.js";
import { parseHistoryEntry, parseResultPayload } from "./types.js";

export interface ConsoleElements {
  status: HTMLElement;
  frame: HTMLImageElement;
  scores: HTMLElement;
  history: HTMLElement;
  freezeButton: HTMLButtonElement;
  captureButton: HTMLButtonElement;
  errorCounter: HTMLElement;
}

export class Console {
  state: ConsoleState = initialState;
  private stream: EventStream | null = null;
  private frameTimer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private readonly baseUrl: string,
    private readonly el: ConsoleElements,
    private readonly framePollMs = 500,
  ) {}

  dispatch(event: ConsoleEvent): void {
    this.state = reduce(this.state, event);
    this.render();
  }

  connect(): void {
    this.stream = new EventStream(`${this.baseUrl}/events`, {
      onOpen: () => this.dispatch({ kind: "connected" }),
      onDisconnect: () => this.dispatch({ kind: "disconnected" }),
      onEvent: (event) => {
        if (event.name !== "result") return; // status events only affect the banner
        let parsed: unknown;
        try {
          parsed = JSON.parse(event.data);
        } catch {
          this.dispatch({ kind: "malformed" });
          return;
        }
        const payload = parseResultPayload(parsed);
        if (payload === null) {
          this.dispatch({ kind: "malformed" });
          return;
        }
        this.dispatch({ kind: "result", payload });
      },
    });
    this.stream.start();
    this.frameTimer = setInterval(() => this.refreshFrame(), this.framePollMs);
    void this.loadHistory();
    this.render();
  }

  disconnect(): void {
    this.stream?.stop();
    if (this.frameTimer !== null) clearInterval(this.frameTimer);
  }

  private refreshFrame(): void {
    if (this.state.frozen) return;
    this.el.frame.src = `${this.baseUrl}/frame?t=${Date.now()}`;
  }

  async loadHistory(): Promise<void> {
    try {
      const response = await fetch(`${this.baseUrl}/history`);
      if (!response.ok) return;
      const payload = (await response.json()) as { entries?: unknown[] };
      const entries = (payload.entries ?? [])
        .map(parseHistoryEntry)
        .filter((e): e is NonNullable<typeof e> => e !== null);
      this.dispatch({ kind: "historyLoaded", entries });
    } catch {
      // offline; the stream handler shows the banner
    }
  }

  toggleFreeze(): void {
    this.dispatch({ kind: "freeze", on: !this.state.frozen });
  }

  async capture(): Promise<void> {
    // when frozen, ask the service for the exact frozen reading so the
    // history entry matches what the operator is looking at
    const frozen = this.state.frozen ? this.state.frozenResult : null;
    const init: RequestInit =
      frozen === null
        ? { method: "POST" }
        : {
            method: "POST",
            headers: { "Content-Type": "application/json" },
            body: JSON.stringify({ timestamp: frozen.timestamp }),
          };
    try {
      const response = await fetch(`${this.baseUrl}/capture`, init);
      if (!response.ok) return;
      const entry = parseHistoryEntry(await response.json());
      if (entry !== null) this.dispatch({ kind: "captured", entry });
    } catch {
      // drop; a later /history reload recovers server-confirmed entries
    }
  }

  render(): void {
    const { state, el } = this;
    el.status.textContent =
      state.connection === "live"
        ? "live"
        : state.connection === "offline"
          ? "offline, retrying…"
          : "connecting…";
    el.status.className = `status status-${state.connection}`;
    renderScores(el.scores, displayedResult(state));
    renderHistory(el.history, state.history);
    el.freezeButton.textContent = state.frozen ? "unfreeze" : "freeze";
    el.captureButton.disabled = displayedResult(state) === null;
    el.errorCounter.textContent = state.errorCount > 0 ? `${state.errorCount} bad events` : "";
  }
}

export function bootstrap(doc: Document, baseUrl: string): Console {
  const byId = <T extends HTMLElement>(id: string) => doc.getElementById(id) as T;
  const console_ = new Console(baseUrl, {
    status: byId("status"),
    frame: byId<HTMLImageElement>("frame"),
    scores: byId("scores"),
    history: byId("history"),
    freezeButton: byId<HTMLButtonElement>("freeze"),
    captureButton: byId<HTMLButtonElement>("capture"),
    errorCounter: byId("errors"),
  });
  byId<HTMLButtonElement>("freeze").addEventListener("click", () => console_.toggleFreeze());
  byId<HTMLButtonElement>("capture").addEventListener("click", () => void console_.capture());
  console_.connect();
  return console_;
}
