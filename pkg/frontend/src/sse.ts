// Server-sent-events client over fetch + ReadableStream. Implemented by hand
// (rather than EventSource) so the identical code runs in browsers and in
// node-based tests, and so reconnect backoff stays under our control.

export interface SseEvent {
  name: string;
  data: string;
}

export interface SseParserState {
  buffer: string;
}

/** Incremental SSE parse; feed chunks, get completed events back. */
export function feedSseChunk(state: SseParserState, chunk: string): SseEvent[] {
  state.buffer += chunk;
  const events: SseEvent[] = [];
  let sep: number;
  while ((sep = state.buffer.indexOf("\n\n")) >= 0) {
    const block = state.buffer.slice(0, sep);
    state.buffer = state.buffer.slice(sep + 2);
    let name = "message";
    const dataLines: string[] = [];
    for (const line of block.split("\n")) {
      if (line.startsWith(":")) continue; // comment / keepalive
      if (line.startsWith("event:")) name = line.slice(6).trim();
      else if (line.startsWith("data:")) dataLines.push(line.slice(5).trim());
    }
    if (dataLines.length > 0) events.push({ name, data: dataLines.join("\n") });
  }
  return events;
}

export interface StreamHandlers {
  onEvent: (event: SseEvent) => void;
  onOpen?: () => void;
  onDisconnect?: () => void;
}

export interface StreamOptions {
  initialBackoffMs?: number;
  maxBackoffMs?: number;
  fetchFn?: typeof fetch;
}

/** Long-lived /events subscription that reconnects with capped backoff. */
export class EventStream {
  private stopped = false;
  private controller: AbortController | null = null;
  private backoffMs: number;
  private readonly initialBackoffMs: number;
  private readonly maxBackoffMs: number;
  private readonly fetchFn: typeof fetch;

  constructor(
    private readonly url: string,
    private readonly handlers: StreamHandlers,
    options: StreamOptions = {},
  ) {
    this.initialBackoffMs = options.initialBackoffMs ?? 500;
    this.maxBackoffMs = options.maxBackoffMs ?? 5000;
    this.backoffMs = this.initialBackoffMs;
    this.fetchFn = options.fetchFn ?? fetch.bind(globalThis);
  }

  start(): void {
    void this.loop();
  }

  stop(): void {
    this.stopped = true;
    this.controller?.abort();
  }

  private async loop(): Promise<void> {
    while (!this.stopped) {
      this.controller = new AbortController();
      try {
        const response = await this.fetchFn(this.url, {
          signal: this.controller.signal,
          headers: { Accept: "text/event-stream" },
        });
        if (!response.ok || response.body === null) throw new Error(`http ${response.status}`);
        this.backoffMs = this.initialBackoffMs;
        this.handlers.onOpen?.();
        const reader = response.body.getReader();
        const decoder = new TextDecoder();
        const parser: SseParserState = { buffer: "" };
        for (;;) {
          const { done, value } = await reader.read();
          if (done) break;
          for (const event of feedSseChunk(parser, decoder.decode(value, { stream: true }))) {
            this.handlers.onEvent(event);
          }
        }
      } catch {
        // fall through to reconnect
      }
      if (this.stopped) return;
      this.handlers.onDisconnect?.();
      await new Promise((resolve) => setTimeout(resolve, this.backoffMs));
      this.backoffMs = Math.min(this.backoffMs * 2, this.maxBackoffMs);
    }
  }
}
