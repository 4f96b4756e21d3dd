import { describe, expect, it } from "vitest";

import { EventStream, SseEvent, SseParserState, feedSseChunk } from "../src/sse.js";

describe("feedSseChunk", () => {
  it("parses a complete event", () => {
    const state: SseParserState = { buffer: "" };
    const events = feedSseChunk(state, 'event: result\ndata: {"a":1}\n\n');
    expect(events).toEqual([{ name: "result", data: '{"a":1}' }]);
  });

  it("reassembles events split across chunks", () => {
    const state: SseParserState = { buffer: "" };
    expect(feedSseChunk(state, "event: res")).toEqual([]);
    expect(feedSseChunk(state, "ult\ndata: 42\n")).toEqual([]);
    expect(feedSseChunk(state, "\n")).toEqual([{ name: "result", data: "42" }]);
  });

  it("handles several events in one chunk and ignores keepalives", () => {
    const state: SseParserState = { buffer: "" };
    const chunk = ": keepalive\n\nevent: a\ndata: 1\n\nevent: b\ndata: 2\n\n";
    expect(feedSseChunk(state, chunk)).toEqual([
      { name: "a", data: "1" },
      { name: "b", data: "2" },
    ]);
  });

  it("defaults the event name to message", () => {
    const state: SseParserState = { buffer: "" };
    expect(feedSseChunk(state, "data: x\n\n")).toEqual([{ name: "message", data: "x" }]);
  });
});

function streamResponse(blocks: string[]): Response {
  const encoder = new TextEncoder();
  const body = new ReadableStream<Uint8Array>({
    start(controller) {
      for (const block of blocks) controller.enqueue(encoder.encode(block));
      controller.close();
    },
  });
  return new Response(body, { status: 200, headers: { "content-type": "text/event-stream" } });
}

describe("EventStream", () => {
  it("reconnects after a failure, with callbacks in order", async () => {
    let call = 0;
    const log: string[] = [];
    const received: SseEvent[] = [];
    const fetchFn = (async () => {
      call += 1;
      if (call === 1) throw new Error("refused");
      return streamResponse(["event: result\ndata: 1\n\n"]);
    }) as typeof fetch;

    const stream = new EventStream(
      "http://example.test/events",
      {
        onOpen: () => log.push("open"),
        onDisconnect: () => log.push("down"),
        onEvent: (e) => {
          received.push(e);
          log.push("event");
        },
      },
      { initialBackoffMs: 5, maxBackoffMs: 10, fetchFn },
    );
    stream.start();
    await new Promise((r) => setTimeout(r, 100));
    stream.stop();
    expect(log[0]).toBe("down"); // first connect failed
    expect(log).toContain("open");
    expect(received.length).toBeGreaterThanOrEqual(1);
    expect(received[0]).toEqual({ name: "result", data: "1" });
    const firstOpen = log.indexOf("open");
    expect(log.slice(0, firstOpen)).toEqual(Array(firstOpen).fill("down"));
  });

  it("stops cleanly and stops retrying", async () => {
    let calls = 0;
    const fetchFn = (async () => {
      calls += 1;
      throw new Error("nope");
    }) as typeof fetch;
    const stream = new EventStream(
      "http://example.test/events",
      { onEvent: () => {} },
      { initialBackoffMs: 5, fetchFn },
    );
    stream.start();
    await new Promise((r) => setTimeout(r, 25));
    stream.stop();
    const after = calls;
    await new Promise((r) => setTimeout(r, 40));
    expect(calls).toBe(after);
  });
});
