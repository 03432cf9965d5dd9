import { describe, expect, it } from "vitest";
import { MIN_SEND_GAP_MS, TICK_MS, TeleopClient } from "../src/client.js";
import { StateFrame } from "../src/protocol.js";

class FakeSocket {
  sent: string[] = [];
  send(data: string): void {
    this.sent.push(data);
  }
  close(): void {}
}

function stateFrame(t: number, inserted = false): string {
  return JSON.stringify({
    type: "state",
    t,
    pose: [0, 0, 0],
    wrench: [0, 0, 0],
    inserted,
    image: "",
  } satisfies StateFrame);
}

function makeClient(): { client: TeleopClient; socket: FakeSocket; clock: { t: number } } {
  const socket = new FakeSocket();
  const clock = { t: 0 };
  const client = new TeleopClient(socket, {}, () => clock.t);
  return { client, socket, clock };
}

describe("input emission rate", () => {
  it("sustains 20 Hz within 10 % over a simulated 10 s loop", () => {
    const { client, socket, clock } = makeClient();
    // the browser timer fires every TICK_MS with +-4 ms jitter
    let t = 0;
    let i = 0;
    while (t < 10_000) {
      const jitter = ((i * 7919) % 9) - 4;
      t += TICK_MS + jitter;
      clock.t = t;
      client.tickInput([0, 0, 0]);
      i++;
    }
    const rate = socket.sent.length / 10; // Hz
    expect(rate).toBeGreaterThanOrEqual(18);
    expect(rate).toBeLessThanOrEqual(22);
  });

  it("never bursts above twice the nominal rate under timer storms", () => {
    const { client, socket, clock } = makeClient();
    // catch-up storm: 100 timer callbacks delivered almost at once, twice
    const times: number[] = [];
    for (let burst = 0; burst < 2; burst++) {
      for (let i = 0; i < 100; i++) times.push(burst * 1000 + i);
    }
    for (const t of times) {
      clock.t = t;
      client.tickInput([0.1, 0, 0]);
    }
    // within any 1 s window the ceiling is 1000 / MIN_SEND_GAP_MS = 40 msgs
    expect(socket.sent.length).toBeLessThanOrEqual(2 * (1000 / TICK_MS) * 2);
    const windowMax = 1000 / MIN_SEND_GAP_MS;
    expect(socket.sent.length / 2).toBeLessThanOrEqual(windowMax);
  });
});

describe("monotone frame display", () => {
  it("ignores replayed or stale frames", () => {
    const { client } = makeClient();
    client.handleMessage(stateFrame(5));
    expect(client.lastFrame?.t).toBe(5);
    client.handleMessage(stateFrame(3));
    expect(client.lastFrame?.t).toBe(5);
    expect(client.droppedFrames).toBe(1);
    client.handleMessage(stateFrame(6));
    expect(client.lastFrame?.t).toBe(6);
  });

  it("flags undecodable frames without dropping the connection", () => {
    const { client, socket, clock } = makeClient();
    let failures = 0;
    const c2 = new TeleopClient(socket, { onDecodeFailure: () => failures++ },
      () => clock.t);
    c2.handleMessage("garbage{{");
    expect(failures).toBe(1);
    // the client still processes later frames
    c2.handleMessage(stateFrame(1));
    expect(c2.lastFrame?.t).toBe(1);
  });
});

describe("save guard", () => {
  it("blocks save until the latest frame reports inserted", () => {
    const { client, socket } = makeClient();
    expect(client.requestSave()).toBe(false);
    client.handleMessage(stateFrame(1, false));
    expect(client.requestSave()).toBe(false);
    expect(socket.sent.filter((m) => m.includes('"save"')).length).toBe(0);
    client.handleMessage(stateFrame(2, true));
    expect(client.requestSave()).toBe(true);
    expect(socket.sent.filter((m) => m.includes('"save"')).length).toBe(1);
  });
});

describe("outgoing wrench clamping", () => {
  it("clamps components on every send", () => {
    const { client, socket, clock } = makeClient();
    clock.t = 100;
    client.tickInput([9, -9, 0.3]);
    const msg = JSON.parse(socket.sent[0]);
    expect(msg.wrench).toEqual([1, -1, 0.3]);
  });
});
