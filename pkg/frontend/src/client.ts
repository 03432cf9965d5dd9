/**
 * Session client: owns the socket, enforces the send-rate ceiling, keeps a
 * monotone view of state frames, and double-guards "save" behind the last
 * frame's inserted flag (the server enforces it too).
 */
import {
  ErrorFrame,
  ServerFrame,
  StateFrame,
  Wrench,
  inputMessage,
  parseServerFrame,
  resetMessage,
  saveMessage,
  startMessage,
} from "./protocol.js";

export const TICK_MS = 50; // 20 Hz input loop
/** Hard floor between consecutive input sends: never burst above 2x nominal. */
export const MIN_SEND_GAP_MS = TICK_MS / 2;

export interface SocketLike {
  send(data: string): void;
  close(): void;
}

export interface ClientEvents {
  onState?: (frame: StateFrame) => void;
  onSaved?: (path: string) => void;
  onError?: (frame: ErrorFrame) => void;
  onDecodeFailure?: (detail: string) => void;
}

export class TeleopClient {
  lastFrame: StateFrame | null = null;
  droppedFrames = 0;
  savedCount = 0;
  inputsSent = 0;
  private lastSendAt = -Infinity;

  constructor(
    private socket: SocketLike,
    private events: ClientEvents = {},
    private now: () => number = () => performance.now(),
  ) {}

  start(geometry: string, seed: number): void {
    this.socket.send(startMessage(geometry, seed));
  }

  /** Feed a raw server message; returns the parsed frame (or null). */
  handleMessage(raw: string): ServerFrame | null {
    const frame = parseServerFrame(raw);
    if (frame === null) {
      this.events.onDecodeFailure?.("unparseable server frame");
      return null;
    }
    if (frame.type === "state") {
      if (this.lastFrame !== null && frame.t <= this.lastFrame.t) {
        this.droppedFrames += 1; // replayed or stale frame: ignore
        return null;
      }
      this.lastFrame = frame;
      this.events.onState?.(frame);
    } else if (frame.type === "saved") {
      this.savedCount += 1;
      this.events.onSaved?.(frame.path);
    } else {
      this.events.onError?.(frame);
    }
    return frame;
  }

  /**
   * Emit one input message; called by the 20 Hz loop. Sends are refused
   * when they would exceed twice the nominal rate (timer catch-up storms).
   */
  tickInput(wrench: Wrench): boolean {
    const t = this.now();
    if (t - this.lastSendAt < MIN_SEND_GAP_MS) return false;
    this.lastSendAt = t;
    this.socket.send(inputMessage(wrench));
    this.inputsSent += 1;
    return true;
  }

  /** Save is refused unless the latest frame reports inserted. */
  requestSave(): boolean {
    if (!this.lastFrame?.inserted) return false;
    this.socket.send(saveMessage());
    return true;
  }

  requestReset(): void {
    this.lastFrame = null;
    this.socket.send(resetMessage());
  }
}
