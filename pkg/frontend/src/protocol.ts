/**
 * Wire protocol shared with the teleop server: JSON text frames over a
 * WebSocket. Outgoing wrench components are always clamped to [-1, 1].
 */

export type Wrench = [number, number, number];

export interface StateFrame {
  type: "state";
  t: number;
  pose: [number, number, number];
  wrench: Wrench;
  inserted: boolean;
  image: string; // base64 raw u8, 64x64 row-major
}

export interface SavedFrame {
  type: "saved";
  path: string;
}

export interface ErrorFrame {
  type: "error";
  code: string;
  detail: string;
}

export type ServerFrame = StateFrame | SavedFrame | ErrorFrame;

export const IMAGE_SIZE = 64;

export function clampComponent(v: number): number {
  if (Number.isNaN(v)) return 0;
  return Math.max(-1, Math.min(1, v));
}

export function clampWrench(w: Wrench): Wrench {
  return [clampComponent(w[0]), clampComponent(w[1]), clampComponent(w[2])];
}

export function startMessage(geometry: string, seed: number): string {
  return JSON.stringify({ type: "start", geometry, seed });
}

export function inputMessage(w: Wrench): string {
  return JSON.stringify({ type: "input", wrench: clampWrench(w) });
}

export function resetMessage(): string {
  return JSON.stringify({ type: "reset" });
}

export function saveMessage(): string {
  return JSON.stringify({ type: "save" });
}

export function parseServerFrame(raw: string): ServerFrame | null {
  let msg: unknown;
  try {
    msg = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof msg !== "object" || msg === null || !("type" in msg)) return null;
  const frame = msg as ServerFrame;
  if (frame.type === "state" || frame.type === "saved" || frame.type === "error") {
    return frame;
  }
  return null;
}

/** Decode the base64 grayscale payload; null when malformed or mis-sized. */
export function decodeImage(b64: string): Uint8Array | null {
  let binary: string;
  try {
    binary = atob(b64);
  } catch {
    return null;
  }
  if (binary.length !== IMAGE_SIZE * IMAGE_SIZE) return null;
  const out = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) out[i] = binary.charCodeAt(i);
  return out;
}
