/**
 * Maps held keys and pointer drag to the normalized wrench vector.
 * Opposing keys cancel; everything clamps to [-1, 1].
 */
import { clampWrench, Wrench } from "./protocol.js";

const KEY_MAP: Record<string, Wrench> = {
  KeyW: [1, 0, 0],
  ArrowUp: [1, 0, 0],
  KeyS: [-1, 0, 0],
  ArrowDown: [-1, 0, 0],
  KeyA: [0, 1, 0],
  ArrowLeft: [0, 1, 0],
  KeyD: [0, -1, 0],
  ArrowRight: [0, -1, 0],
  KeyQ: [0, 0, 1],
  KeyE: [0, 0, -1],
};

export const KEY_HELP =
  "W/S: push/pull   A/D: lateral   Q/E: rotate   drag: lateral+rotate   " +
  "R: reset   Enter: save";

export class InputMap {
  private held = new Set<string>();
  /** pointer drag contribution, already normalized */
  pointerFy = 0;
  pointerTau = 0;

  keyDown(code: string): boolean {
    if (code in KEY_MAP) {
      this.held.add(code);
      return true;
    }
    return false;
  }

  keyUp(code: string): void {
    this.held.delete(code);
  }

  releaseAll(): void {
    this.held.clear();
    this.pointerFy = 0;
    this.pointerTau = 0;
  }

  /** Drag deltas in pixels; scaled so a ~80 px drag saturates. */
  setPointerDrag(dxPixels: number, dyPixels: number): void {
    this.pointerFy = -dyPixels / 80;
    this.pointerTau = -dxPixels / 80;
  }

  clearPointer(): void {
    this.pointerFy = 0;
    this.pointerTau = 0;
  }

  wrench(): Wrench {
    let fx = 0;
    let fy = 0;
    let tau = 0;
    for (const code of this.held) {
      const [a, b, c] = KEY_MAP[code];
      fx += a;
      fy += b;
      tau += c;
    }
    fy += this.pointerFy;
    tau += this.pointerTau;
    return clampWrench([fx, fy, tau]);
  }
}
