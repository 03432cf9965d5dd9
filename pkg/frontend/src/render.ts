/**
 * Canvas drawing: the streamed 64x64 grayscale frame upscaled, wrench bars,
 * pose readout, and the inserted banner.
 */
import { IMAGE_SIZE, StateFrame, decodeImage } from "./protocol.js";

export const SCALE = 6;
export const PANEL_HEIGHT = 72;

export function imageToRGBA(gray: Uint8Array): Uint8ClampedArray<ArrayBuffer> {
  const rgba = new Uint8ClampedArray(new ArrayBuffer(gray.length * 4));
  for (let i = 0; i < gray.length; i++) {
    rgba[4 * i] = gray[i];
    rgba[4 * i + 1] = gray[i];
    rgba[4 * i + 2] = gray[i];
    rgba[4 * i + 3] = 255;
  }
  return rgba;
}

/** Bar length in pixels, proportional to |component| with sign. */
export function barLength(component: number, halfWidth: number): number {
  const v = Math.max(-1.5, Math.min(1.5, component));
  return (v / 1.5) * halfWidth;
}

export function renderFrame(
  ctx: CanvasRenderingContext2D,
  frame: StateFrame,
  commanded: [number, number, number],
): boolean {
  const gray = decodeImage(frame.image);
  if (gray === null) return false;

  const size = IMAGE_SIZE * SCALE;
  const image = new ImageData(imageToRGBA(gray), IMAGE_SIZE, IMAGE_SIZE);
  // draw at native resolution then upscale without smoothing
  const off = new OffscreenCanvas(IMAGE_SIZE, IMAGE_SIZE);
  const octx = off.getContext("2d")!;
  octx.putImageData(image, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, size, size + PANEL_HEIGHT);
  ctx.drawImage(off, 0, 0, size, size);

  // wrench bars
  const labels = ["Fx", "Fy", "tau"];
  const half = size / 2 - 40;
  for (let i = 0; i < 3; i++) {
    const y = size + 14 + i * 18;
    ctx.fillStyle = "#888";
    ctx.font = "12px monospace";
    ctx.fillText(labels[i], 4, y + 4);
    ctx.strokeStyle = "#555";
    ctx.beginPath();
    ctx.moveTo(size / 2, y - 6);
    ctx.lineTo(size / 2, y + 6);
    ctx.stroke();
    const len = barLength(commanded[i], half);
    ctx.fillStyle = len >= 0 ? "#4caf50" : "#ef5350";
    ctx.fillRect(size / 2, y - 5, len, 10);
  }

  // pose readout
  const [x, y, th] = frame.pose;
  ctx.fillStyle = "#ccc";
  ctx.font = "12px monospace";
  ctx.fillText(
    `t=${frame.t}  x=${(x * 1000).toFixed(1)}mm  y=${(y * 1000).toFixed(1)}mm ` +
      `th=${((th * 180) / Math.PI).toFixed(1)}deg`,
    4,
    size + PANEL_HEIGHT - 6,
  );

  if (frame.inserted) {
    ctx.fillStyle = "rgba(40, 160, 70, 0.85)";
    ctx.fillRect(0, size / 2 - 24, size, 48);
    ctx.fillStyle = "#fff";
    ctx.font = "bold 20px sans-serif";
    ctx.textAlign = "center";
    ctx.fillText("INSERTED - press Enter to save", size / 2, size / 2 + 7);
    ctx.textAlign = "left";
  }
  return true;
}
