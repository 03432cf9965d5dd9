/**
 * Entry point: wires the WebSocket, keyboard/pointer input, the 20 Hz input
 * loop, and the canvas. Configuration via URL query: ?port=8763&geometry=cardoor
 */
import { TICK_MS, TeleopClient } from "./client.js";
import { InputMap, KEY_HELP } from "./input.js";
import { IMAGE_SIZE } from "./protocol.js";
import { PANEL_HEIGHT, SCALE, renderFrame } from "./render.js";

const params = new URLSearchParams(window.location.search);
const port = params.get("port") ?? "8763";
const geometry = params.get("geometry") ?? "cardoor";
const seed = Number(params.get("seed") ?? "0");

const canvas = document.getElementById("view") as HTMLCanvasElement;
canvas.width = IMAGE_SIZE * SCALE;
canvas.height = IMAGE_SIZE * SCALE + PANEL_HEIGHT;
const ctx = canvas.getContext("2d")!;
const status = document.getElementById("status")!;
const banner = document.getElementById("banner")!;
const help = document.getElementById("help")!;
help.textContent = KEY_HELP;

const input = new InputMap();
let client: TeleopClient | null = null;
let inputTimer: number | null = null;
let demoCount = 0;

function setStatus(text: string, bad = false): void {
  status.textContent = text;
  status.className = bad ? "bad" : "";
}

function showBanner(text: string): void {
  banner.textContent = text;
  banner.style.display = text ? "block" : "none";
}

function connect(): void {
  const ws = new WebSocket(`ws://${window.location.hostname || "127.0.0.1"}:${port}/session`);
  setStatus(`connecting to :${port} ...`);

  ws.onopen = () => {
    setStatus(`connected  geometry=${geometry}  demos saved: ${demoCount}`);
    client = new TeleopClient(
      { send: (d) => ws.send(d), close: () => ws.close() },
      {
        onState: (frame) => {
          if (!renderFrame(ctx, frame, input.wrench())) {
            showBanner("image decode failure");
          }
        },
        onSaved: (path) => {
          demoCount += 1;
          setStatus(`saved ${path}  demos saved: ${demoCount}`);
          client?.requestReset();
        },
        onError: (frame) => showBanner(`server error: ${frame.code}`),
        onDecodeFailure: (detail) => showBanner(detail),
      },
    );
    client.start(geometry, seed);
    if (inputTimer !== null) window.clearInterval(inputTimer);
    inputTimer = window.setInterval(() => {
      client?.tickInput(input.wrench());
    }, TICK_MS);
  };

  ws.onclose = () => {
    if (inputTimer !== null) window.clearInterval(inputTimer);
    inputTimer = null;
    client = null;
    input.releaseAll();
    setStatus("disconnected - reconnecting in 1s ...", true);
    window.setTimeout(connect, 1000);
  };

  ws.onmessage = (event) => {
    showBanner("");
    client?.handleMessage(String(event.data));
  };
}

window.addEventListener("keydown", (e) => {
  if (e.code === "Enter") {
    if (client && !client.requestSave()) showBanner("not inserted yet");
    e.preventDefault();
    return;
  }
  if (e.code === "KeyR") {
    client?.requestReset();
    e.preventDefault();
    return;
  }
  if (input.keyDown(e.code)) e.preventDefault();
});

window.addEventListener("keyup", (e) => input.keyUp(e.code));
window.addEventListener("blur", () => input.releaseAll());

let dragStart: [number, number] | null = null;
canvas.addEventListener("pointerdown", (e) => {
  dragStart = [e.clientX, e.clientY];
  canvas.setPointerCapture(e.pointerId);
});
canvas.addEventListener("pointermove", (e) => {
  if (dragStart) input.setPointerDrag(e.clientX - dragStart[0], e.clientY - dragStart[1]);
});
canvas.addEventListener("pointerup", () => {
  dragStart = null;
  input.clearPointer();
});

connect();
