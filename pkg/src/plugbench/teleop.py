"""Real-time teleoperation session server.

Exposes the simulator over a WebSocket endpoint (/session) so a human
(or a scripted client) can demonstrate insertions at 20 Hz.  Recorded
sessions are written in the standard demonstration format; a manifest
marks them source "human".

Wire protocol (JSON text frames):
  client -> server:
    {"type":"start","geometry":"connA","seed":7}
    {"type":"input","wrench":[fx,fy,tau]}     components in [-1,1]
    {"type":"reset"}
    {"type":"save"}
  server -> client:
    {"type":"state","t":n,"pose":[x,y,th],"wrench":[fx,fy,tau],
     "inserted":b,"image":"<base64 raw u8 64x64>"}
    {"type":"saved","path":p}
    {"type":"error","code":c,"detail":d}

The state frame's wrench echoes the clamped input currently applied.
The tick loop never blocks on network sends: frames to slow clients are
replaced, not queued.
"""
from __future__ import annotations

import asyncio
import base64
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import websockets

from . import sense
from .control import control_output
from .demos import (FORMAT_VERSION, Demonstration,
                    RecordSetup, ToleranceRegion, default_region,
                    default_setup, nominal_start, write_demo)
from .sim import PlanarPose, control_step, is_inserted, load_geometry, make_world

log = logging.getLogger(__name__)

DEFAULT_PORT = 8763
TICK_DT = 0.05


class Session:
    """One teleoperation session: a world, an in-progress recording, and the
    latest held input (zero-order hold between ticks)."""

    def __init__(self, out_dir: str, session_id: str):
        self.out_dir = Path(out_dir)
        self.session_id = session_id
        self.setup: RecordSetup | None = None
        self.region: ToleranceRegion | None = None
        self.world = None
        self.rng = None
        self.pose_rng = None
        self.last_input = np.zeros(3, dtype=np.float32)
        self.tick_index = 0
        self.start_pose: PlanarPose | None = None
        self.w_meas: list[np.ndarray] = []
        self.actions: list[np.ndarray] = []
        self.images: list[np.ndarray] = []
        self.inserted = False
        self.save_count = 0

    def start(self, geometry_id: str, seed: int) -> None:
        geom = load_geometry(geometry_id)
        # interactive sessions sense noise-free: a zero input holds still in
        # free space, and the stored wrench stream replays bit-exactly
        self.setup = dataclasses.replace(default_setup(geom),
                                         noise_sigma_force=0.0,
                                         noise_sigma_torque=0.0)
        self.region = default_region(geom)
        self.rng = np.random.default_rng([seed, 0x7E1E])
        self.pose_rng = np.random.default_rng([seed, 0x90CE])
        self._respawn()

    def _respawn(self) -> None:
        base = nominal_start(self.setup.geometry)
        r = self.region
        pose = PlanarPose(
            float(np.float32(base.x + self.pose_rng.uniform(-r.dx, r.dx))),
            float(np.float32(base.y + self.pose_rng.uniform(-r.dy, r.dy))),
            float(np.float32(self.pose_rng.uniform(-r.dtheta, r.dtheta))))
        self.start_pose = pose
        self.world = make_world(self.setup.geometry, pose,
                                params=self.setup.sim_params)
        self.last_input = np.zeros(3, dtype=np.float32)
        self.tick_index = 0
        self.w_meas, self.actions, self.images = [], [], []
        self.inserted = False

    def set_input(self, wrench) -> np.ndarray:
        arr = np.clip(np.asarray(wrench, dtype=np.float32), -1.0, 1.0)
        self.last_input = arr.astype(np.float32)
        return self.last_input

    def tick(self) -> dict:
        """Advance one 20 Hz step; returns the state frame."""
        from .sim import sensed_wrench
        setup = self.setup
        w_true = sensed_wrench(self.world)
        w_meas = sense.measure_wrench(
            w_true, self.rng, setup.noise_sigma_force,
            setup.noise_sigma_torque).astype(np.float32)
        img = sense.render(self.world, setup.camera)
        action = self.last_input.copy()
        target = action.astype(np.float64) * np.asarray(setup.wrench_scale)
        u = control_output(setup.gains, target, w_meas.astype(np.float64))
        self.world = control_step(self.world, tuple(u))
        self.w_meas.append(w_meas)
        self.actions.append(action)
        self.images.append(img)
        self.inserted = is_inserted(self.world, setup.d_tilde_fraction)
        frame = {
            "type": "state",
            "t": self.tick_index,
            "pose": [self.world.plug_pose.x, self.world.plug_pose.y,
                     self.world.plug_pose.theta],
            "wrench": [float(v) for v in action],
            "inserted": self.inserted,
            "image": base64.b64encode(img.tobytes()).decode("ascii"),
        }
        self.tick_index += 1
        return frame

    def save(self) -> str:
        if not self.inserted:
            raise ValueError("not_inserted")
        demo = Demonstration(
            self.setup.geometry.id, self.start_pose,
            self.setup.sim_params.control_dt,
            np.array(self.w_meas), np.array(self.actions),
            np.array(self.images), True)
        (self.out_dir / "demos").mkdir(parents=True, exist_ok=True)
        name = f"demos/human_{self.session_id}_{self.save_count:03d}.bin"
        path = self.out_dir / name
        write_demo(str(path), demo)
        self.save_count += 1
        self._update_manifest(name)
        return str(path)

    def _update_manifest(self, new_file: str) -> None:
        manifest_path = self.out_dir / "manifest.json"
        if manifest_path.exists():
            manifest = json.loads(manifest_path.read_text())
        else:
            setup = self.setup
            manifest = {
                "format_version": FORMAT_VERSION,
                "geometry_id": setup.geometry.id,
                "geometry": setup.geometry.to_dict(),
                "dt": setup.sim_params.control_dt,
                "d_action": 3,
                "image_width": setup.camera.width,
                "image_height": setup.camera.height,
                "source": "human",
                "wrench_scale": list(setup.wrench_scale),
                "camera": setup.camera.to_dict(),
                "region": self.region.to_dict(),
                "seeds": {},
                "train_files": [],
                "val_files": [],
            }
        manifest["train_files"].append(new_file)
        manifest["demo_count"] = len(manifest["train_files"])
        manifest["train_count"] = len(manifest["train_files"])
        manifest["val_count"] = 0
        with open(manifest_path, "w") as f:
            json.dump(manifest, f, indent=2, sort_keys=True)
            f.write("\n")


def _error(code: str, detail: str = "") -> str:
    return json.dumps({"type": "error", "code": code, "detail": detail})


async def _session_handler(ws, out_dir: str):
    session = Session(out_dir, session_id=f"{id(ws) & 0xFFFF:04x}")
    latest: dict[str, str] = {}
    fresh = asyncio.Event()
    stop = asyncio.Event()

    async def sender():
        while not stop.is_set():
            await fresh.wait()
            fresh.clear()
            frame = latest.get("frame")
            if frame:
                await ws.send(frame)

    async def ticker():
        t_next = time.monotonic() + TICK_DT
        while not stop.is_set():
            await asyncio.sleep(max(0.0, t_next - time.monotonic()))
            t_next += TICK_DT
            if session.world is not None:
                frame = session.tick()
                latest["frame"] = json.dumps(frame)
                fresh.set()

    sender_task = asyncio.create_task(sender())
    ticker_task = asyncio.create_task(ticker())
    try:
        async for raw in ws:
            try:
                msg = json.loads(raw)
            except (json.JSONDecodeError, UnicodeDecodeError):
                await ws.send(_error("bad_json", "message is not valid JSON"))
                continue
            mtype = msg.get("type")
            if mtype == "start":
                try:
                    session.start(str(msg.get("geometry", "cardoor")),
                                  int(msg.get("seed", 0)))
                except Exception as e:
                    await ws.send(_error("bad_start", str(e)))
            elif mtype == "input":
                if session.world is None:
                    await ws.send(_error("not_started", "send start first"))
                    continue
                wrench = msg.get("wrench")
                if (not isinstance(wrench, (list, tuple)) or len(wrench) != 3
                        or not all(isinstance(v, (int, float)) for v in wrench)):
                    await ws.send(_error("bad_input", "wrench must be [fx,fy,tau]"))
                    continue
                session.set_input(wrench)
            elif mtype == "reset":
                if session.world is None:
                    await ws.send(_error("not_started", "send start first"))
                else:
                    session._respawn()
            elif mtype == "save":
                if session.world is None:
                    await ws.send(_error("not_started", "send start first"))
                    continue
                try:
                    path = session.save()
                    await ws.send(json.dumps({"type": "saved", "path": path}))
                except ValueError as e:
                    await ws.send(_error(str(e), "insertion not reached"))
            else:
                await ws.send(_error("unknown_type", f"type={mtype!r}"))
    except websockets.ConnectionClosed:
        pass
    finally:
        stop.set()
        fresh.set()
        sender_task.cancel()
        ticker_task.cancel()


async def serve(port: int = DEFAULT_PORT, out_dir: str = "teleop_data",
                host: str = "127.0.0.1", ready: asyncio.Event | None = None):
    async def handler(ws):
        await _session_handler(ws, out_dir)

    async with websockets.serve(handler, host, port):
        log.info("teleop server on ws://%s:%d/session", host, port)
        if ready is not None:
            ready.set()
        await asyncio.Future()


# ---------------------------------------------------------------------------
# scripted conformance client
# ---------------------------------------------------------------------------

@dataclass
class ClientReport:
    inserted: bool
    saved_path: str
    inputs_sent: int
    mean_latency: float
    max_latency: float
    error_codes: list[str] = field(default_factory=list)


async def run_headless_client(port: int, geometry: str = "cardoor",
                              seed: int = 7, max_inputs: int = 200,
                              host: str = "127.0.0.1",
                              send_period: float = 0.0476) -> ClientReport:
    """Scripted client: starts a session, drives the plug in from the
    streamed pose (the fixture frame is the world origin, as for a human
    watching the scene), saves on insertion, and measures latency.

    Latency is input-to-reflection: the time from sending an input until a
    state frame arrives whose echoed wrench equals that input.  The client
    runs its own ~21 Hz send clock so its phase sweeps the server's tick.
    """
    uri = f"ws://{host}:{port}/session"
    latencies: list[float] = []
    errors: list[str] = []
    state = {"pose": None, "inserted": False, "saved": "", "t": -1}
    pending: dict[tuple, float] = {}
    inputs = 0

    async with websockets.connect(uri) as ws:
        await ws.send(json.dumps({"type": "start", "geometry": geometry,
                                  "seed": seed}))
        # malformed probes: must produce error frames without killing the session
        await ws.send("this is not json")
        await ws.send(json.dumps({"type": "bogus"}))
        await ws.send(json.dumps({"type": "save"}))  # premature: not_inserted

        async def receiver():
            async for raw in ws:
                frame = json.loads(raw)
                ftype = frame.get("type")
                if ftype == "error":
                    errors.append(frame["code"])
                elif ftype == "saved":
                    state["saved"] = frame["path"]
                elif ftype == "state":
                    if frame["t"] <= state["t"]:
                        continue
                    state["t"] = frame["t"]
                    state["pose"] = frame["pose"]
                    state["inserted"] = frame["inserted"]
                    key = tuple(round(v, 6) for v in frame["wrench"])
                    sent_at = pending.pop(key, None)
                    if sent_at is not None:
                        latencies.append(time.monotonic() - sent_at)
                if state["inserted"] and not state["saved"]:
                    await ws.send(json.dumps({"type": "save"}))
                if state["saved"]:
                    return

        recv_task = asyncio.create_task(receiver())
        t = 0
        while inputs < max_inputs and not state["inserted"]:
            await asyncio.sleep(send_period)
            if state["pose"] is None:
                continue
            x, y, th = state["pose"]
            phase = 2.0 * math.pi * 2.0 * t * TICK_DT
            dither = 1e-5 * ((t % 89) - 44)  # uniquifies the echo pairing
            cmd = [0.6,
                   max(-1.0, min(1.0, -60.0 * y + 0.25 * math.sin(phase))),
                   max(-0.999, min(0.999, -6.0 * th + dither))]
            await ws.send(json.dumps({"type": "input", "wrench": cmd}))
            key = tuple(round(float(np.float32(v)), 6) for v in cmd)
            pending[key] = time.monotonic()
            inputs += 1
            t += 1
        try:
            await asyncio.wait_for(recv_task, timeout=3.0)
        except asyncio.TimeoutError:
            recv_task.cancel()

    return ClientReport(state["inserted"], state["saved"], inputs,
                        float(np.mean(latencies)) if latencies else float("nan"),
                        float(np.max(latencies)) if latencies else float("nan"),
                        errors)
