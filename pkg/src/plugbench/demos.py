"""Demonstration generation and storage.

The scripted oracle demonstrator stands in for a human teleoperator: it
has privileged access to the socket pose (the learned policy never sees
it) and combines an insertion push, proportional re-alignment, a
sinusoidal wiggle overlay, and jam recovery from the measured wrench.
Actions are normalized to [-1, 1]; a fixed per-component wrench scale
maps them to physical controller targets, mirroring a teleoperation
input device.

Demonstration files are little-endian binary:
  header: magic "PBDM" | version u32 | step count u32 | start pose 3xf32 |
          success u8
  step:   t u32 | w_meas 3xf32 | action 3xf32 | image u8 x (w*h)
"""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field
from collections import deque
from pathlib import Path

import numpy as np

from . import sense
from .control import ControllerGains, control_output
from .sim import (D_ACTION, ConnectorGeometry, PlanarPose, SimParams, WorldState,
                  control_step, is_inserted, load_geometry, make_world,
                  relative_pose, sensed_wrench)

DEMO_MAGIC = b"PBDM"
FORMAT_VERSION = 1
CONTROL_DT = 0.05
TIMEOUT_STEPS = 300

# fixed mapping from normalized teleop commands to physical target wrenches
DEFAULT_WRENCH_SCALE = (8.0, 8.0, 4.0)

# nominal distance from the plug tip to the socket mouth at episode start
START_STANDOFF = 0.033


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class ToleranceRegion:
    dx: float
    dy: float
    dtheta: float

    def __post_init__(self):
        if self.dx < 0 or self.dy < 0 or self.dtheta < 0:
            raise ValueError("tolerance half-ranges must be >= 0")

    def to_dict(self) -> dict:
        return {"dx": self.dx, "dy": self.dy, "dtheta": self.dtheta}

    @classmethod
    def from_dict(cls, d: dict) -> "ToleranceRegion":
        return cls(d["dx"], d["dy"], d["dtheta"])


def default_region(geom: ConnectorGeometry) -> ToleranceRegion:
    """Roughly half the connector width in translation, +-5 degrees."""
    half_range = round(0.25 * geom.plug_width, 4)
    return ToleranceRegion(half_range, half_range, math.radians(5.0))


@dataclass(frozen=True)
class StartPoseGrid:
    m_x: int
    m_y: int
    m_theta: int

    def __post_init__(self):
        if min(self.m_x, self.m_y, self.m_theta) < 1:
            raise ValueError("grid counts must be >= 1")

    @property
    def count(self) -> int:
        return self.m_x * self.m_y * self.m_theta

    def to_dict(self) -> dict:
        return {"m_x": self.m_x, "m_y": self.m_y, "m_theta": self.m_theta}

    @classmethod
    def from_dict(cls, d: dict) -> "StartPoseGrid":
        return cls(d["m_x"], d["m_y"], d["m_theta"])


def nominal_start(geom: ConnectorGeometry) -> PlanarPose:
    """Grasp-point pose (socket frame) placing the plug tip at the standoff."""
    return PlanarPose(-(geom.plug_length + START_STANDOFF), 0.0, 0.0)


def _axis(center: float, half: float, count: int) -> np.ndarray:
    if count == 1:
        return np.array([center])
    return np.linspace(center - half, center + half, count)


def _quantize(pose: PlanarPose) -> PlanarPose:
    return PlanarPose(float(np.float32(pose.x)), float(np.float32(pose.y)),
                      float(np.float32(pose.theta)))


def grid_poses(region: ToleranceRegion, grid: StartPoseGrid,
               geom: ConnectorGeometry, seed: int = 0) -> list[PlanarPose]:
    """Equidistant start positions over the region (endpoints included)
    paired with M equidistant rotations via an independent seeded permutation.

    Poses are quantized to float32 so stored headers reproduce them exactly.
    """
    base = nominal_start(geom)
    xs = _axis(base.x, region.dx, grid.m_x)
    ys = _axis(base.y, region.dy, grid.m_y)
    m = grid.count
    thetas = _axis(0.0, region.dtheta, m)
    perm = np.random.default_rng([seed, 0x9D1D]).permutation(m)
    poses = []
    slot = 0
    for x in xs:
        for y in ys:
            for _ in range(grid.m_theta):
                poses.append(_quantize(PlanarPose(float(x), float(y),
                                                  float(thetas[perm[slot]]))))
                slot += 1
    return poses


def random_poses(region: ToleranceRegion, geom: ConnectorGeometry, count: int,
                 seed: int) -> list[PlanarPose]:
    """Uniformly random start poses from the tolerance region."""
    base = nominal_start(geom)
    rng = np.random.default_rng([seed, 0x7A7A])
    poses = []
    for _ in range(count):
        poses.append(_quantize(PlanarPose(
            base.x + rng.uniform(-region.dx, region.dx),
            base.y + rng.uniform(-region.dy, region.dy),
            rng.uniform(-region.dtheta, region.dtheta))))
    return poses


# ---------------------------------------------------------------------------
# scripted oracle demonstrator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OracleParams:
    push_approach: float = 0.22      # normalized +x push before engagement
    push_insert: float = 0.65        # normalized +x push once at the mouth
    align_y_gain: float = 60.0       # 1/m
    align_theta_gain: float = 6.0    # 1/rad
    wiggle_amp_y: float = 0.3
    wiggle_amp_theta: float = 0.2
    wiggle_freq: float = 2.0         # Hz; period 10 steps at 20 Hz
    wiggle_phase_theta: float = math.pi / 2.0
    jam_force: float = 5.0           # N on the measured insertion axis
    jam_progress_min: float = 0.0002  # m over the jam window
    jam_window: int = 10             # control steps
    jam_lateral: float = 0.5         # normalized recovery amplitude


class OracleDemonstrator:
    """Scripted stand-in for the human operator (privileged socket pose)."""

    def __init__(self, geom: ConnectorGeometry, params: OracleParams | None = None,
                 phase_offset: float = 0.0, dt: float = CONTROL_DT):
        self.geom = geom
        self.params = params or OracleParams()
        self.phase_offset = phase_offset
        self.dt = dt
        self._progress: deque[float] = deque(maxlen=(params or OracleParams()).jam_window + 1)
        self._engaged = False

    def reset(self) -> None:
        self._progress.clear()
        self._engaged = False

    def action(self, state: WorldState, t: int, w_meas: np.ndarray) -> np.ndarray:
        par = self.params
        rel = relative_pose(state)
        tip_x = rel.x + self.geom.plug_length * math.cos(rel.theta)
        self._progress.append(tip_x)
        if tip_x > -0.002:
            self._engaged = True

        phase = 2.0 * math.pi * par.wiggle_freq * t * self.dt + self.phase_offset
        push = par.push_insert if self._engaged else par.push_approach
        a_x = push
        a_y = -par.align_y_gain * rel.y + par.wiggle_amp_y * math.sin(phase)
        a_t = (-par.align_theta_gain * rel.theta
               + par.wiggle_amp_theta * math.sin(phase + par.wiggle_phase_theta))

        jammed = (abs(w_meas[0]) > par.jam_force
                  and len(self._progress) > par.jam_window
                  and self._progress[-1] - self._progress[0] < par.jam_progress_min)
        if jammed and w_meas[1] != 0.0:
            a_y += -math.copysign(par.jam_lateral, w_meas[1])

        # express the force components in the end-effector frame
        ang = state.socket_pose.theta - state.plug_pose.theta
        cos_a, sin_a = math.cos(ang), math.sin(ang)
        fx = cos_a * a_x - sin_a * a_y
        fy = sin_a * a_x + cos_a * a_y
        return np.clip(np.array([fx, fy, a_t]), -1.0, 1.0)


# ---------------------------------------------------------------------------
# demonstration records and binary format
# ---------------------------------------------------------------------------

@dataclass
class Demonstration:
    geometry_id: str
    start_pose: PlanarPose
    dt: float
    w_meas: np.ndarray      # (T, 3) float32
    actions: np.ndarray     # (T, 3) float32, normalized teleop commands
    images: np.ndarray      # (T, H, W) uint8
    success: bool

    @property
    def length(self) -> int:
        return len(self.actions)


def write_demo(path: str, demo: Demonstration) -> None:
    t_count = demo.length
    parts = [DEMO_MAGIC, struct.pack("<II", FORMAT_VERSION, t_count),
             struct.pack("<3f", demo.start_pose.x, demo.start_pose.y,
                         demo.start_pose.theta),
             struct.pack("<B", 1 if demo.success else 0)]
    w = np.ascontiguousarray(demo.w_meas, dtype="<f4")
    a = np.ascontiguousarray(demo.actions, dtype="<f4")
    imgs = np.ascontiguousarray(demo.images, dtype=np.uint8)
    for t in range(t_count):
        parts.append(struct.pack("<I", t))
        parts.append(w[t].tobytes())
        parts.append(a[t].tobytes())
        parts.append(imgs[t].tobytes())
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(b"".join(parts))
    os.replace(tmp, path)


def read_demo(path: str, geometry_id: str = "", image_size: int = 64,
              dt: float = CONTROL_DT, d_action: int = D_ACTION) -> Demonstration:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != DEMO_MAGIC:
        raise DatasetError(f"{path}: bad magic {blob[:4]!r}")
    version, t_count = struct.unpack_from("<II", blob, 4)
    if version != FORMAT_VERSION:
        raise DatasetError(f"{path}: unsupported version {version}")
    sx, sy, st = struct.unpack_from("<3f", blob, 12)
    (succ,) = struct.unpack_from("<B", blob, 24)
    off = 25
    px = image_size * image_size
    vec = 4 * d_action
    step_bytes = 4 + 2 * vec + px
    if len(blob) != off + t_count * step_bytes:
        raise DatasetError(f"{path}: truncated ({len(blob)} bytes for {t_count} steps)")
    w = np.empty((t_count, d_action), dtype=np.float32)
    a = np.empty((t_count, d_action), dtype=np.float32)
    imgs = np.empty((t_count, image_size, image_size), dtype=np.uint8)
    for t in range(t_count):
        (tt,) = struct.unpack_from("<I", blob, off)
        if tt != t:
            raise DatasetError(f"{path}: step index {tt} != {t}")
        off += 4
        w[t] = np.frombuffer(blob, dtype="<f4", count=d_action, offset=off)
        off += vec
        a[t] = np.frombuffer(blob, dtype="<f4", count=d_action, offset=off)
        off += vec
        imgs[t] = np.frombuffer(blob, dtype=np.uint8, count=px,
                                offset=off).reshape(image_size, image_size)
        off += px
    return Demonstration(geometry_id, PlanarPose(sx, sy, st), dt, w, a, imgs,
                         bool(succ))


# ---------------------------------------------------------------------------
# recording
# ---------------------------------------------------------------------------

@dataclass
class RecordSetup:
    geometry: ConnectorGeometry
    camera: sense.CameraView
    gains: ControllerGains = field(default_factory=ControllerGains)
    sim_params: SimParams = field(default_factory=SimParams)
    wrench_scale: tuple[float, float, float] = DEFAULT_WRENCH_SCALE
    oracle_params: OracleParams = field(default_factory=OracleParams)
    noise_sigma_force: float = sense.NOISE_SIGMA_FORCE
    noise_sigma_torque: float = sense.NOISE_SIGMA_TORQUE
    timeout: int = TIMEOUT_STEPS
    d_tilde_fraction: float = 0.8


def default_setup(geom: ConnectorGeometry) -> RecordSetup:
    return RecordSetup(geometry=geom, camera=sense.default_camera(geom))


def _run_episode(setup: RecordSetup, start_pose: PlanarPose, seed: int,
                 attempt: int) -> Demonstration:
    rng = np.random.default_rng([seed, attempt, 0x5EED])
    phase = 0.0 if attempt == 0 else float(np.pi / 3.0)
    oracle = OracleDemonstrator(setup.geometry, setup.oracle_params,
                                phase_offset=phase)
    # float32 start pose: episodes replay exactly from the stored header
    start_pose = _quantize(start_pose)
    world = make_world(setup.geometry, start_pose, params=setup.sim_params)
    scale = np.asarray(setup.wrench_scale, dtype=np.float64)
    w_list, a_list, img_list = [], [], []
    success = False
    for t in range(setup.timeout):
        w_true = sensed_wrench(world)
        w_meas = sense.measure_wrench(
            w_true, rng, setup.noise_sigma_force,
            setup.noise_sigma_torque).astype(np.float32)
        img = sense.render(world, setup.camera)
        action = oracle.action(world, t, w_meas).astype(np.float32)
        target = action.astype(np.float64) * scale
        u = control_output(setup.gains, target, w_meas.astype(np.float64))
        world = control_step(world, tuple(u))
        w_list.append(w_meas)
        a_list.append(action)
        img_list.append(img)
        if is_inserted(world, setup.d_tilde_fraction):
            success = True
            break
    return Demonstration(setup.geometry.id, start_pose, setup.sim_params.control_dt,
                         np.array(w_list), np.array(a_list), np.array(img_list),
                         success)


def record_demo(setup: RecordSetup, start_pose: PlanarPose, seed: int) -> Demonstration:
    """Run the 20 Hz demonstration loop; retry once with a perturbed wiggle
    phase on failure.  The returned demonstration may still be unsuccessful;
    callers store successful episodes only."""
    demo = _run_episode(setup, start_pose, seed, attempt=0)
    if not demo.success:
        demo = _run_episode(setup, start_pose, seed, attempt=1)
    return demo


def replay_demo(setup: RecordSetup, demo: Demonstration) -> tuple[PlanarPose, bool]:
    """Re-drive the simulator with a demonstration's stored measured wrenches
    and actions; returns the final plug pose and insertion flag.  Because the
    stored float32 streams are exactly what the session's controller saw,
    replay reproduces the original trajectory bit-for-bit."""
    world = make_world(setup.geometry, demo.start_pose, params=setup.sim_params)
    scale = np.asarray(setup.wrench_scale, dtype=np.float64)
    for t in range(demo.length):
        target = demo.actions[t].astype(np.float64) * scale
        u = control_output(setup.gains, target, demo.w_meas[t].astype(np.float64))
        world = control_step(world, tuple(u))
    return world.plug_pose, is_inserted(world, setup.d_tilde_fraction)


# ---------------------------------------------------------------------------
# dataset directory
# ---------------------------------------------------------------------------

@dataclass
class Dataset:
    root: Path
    manifest: dict
    train_demos: list[Demonstration]
    val_demos: list[Demonstration]

    @property
    def geometry(self) -> ConnectorGeometry:
        return ConnectorGeometry.from_dict(self.manifest["geometry"])

    @property
    def camera(self) -> sense.CameraView:
        return sense.CameraView.from_dict(self.manifest["camera"])

    @property
    def wrench_scale(self) -> np.ndarray:
        return np.asarray(self.manifest["wrench_scale"], dtype=np.float64)


def physical_actions(demos: list[Demonstration], wrench_scale) -> np.ndarray:
    """Stack all demonstrated target wrenches in physical units."""
    scale = np.asarray(wrench_scale, dtype=np.float64)
    return np.concatenate([d.actions.astype(np.float64) * scale for d in demos])


def fit_dataset_stats(demos: list[Demonstration], wrench_scale) -> sense.NormStats:
    wr = np.concatenate([d.w_meas.astype(np.float64) for d in demos])
    return sense.fit_norm_stats(wr, physical_actions(demos, wrench_scale))


def generate_dataset(out_dir: str, geom: ConnectorGeometry,
                     region: ToleranceRegion, grid: StartPoseGrid,
                     seed: int = 0, val_count: int = 30,
                     setup: RecordSetup | None = None,
                     source: str = "oracle",
                     progress=None) -> "Dataset":
    """Record grid demonstrations (training pool) plus uniformly random
    validation demonstrations; write the bundle and its manifest."""
    setup = setup or default_setup(geom)
    root = Path(out_dir)
    (root / "demos").mkdir(parents=True, exist_ok=True)

    train_poses = grid_poses(region, grid, geom, seed=seed)
    val_poses = random_poses(region, geom, val_count, seed=seed + 1)

    train_files, val_files, failures = [], [], 0
    train_demos, val_demos = [], []
    index = 0
    for kind, poses in (("train", train_poses), ("val", val_poses)):
        for i, pose in enumerate(poses):
            demo = record_demo(setup, pose, seed=seed * 100003 + index)
            index += 1
            if not demo.success:
                failures += 1
                continue
            name = f"demos/demo_{len(train_files) + len(val_files):04d}.bin"
            write_demo(str(root / name), demo)
            if kind == "train":
                train_files.append(name)
                train_demos.append(demo)
            else:
                val_files.append(name)
                val_demos.append(demo)
            if progress is not None:
                progress(kind, i, len(poses))

    manifest = {
        "format_version": FORMAT_VERSION,
        "geometry_id": geom.id,
        "geometry": geom.to_dict(),
        "dt": setup.sim_params.control_dt,
        "d_action": 3,
        "image_width": setup.camera.width,
        "image_height": setup.camera.height,
        "demo_count": len(train_files) + len(val_files),
        "train_count": len(train_files),
        "val_count": len(val_files),
        "failures": failures,
        "seeds": {"dataset": seed, "validation": seed + 1},
        "source": source,
        "wrench_scale": list(setup.wrench_scale),
        "camera": setup.camera.to_dict(),
        "region": region.to_dict(),
        "grid": grid.to_dict(),
        "train_files": train_files,
        "val_files": val_files,
    }
    with open(root / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")

    if train_demos:
        stats = fit_dataset_stats(train_demos, setup.wrench_scale)
        stats.save(str(root / "stats.json"))

    return Dataset(root, manifest, train_demos, val_demos)


def load_dataset(path: str) -> Dataset:
    root = Path(path)
    with open(root / "manifest.json") as f:
        manifest = json.load(f)
    size = manifest["image_width"]
    gid = manifest["geometry_id"]
    dt = manifest["dt"]
    d_act = manifest.get("d_action", D_ACTION)
    train = [read_demo(str(root / name), gid, size, dt, d_act)
             for name in manifest["train_files"]]
    val = [read_demo(str(root / name), gid, size, dt, d_act)
           for name in manifest["val_files"]]
    return Dataset(root, manifest, train, val)


def split_dataset(dataset: Dataset, n_val: int, seed: int
                  ) -> tuple[list[Demonstration], list[Demonstration]]:
    """Training demos come from the grid; validation demos are a seeded
    sample of the random-pose pool (never grid poses)."""
    pool = dataset.val_demos
    if n_val > len(pool):
        raise DatasetError(
            f"requested {n_val} validation demos, only {len(pool)} available")
    if n_val == 0:
        return list(dataset.train_demos), []
    rng = np.random.default_rng([seed, 0x5917])
    idx = sorted(rng.choice(len(pool), size=n_val, replace=False).tolist())
    return list(dataset.train_demos), [pool[i] for i in idx]
