"""Deterministic planar rigid contact world.

A rectangular plug, held at its rear-center grasp point by a
velocity-commanded virtual end-effector, interacts with a chamfered
socket cavity.  Contact is penalty-based (spring-damper normals with
regularized Coulomb friction); integration is semi-implicit at a fixed
substep rate beneath the 20 Hz control period.

Frames: world frame for integration; wrenches are reported in the
end-effector frame (rotated with the plug).  The socket frame has +x
along the insertion axis with the origin at the mouth center on the
front face of the block.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

# Wrench vectors are length-3 float arrays: (Fx [N], Fy [N], tau [N.m]).
D_ACTION = 3


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class ConnectorGeometry:
    id: str
    plug_width: float
    socket_width: float
    depth: float
    chamfer_depth: float
    chamfer_half_angle: float
    friction_mu: float
    contact_stiffness: float
    contact_damping: float

    def __post_init__(self):
        if not (self.socket_width > self.plug_width > 0):
            raise GeometryError(
                f"{self.id}: need socket_width > plug_width > 0, "
                f"got {self.socket_width} / {self.plug_width}")
        if self.depth <= 0:
            raise GeometryError(f"{self.id}: depth must be > 0")
        if self.chamfer_depth < 0:
            raise GeometryError(f"{self.id}: chamfer_depth must be >= 0")
        if not (0 <= self.friction_mu < 2):
            raise GeometryError(f"{self.id}: friction_mu must be in [0, 2)")
        if self.contact_stiffness <= 0:
            raise GeometryError(f"{self.id}: contact_stiffness must be > 0")

    @property
    def clearance(self) -> float:
        return self.socket_width - self.plug_width

    @property
    def mouth_half_width(self) -> float:
        return 0.5 * self.socket_width + self.chamfer_depth * math.tan(self.chamfer_half_angle)

    @property
    def cavity_depth(self) -> float:
        return self.chamfer_depth + self.depth

    @property
    def plug_length(self) -> float:
        # long enough that the grasp point stays outside the socket when inserted
        return self.cavity_depth + 0.010

    @classmethod
    def from_dict(cls, d: dict) -> "ConnectorGeometry":
        return cls(**{k: d[k] for k in (
            "id", "plug_width", "socket_width", "depth", "chamfer_depth",
            "chamfer_half_angle", "friction_mu", "contact_stiffness", "contact_damping")})

    def to_dict(self) -> dict:
        return {
            "id": self.id, "plug_width": self.plug_width,
            "socket_width": self.socket_width, "depth": self.depth,
            "chamfer_depth": self.chamfer_depth,
            "chamfer_half_angle": self.chamfer_half_angle,
            "friction_mu": self.friction_mu,
            "contact_stiffness": self.contact_stiffness,
            "contact_damping": self.contact_damping,
        }


def load_geometry(name_or_path: str) -> ConnectorGeometry:
    """Load a geometry JSON, either a bundled id (e.g. "cardoor") or a path."""
    if name_or_path.endswith(".json"):
        with open(name_or_path) as f:
            return ConnectorGeometry.from_dict(json.load(f))
    ref = resources.files("plugbench").joinpath(f"geometries/{name_or_path}.json")
    return ConnectorGeometry.from_dict(json.loads(ref.read_text()))


def bundled_geometry_ids() -> list[str]:
    ref = resources.files("plugbench").joinpath("geometries")
    return sorted(p.name[:-5] for p in ref.iterdir() if p.name.endswith(".json"))


def normalize_angle(theta: float) -> float:
    """Wrap into (-pi, pi]."""
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


@dataclass(frozen=True)
class PlanarPose:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "theta", normalize_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "PlanarPose":
        return cls(float(a[0]), float(a[1]), float(a[2]))


@dataclass(frozen=True)
class SimParams:
    control_dt: float = 0.05            # 20 Hz control period
    substeps: int = 10                  # 200 Hz internal rate
    tau_v: float = 0.05                 # command low-pass time constant [s]
    admittance_lin: float = 0.005       # (m/s)/N velocity response to contact
    admittance_ang: float = 0.5         # (rad/s)/(N.m)
    v_eps: float = 1e-3                 # friction regularization velocity [m/s]
    f_max: float = 30.0                 # per-contact normal force clamp [N]
    y_slack: float = 0.002              # insertion lateral bound headroom [m]
    theta_tol: float = 0.2              # insertion angular bound [rad]


DEFAULT_SIM_PARAMS = SimParams()


@dataclass
class WorldState:
    plug_pose: PlanarPose
    plug_velocity: tuple[float, float, float]
    socket_pose: PlanarPose
    step_index: int
    geometry: ConnectorGeometry
    params: SimParams = field(default_factory=SimParams)
    filtered_command: tuple[float, float, float] = (0.0, 0.0, 0.0)
    saturated: bool = False


def make_world(geometry: ConnectorGeometry, start_pose: PlanarPose,
               socket_pose: PlanarPose | None = None,
               params: SimParams | None = None) -> WorldState:
    return WorldState(
        plug_pose=start_pose,
        plug_velocity=(0.0, 0.0, 0.0),
        socket_pose=socket_pose or PlanarPose(0.0, 0.0, 0.0),
        step_index=0,
        geometry=geometry,
        params=params or SimParams(),
    )


# ---------------------------------------------------------------------------
# contact geometry
# ---------------------------------------------------------------------------

def _socket_features(geom: ConnectorGeometry, view_half: float):
    """One-sided surface segments (a, b, normal-into-free-space) and convex
    lip points of the socket, in the socket frame."""
    hw = 0.5 * geom.socket_width
    mh = geom.mouth_half_width
    cd = geom.chamfer_depth
    bd = geom.cavity_depth
    if cd > 0:
        dx, dy = cd, mh - hw
        ln = math.hypot(dx, dy)
        tx, ty = dx / ln, dy / ln
        cham_left = ((0.0, -mh), (cd, -hw), (-ty, tx))
        cham_right = ((0.0, mh), (cd, hw), (-ty, -tx))
        chamfers = [cham_left, cham_right]
    else:
        chamfers = []
    segments = [
        ((0.0, -view_half), (0.0, -mh), (-1.0, 0.0)),   # front face, left of mouth
        ((0.0, mh), (0.0, view_half), (-1.0, 0.0)),     # front face, right of mouth
        *chamfers,
        ((cd, -hw), (bd, -hw), (0.0, 1.0)),             # left wall
        ((cd, hw), (bd, hw), (0.0, -1.0)),              # right wall
        ((bd, -hw), (bd, hw), (-1.0, 0.0)),             # bottom
    ]
    lips = [(0.0, -mh), (0.0, mh), (cd, -hw), (cd, hw)]
    return segments, lips


_feature_cache: dict = {}


def _features(geom: ConnectorGeometry):
    key = (geom.id, geom.socket_width, geom.chamfer_depth, geom.chamfer_half_angle, geom.depth)
    feats = _feature_cache.get(key)
    if feats is None:
        feats = _socket_features(geom, view_half=0.5)
        _feature_cache[key] = feats
    return feats


@dataclass
class ContactDetails:
    force_world: tuple[float, float]
    torque: float
    contact_count: int
    saturated: bool


def _contact_details(state: WorldState) -> ContactDetails:
    """Penalty contact in the world frame; torque about the grasp point."""
    geom = state.geometry
    p = state.plug_pose
    s = state.socket_pose
    par = state.params
    kp = geom.contact_stiffness
    kd = geom.contact_damping
    mu = geom.friction_mu
    band = 0.5 * geom.plug_width
    vx, vy, om = state.plug_velocity

    cos_s, sin_s = math.cos(s.theta), math.sin(s.theta)
    cos_p, sin_p = math.cos(p.theta), math.sin(p.theta)
    hp = 0.5 * geom.plug_width
    pl = geom.plug_length

    # plug corners in world frame (grasp at pose origin, tip at +x of plug frame)
    def plug_pt(lx, ly):
        return (p.x + cos_p * lx - sin_p * ly, p.y + sin_p * lx + cos_p * ly)

    corners = [plug_pt(pl, -hp), plug_pt(pl, hp), plug_pt(0.0, -hp), plug_pt(0.0, hp)]

    segments, lips = _features(geom)

    def to_world_pt(q):
        return (s.x + cos_s * q[0] - sin_s * q[1], s.y + sin_s * q[0] + cos_s * q[1])

    def to_world_vec(v):
        return (cos_s * v[0] - sin_s * v[1], sin_s * v[0] + cos_s * v[1])

    fx = fy = tau = 0.0
    count = 0
    saturated = False

    def point_velocity(px, py):
        rx, ry = px - p.x, py - p.y
        return (vx - om * ry, vy + om * rx)

    def add_contact(px, py, nx, ny, depth, into_plug: bool):
        nonlocal fx, fy, tau, count, saturated
        vpx, vpy = point_velocity(px, py)
        vn = vpx * nx + vpy * ny
        ddot = vn if into_plug else -vn
        fn = kp * depth + kd * ddot
        if fn <= 0.0:
            return
        if fn > par.f_max:
            fn = par.f_max
        if depth > band:
            saturated = True
        sign = -1.0 if into_plug else 1.0
        cfx = sign * fn * nx
        cfy = sign * fn * ny
        # regularized Coulomb friction opposing tangential surface motion
        vtx = vpx - vn * nx
        vty = vpy - vn * ny
        vt = math.hypot(vtx, vty)
        if vt > 1e-12 and mu > 0.0:
            ft = mu * fn * math.tanh(vt / par.v_eps)
            cfx -= ft * vtx / vt
            cfy -= ft * vty / vt
        fx += cfx
        fy += cfy
        tau += (px - p.x) * cfy - (py - p.y) * cfx
        count += 1

    # plug corners vs socket surfaces
    for seg_a, seg_b, seg_n in segments:
        ax, ay = to_world_pt(seg_a)
        bx, by = to_world_pt(seg_b)
        nx, ny = to_world_vec(seg_n)
        ex, ey = bx - ax, by - ay
        elen2 = ex * ex + ey * ey
        for cxp, cyp in corners:
            depth = -((cxp - ax) * nx + (cyp - ay) * ny)
            if depth <= 0.0 or depth > band:
                continue
            t = ((cxp - ax) * ex + (cyp - ay) * ey) / elen2
            if t < 0.0 or t > 1.0:
                continue
            add_contact(cxp, cyp, nx, ny, depth, into_plug=False)

    # socket lip points vs plug faces (tip, left, right)
    faces = [
        ((pl, -hp), (pl, hp), (1.0, 0.0)),
        ((0.0, -hp), (pl, -hp), (0.0, -1.0)),
        ((0.0, hp), (pl, hp), (0.0, 1.0)),
    ]
    for face_a, face_b, face_n in faces:
        ax, ay = plug_pt(*face_a)
        bx, by = plug_pt(*face_b)
        nx = cos_p * face_n[0] - sin_p * face_n[1]
        ny = sin_p * face_n[0] + cos_p * face_n[1]
        ex, ey = bx - ax, by - ay
        elen2 = ex * ex + ey * ey
        for lip in lips:
            lx, ly = to_world_pt(lip)
            depth = -((lx - ax) * nx + (ly - ay) * ny)
            if depth <= 0.0 or depth > band:
                continue
            t = ((lx - ax) * ex + (ly - ay) * ey) / elen2
            if t < 0.0 or t > 1.0:
                continue
            add_contact(lx, ly, nx, ny, depth, into_plug=True)

    return ContactDetails((fx, fy), tau, count, saturated)


def contact_wrench(state: WorldState) -> np.ndarray:
    """Reaction wrench on the plug, expressed in the end-effector frame."""
    det = _contact_details(state)
    cos_p = math.cos(state.plug_pose.theta)
    sin_p = math.sin(state.plug_pose.theta)
    fx, fy = det.force_world
    return np.array([cos_p * fx + sin_p * fy,
                     -sin_p * fx + cos_p * fy,
                     det.torque], dtype=np.float64)


def sensed_wrench(state: WorldState) -> np.ndarray:
    """Wrench the plug exerts on the environment (flange sensor convention)."""
    return -contact_wrench(state)


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------

def step(state: WorldState, commanded_velocity, dt: float) -> WorldState:
    """Advance one substep of length dt.

    The commanded velocity is expressed in the end-effector frame, low-pass
    filtered, then combined with the admittance response to contact forces.
    Deterministic: identical inputs produce bit-identical output states.
    """
    par = state.params
    p = state.plug_pose
    cos_p, sin_p = math.cos(p.theta), math.sin(p.theta)
    ux, uy, uw = commanded_velocity
    # command in world frame
    cx = cos_p * ux - sin_p * uy
    cy = sin_p * ux + cos_p * uy
    fx_cmd, fy_cmd, fw_cmd = state.filtered_command
    if par.tau_v > 0.0:
        a = dt / par.tau_v
        fx_cmd += a * (cx - fx_cmd)
        fy_cmd += a * (cy - fy_cmd)
        fw_cmd += a * (uw - fw_cmd)
    else:
        fx_cmd, fy_cmd, fw_cmd = cx, cy, uw

    det = _contact_details(state)
    gx, gy = det.force_world
    vx = fx_cmd + par.admittance_lin * gx
    vy = fy_cmd + par.admittance_lin * gy
    om = fw_cmd + par.admittance_ang * det.torque

    new_pose = PlanarPose(p.x + dt * vx, p.y + dt * vy, p.theta + dt * om)
    return replace(
        state,
        plug_pose=new_pose,
        plug_velocity=(vx, vy, om),
        filtered_command=(fx_cmd, fy_cmd, fw_cmd),
        step_index=state.step_index + 1,
        saturated=state.saturated or det.saturated,
    )


def control_step(state: WorldState, commanded_velocity) -> WorldState:
    """Advance one full control period (params.substeps substeps)."""
    dt = state.params.control_dt / state.params.substeps
    for _ in range(state.params.substeps):
        state = step(state, commanded_velocity, dt)
    return state


# ---------------------------------------------------------------------------
# success criterion
# ---------------------------------------------------------------------------

def relative_pose(state: WorldState) -> PlanarPose:
    """Plug pose expressed in the socket frame."""
    s = state.socket_pose
    p = state.plug_pose
    cos_s, sin_s = math.cos(s.theta), math.sin(s.theta)
    dx, dy = p.x - s.x, p.y - s.y
    return PlanarPose(cos_s * dx + sin_s * dy,
                      -sin_s * dx + cos_s * dy,
                      p.theta - s.theta)


def goal_pose(geom: ConnectorGeometry) -> PlanarPose:
    """Fully inserted grasp-point pose in the socket frame."""
    return PlanarPose(geom.cavity_depth - geom.plug_length, 0.0, 0.0)


def insertion_depth(state: WorldState) -> float:
    """How far the plug tip has advanced past the start of the straight walls."""
    rel = relative_pose(state)
    tip_x = rel.x + state.geometry.plug_length * math.cos(rel.theta)
    return tip_x - state.geometry.chamfer_depth


def is_inserted(state: WorldState, d_tilde_fraction: float = 0.8) -> bool:
    """Success test: within d-tilde of the fully-inserted pose and aligned."""
    if not (0.0 < d_tilde_fraction <= 1.0):
        raise ValueError(f"d_tilde_fraction must be in (0, 1], got {d_tilde_fraction}")
    geom = state.geometry
    par = state.params
    rel = relative_pose(state)
    goal = goal_pose(geom)
    d_tilde = (1.0 - d_tilde_fraction) * geom.depth
    dist = math.hypot(rel.x - goal.x, rel.y - goal.y)
    if dist > d_tilde + 1e-12:
        return False
    if abs(rel.y) > 0.5 * geom.clearance + par.y_slack:
        return False
    if abs(normalize_angle(rel.theta)) > par.theta_tol:
        return False
    return True
