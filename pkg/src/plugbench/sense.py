"""Observation production: scene rasterization, wrench noise, normalization
statistics, and training-time photometric augmentation.

Grayscale images are plain (H, W) uint8 arrays.  Rendering uses flat
three-level shading: background 40, socket 150, plug 230; the plug
occludes the socket.  Pixel centers are classified analytically, so a
given world state always rasterizes to identical bytes.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .sim import ConnectorGeometry, WorldState

BACKGROUND = 40
SOCKET_SHADE = 150
PLUG_SHADE = 230

IMAGE_SIZE = 64

NOISE_SIGMA_FORCE = 0.05     # N
NOISE_SIGMA_TORQUE = 0.005   # N.m

WRENCH_COMPONENTS = ("Fx", "Fy", "tau")


@dataclass(frozen=True)
class CameraView:
    """Square view box, axis-aligned in the world frame."""
    center_x: float
    center_y: float
    half_extent: float
    width: int = IMAGE_SIZE
    height: int = IMAGE_SIZE

    def to_dict(self) -> dict:
        return {"center_x": self.center_x, "center_y": self.center_y,
                "half_extent": self.half_extent,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraView":
        return cls(d["center_x"], d["center_y"], d["half_extent"],
                   d.get("width", IMAGE_SIZE), d.get("height", IMAGE_SIZE))


def default_camera(geom: ConnectorGeometry) -> CameraView:
    """View box covering the socket plus the start-pose tolerance region."""
    span_left = geom.plug_length + 0.047
    span_right = geom.cavity_depth + 0.008
    half = round(0.55 * (span_left + span_right), 4)
    cx = round(0.5 * (span_right - span_left), 4)
    return CameraView(cx, 0.0, half)


def render(state: WorldState, camera: CameraView) -> np.ndarray:
    """Rasterize the scene to (H, W) uint8; row 0 is the top of the view."""
    geom = state.geometry
    w, h = camera.width, camera.height
    scale = 2.0 * camera.half_extent / w
    cols = camera.center_x + (np.arange(w) + 0.5 - 0.5 * w) * scale
    rows = camera.center_y + (0.5 * h - np.arange(h) - 0.5) * scale
    wx = np.broadcast_to(cols[None, :], (h, w))
    wy = np.broadcast_to(rows[:, None], (h, w))

    img = np.full((h, w), BACKGROUND, dtype=np.uint8)

    # socket block with the cavity carved out
    s = state.socket_pose
    cos_s, sin_s = math.cos(s.theta), math.sin(s.theta)
    sx = cos_s * (wx - s.x) + sin_s * (wy - s.y)
    sy = -sin_s * (wx - s.x) + cos_s * (wy - s.y)
    hw = 0.5 * geom.socket_width
    mh = geom.mouth_half_width
    cd = geom.chamfer_depth
    bd = geom.cavity_depth
    block = (sx >= 0.0) & (sx <= bd + 0.004)
    in_slot = (sx >= cd) & (sx <= bd) & (np.abs(sy) <= hw)
    if cd > 0:
        gap = mh + (hw - mh) * (sx / cd)
        in_chamfer = (sx >= 0.0) & (sx < cd) & (np.abs(sy) <= gap)
    else:
        in_chamfer = np.zeros_like(block)
    img[block & ~(in_slot | in_chamfer)] = SOCKET_SHADE

    # plug rectangle on top
    p = state.plug_pose
    cos_p, sin_p = math.cos(p.theta), math.sin(p.theta)
    px = cos_p * (wx - p.x) + sin_p * (wy - p.y)
    py = -sin_p * (wx - p.x) + cos_p * (wy - p.y)
    in_plug = (px >= 0.0) & (px <= geom.plug_length) & (np.abs(py) <= 0.5 * geom.plug_width)
    img[in_plug] = PLUG_SHADE
    return img


def measure_wrench(true_wrench, rng: np.random.Generator,
                   sigma_force: float = NOISE_SIGMA_FORCE,
                   sigma_torque: float = NOISE_SIGMA_TORQUE) -> np.ndarray:
    """Add independent Gaussian noise per component from the given stream."""
    true_wrench = np.asarray(true_wrench, dtype=np.float64)
    if sigma_force == 0.0 and sigma_torque == 0.0:
        return true_wrench.copy()
    sigma = np.array([sigma_force, sigma_force, sigma_torque])
    return true_wrench + sigma * rng.standard_normal(3)


class NormalizationError(ValueError):
    pass


@dataclass(frozen=True)
class NormStats:
    wrench_mean: np.ndarray
    wrench_std: np.ndarray
    action_scale: np.ndarray

    def fingerprint(self) -> str:
        payload = json.dumps({
            "mean": [float(v) for v in self.wrench_mean],
            "std": [float(v) for v in self.wrench_std],
            "scale": [float(v) for v in self.action_scale],
        }, sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return {"wrench_mean": [float(v) for v in self.wrench_mean],
                "wrench_std": [float(v) for v in self.wrench_std],
                "action_scale": [float(v) for v in self.action_scale],
                "fingerprint": self.fingerprint()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["wrench_mean"], dtype=np.float64),
                   np.asarray(d["wrench_std"], dtype=np.float64),
                   np.asarray(d["action_scale"], dtype=np.float64))

    def save(self, path: str) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path: str) -> "NormStats":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def fit_norm_stats(wrench_obs: np.ndarray, actions: np.ndarray) -> NormStats:
    """Fit z-normalization of wrench observations and the per-component
    action scale (max absolute demonstrated target wrench).

    Fit on the training split only.
    """
    wrench_obs = np.asarray(wrench_obs, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.float64)
    if wrench_obs.size == 0 or actions.size == 0:
        raise NormalizationError("cannot fit normalization stats on an empty dataset")
    mean = wrench_obs.mean(axis=0)
    std = wrench_obs.std(axis=0)
    for i, name in enumerate(WRENCH_COMPONENTS):
        if std[i] <= 0.0:
            raise NormalizationError(f"zero variance in wrench component {name}")
    scale = np.abs(actions).max(axis=0)
    for i, name in enumerate(WRENCH_COMPONENTS):
        if scale[i] <= 0.0:
            raise NormalizationError(f"zero action scale in component {name}")
    return NormStats(mean, std, scale)


def normalize_wrench(wrench, stats: NormStats) -> np.ndarray:
    return (np.asarray(wrench, dtype=np.float64) - stats.wrench_mean) / stats.wrench_std


def normalize_action(action, stats: NormStats) -> np.ndarray:
    return np.asarray(action, dtype=np.float64) / stats.action_scale


def denormalize_action(action, stats: NormStats) -> np.ndarray:
    return np.asarray(action, dtype=np.float64) * stats.action_scale


def augment(history: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Photometric augmentation for training.

    One brightness shift in [-0.2, 0.2] (as a fraction of the history mean)
    and one contrast scale in [1.0, 1.2] are drawn per history and applied
    identically to every frame; output clamped to [0, 255].
    """
    history = np.asarray(history, dtype=np.float32)
    shift = rng.uniform(-0.2, 0.2)
    contrast = rng.uniform(1.0, 1.2)
    return apply_photometric(history, shift, contrast)


def apply_photometric(history: np.ndarray, shift: float, contrast: float) -> np.ndarray:
    history = np.asarray(history, dtype=np.float32)
    m = history.mean()
    out = m + (history - m) * contrast + shift * m
    return np.clip(out, 0.0, 255.0)
