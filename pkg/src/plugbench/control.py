"""Wrench-error to velocity-command controller (diagonal proportional admittance).

The commanded velocity is u = clamp(G * (target - measured)) componentwise,
with per-axis gains G and symmetric velocity limits.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ControllerFault(ValueError):
    pass


@dataclass(frozen=True)
class ControllerGains:
    linear_gain: float = 0.005      # (m/s)/N, applied to Fx and Fy
    angular_gain: float = 0.05      # (rad/s)/(N.m)
    velocity_limit: tuple[float, float, float] = (0.05, 0.05, 0.5)

    def __post_init__(self):
        if self.linear_gain <= 0 or self.angular_gain <= 0:
            raise ValueError("controller gains must be > 0")
        if any(v <= 0 for v in self.velocity_limit):
            raise ValueError("velocity limits must be > 0")

    def gain_vector(self) -> np.ndarray:
        return np.array([self.linear_gain, self.linear_gain, self.angular_gain])


def control_output(gains: ControllerGains, target, measured) -> np.ndarray:
    """Map wrench error to a clamped velocity command."""
    target = np.asarray(target, dtype=np.float64)
    measured = np.asarray(measured, dtype=np.float64)
    if not (np.all(np.isfinite(target)) and np.all(np.isfinite(measured))):
        raise ControllerFault(
            f"non-finite wrench input: target={target}, measured={measured}")
    limit = np.asarray(gains.velocity_limit, dtype=np.float64)
    return np.clip(gains.gain_vector() * (target - measured), -limit, limit)
