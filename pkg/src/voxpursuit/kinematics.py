"""Body-frame agent kinematics: control clamping, integration, capture test.

Pursuers are clamped per axis (|vx| <= 8, |vy| <= 4, |vz| <= 3 m/s by
default); the evader carries a scalar speed cap instead. Yaw is kept wrapped
to (-pi, pi].
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

PURSUER = "pursuer"
EVADER = "evader"

DT_DEFAULT = 0.1  # s per step; max pursuer step displacement ~0.94 m << voxel 6 m


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = a % (2.0 * math.pi)
    return w - 2.0 * math.pi if w > math.pi else w


def rot_z(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class ControlCommand:
    """Requested body-frame velocity and yaw rate."""

    vx: float
    vy: float
    vz: float
    yaw_rate: float

    def as_array(self) -> np.ndarray:
        return np.array([self.vx, self.vy, self.vz, self.yaw_rate])

    @classmethod
    def zero(cls) -> "ControlCommand":
        return cls(0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class ControlLimits:
    """Actuation envelope. speed_cap switches clamping to the evader rule:
    the velocity vector is rescaled to the cap instead of per-axis clipping."""

    vx_max: float = 8.0
    vy_max: float = 4.0
    vz_max: float = 3.0
    yaw_rate_max: float = 0.8
    speed_cap: Optional[float] = None

    def __post_init__(self):
        if min(self.vx_max, self.vy_max, self.vz_max, self.yaw_rate_max) <= 0:
            raise ValueError("control limits must be strictly positive")
        if self.speed_cap is not None and self.speed_cap <= 0:
            raise ValueError("speed_cap must be strictly positive")

    @classmethod
    def pursuer_default(cls, yaw_rate_max: float = 0.8) -> "ControlLimits":
        return cls(8.0, 4.0, 3.0, yaw_rate_max, None)

    @classmethod
    def evader(cls, speed_cap: float, yaw_rate_max: float = 1.0) -> "ControlLimits":
        return cls(speed_cap, speed_cap, speed_cap, yaw_rate_max, speed_cap)


@dataclass
class AgentState:
    """Pose and applied velocity of one agent."""

    position: np.ndarray
    yaw: float
    body_velocity: np.ndarray
    yaw_rate: float = 0.0
    alive: bool = True
    role: str = PURSUER

    def copy(self) -> "AgentState":
        return AgentState(self.position.copy(), self.yaw,
                          self.body_velocity.copy(), self.yaw_rate,
                          self.alive, self.role)


def clamp_control(cmd: ControlCommand, limits: ControlLimits) -> ControlCommand:
    """Clip a command into the actuation envelope.

    Per-axis clipping for pursuers; vector rescaling to speed_cap for the
    evader. Idempotent. NaN components are rejected.
    """
    vals = (cmd.vx, cmd.vy, cmd.vz, cmd.yaw_rate)
    if any(math.isnan(v) for v in vals):
        raise ValueError(f"command contains NaN: {cmd}")
    r = min(max(cmd.yaw_rate, -limits.yaw_rate_max), limits.yaw_rate_max)
    if limits.speed_cap is not None:
        speed = math.sqrt(cmd.vx ** 2 + cmd.vy ** 2 + cmd.vz ** 2)
        if speed > limits.speed_cap:
            k = limits.speed_cap / speed
            return ControlCommand(cmd.vx * k, cmd.vy * k, cmd.vz * k, r)
        return ControlCommand(cmd.vx, cmd.vy, cmd.vz, r)
    return ControlCommand(
        min(max(cmd.vx, -limits.vx_max), limits.vx_max),
        min(max(cmd.vy, -limits.vy_max), limits.vy_max),
        min(max(cmd.vz, -limits.vz_max), limits.vz_max),
        r)


def step_agent(state: AgentState, cmd: ControlCommand, dt: float = DT_DEFAULT) -> AgentState:
    """Integrate one step: p' = p + dt * Rz(yaw) @ v_body, yaw' wrapped.

    The command must already be clamped; it is stored as the applied
    velocity/yaw-rate of the resulting state.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    c, s = math.cos(state.yaw), math.sin(state.yaw)
    dx = c * cmd.vx - s * cmd.vy
    dy = s * cmd.vx + c * cmd.vy
    new_pos = state.position + dt * np.array([dx, dy, cmd.vz])
    return AgentState(
        position=new_pos,
        yaw=wrap_angle(state.yaw + dt * cmd.yaw_rate),
        body_velocity=np.array([cmd.vx, cmd.vy, cmd.vz]),
        yaw_rate=cmd.yaw_rate,
        alive=state.alive,
        role=state.role)


def capture_check(pursuer_positions: Sequence[np.ndarray], evader_position: np.ndarray,
                  capture_radius: float) -> tuple[bool, Optional[int], float]:
    """(captured, index of the capturing pursuer or None, min distance).

    Capture is inclusive (min distance <= radius); ties go to the lowest
    index.
    """
    if len(pursuer_positions) == 0:
        raise ValueError("capture_check requires at least one pursuer")
    best_i = 0
    best_d = math.inf
    for i, p in enumerate(pursuer_positions):
        d = float(np.linalg.norm(np.asarray(p) - np.asarray(evader_position)))
        if d < best_d:
            best_d = d
            best_i = i
    if best_d <= capture_radius:
        return True, best_i, best_d
    return False, None, best_d


def closing_speed(d_prev: float, d_curr: float, dt: float = DT_DEFAULT) -> float:
    """Positive when the range is shrinking."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    return (d_prev - d_curr) / dt
