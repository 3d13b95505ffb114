"""Actor-side observations: 83-channel assembly, 50-channel masking, and the
noise/delay perturbation channels used by the stress suites.

Full layout (0-based, end exclusive):

    [0:26)   range scan, 13 azimuths x 2 elevations (-15/+15 deg), /60 m,
             1.0 = clear for the full range
    [26:29)  evader relative position /60 m        (zero unless visible)
    [29:32)  evader relative world velocity /10    (zero unless visible)
    [32:35)  own body velocity / (8, 4, 3)
    [35:38)  own body acceleration (finite diff) /5
    [38:41)  body rates (roll, pitch fixed 0, yaw rate /0.8)
    [41:65)  three nearest alive teammates x 8:
             rel pos /60, rel world vel /10, distance /60, alive flag
    [65:68)  planner guidance unit vector
    [68:72)  agent-id one-hot
    [72]     mode flag (1 = target currently visible)
    [73]     action delay / 3
    [74:81)  tactical slot: one-hot 4, bearing err /pi, radial err /60, filled
    [81:83)  encirclement: angular coverage /2pi, vertical spread

The lite profile keeps [0:41) ++ [65:74) = 50 channels; teammate, slot and
encirclement blocks have zero influence on it.
"""
from __future__ import annotations

import math
from collections import deque
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .kinematics import AgentState, ControlCommand
from .world import VoxelGrid

FULL_DIM = 83
LITE_DIM = 50

LIDAR_RANGE = 60.0
VIS_RANGE = 60.0
REL_VEL_NORM = 10.0
ACC_NORM = 5.0
RATE_NORM = 0.8
VEL_NORM = (8.0, 4.0, 3.0)
SLOT_RADIUS = 20.0
N_LIDAR = 26
MAX_DELAY_STEPS = 3
ESTIMATE_DECAY_STEPS = 50

_MASK_LO = 41   # full[0:41) kept
_MASK_HI_START = 65
_MASK_HI_END = 74  # full[65:74) kept


def lidar_directions() -> np.ndarray:
    """Body-frame unit directions of the 26-ray scan: 13 azimuths uniform over
    2pi at elevations -15 and +15 degrees (low ring first)."""
    dirs = np.empty((N_LIDAR, 3))
    k = 0
    for elev_deg in (-15.0, 15.0):
        e = math.radians(elev_deg)
        ce, se = math.cos(e), math.sin(e)
        for j in range(13):
            a = 2.0 * math.pi * j / 13.0
            dirs[k] = (ce * math.cos(a), ce * math.sin(a), se)
            k += 1
    return dirs


_LIDAR_DIRS = lidar_directions()
_LIDAR_DIRS.flags.writeable = False


def mask_observation(full: np.ndarray) -> np.ndarray:
    """Project an 83-vector to the 50-channel parsimonious profile.

    Pure channel selection: teammate [41:65) and slot/encirclement [74:83)
    blocks cannot influence the output.
    """
    full = np.asarray(full, dtype=np.float64)
    if full.shape != (FULL_DIM,):
        raise ValueError(f"expected a {FULL_DIM}-vector, got shape {full.shape}")
    return np.concatenate((full[:_MASK_LO], full[_MASK_HI_START:_MASK_HI_END]))


def apply_noise(obs: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    """Add i.i.d. zero-mean Gaussian noise to every channel; re-clip only the
    hard-ranged range-scan channels to [0, 1]. sigma = 0 is the identity."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    obs = np.asarray(obs, dtype=np.float64)
    if sigma == 0:
        return obs.copy()
    out = obs + rng.normal(0.0, sigma, obs.shape[0])
    np.clip(out[:N_LIDAR], 0.0, 1.0, out=out[:N_LIDAR])
    return out


class DelayBuffer:
    """FIFO action delay of k steps (k in 0..3), primed with hover commands."""

    def __init__(self, k: int, prime: Optional[ControlCommand] = None):
        if not 0 <= k <= MAX_DELAY_STEPS:
            raise ValueError(f"delay must be in 0..{MAX_DELAY_STEPS}, got {k}")
        self.k = k
        prime = prime if prime is not None else ControlCommand.zero()
        self._queue = deque([prime] * k)

    def push_pop(self, cmd: ControlCommand) -> ControlCommand:
        """Push the newest command, pop the one issued k steps earlier."""
        if self.k == 0:
            return cmd
        self._queue.append(cmd)
        return self._queue.popleft()


def assemble_full(world: VoxelGrid,
                  self_state: AgentState,
                  teammate_states: Sequence[AgentState],
                  evader_state: Optional[AgentState],
                  guidance_vec: np.ndarray,
                  agent_id: int,
                  *,
                  evader_estimate: Optional[np.ndarray] = None,
                  gate_open: bool = True,
                  delay_k: int = 0,
                  prev_body_velocity: Optional[np.ndarray] = None,
                  dt: float = 0.1) -> np.ndarray:
    """Build the 83-channel observation for one pursuer.

    evader_state is ground truth used for visibility (gate AND within 60 m AND
    line of sight); the relative channels are zeroed when not visible.
    evader_estimate (a possibly stale position) feeds only the slot and
    encirclement blocks; it defaults to the evader position when visible.
    """
    if not self_state.alive:
        raise ValueError("cannot assemble an observation for a dead agent")
    if not 0 <= agent_id < 4:
        raise ValueError("agent_id must be in 0..3")
    if len(teammate_states) > 3:
        raise ValueError("at most 3 teammates")

    pos = np.zeros((5, 3))
    yaw = np.zeros(5)
    vbody = np.zeros((5, 3))
    prev_vbody = np.zeros((5, 3))
    yawrate = np.zeros(5)
    alive = np.zeros(5, dtype=np.uint8)

    def put(row: int, st: AgentState):
        pos[row] = st.position
        yaw[row] = st.yaw
        vbody[row] = st.body_velocity
        prev_vbody[row] = st.body_velocity
        yawrate[row] = st.yaw_rate
        alive[row] = 1 if st.alive else 0

    put(agent_id, self_state)
    if prev_body_velocity is not None:
        prev_vbody[agent_id] = prev_body_velocity
    rows = [r for r in range(4) if r != agent_id]
    for row, st in zip(rows, teammate_states):
        put(row, st)
    if evader_state is not None:
        put(4, evader_state)
    else:
        pos[4] = 1e12  # far outside any grid: never visible

    guidance = np.zeros((4, 3))
    guidance[agent_id] = np.asarray(guidance_vec, dtype=np.float64)

    # The kernel refreshes the estimate on sight, so a caller-supplied stale
    # estimate only matters when the evader is not currently visible.
    est_pos = np.zeros((4, 3))
    est_vel = np.zeros((4, 3))
    est_age = np.full(4, 10 ** 12, dtype=np.int64)
    if evader_estimate is not None:
        est_pos[agent_id] = np.asarray(evader_estimate, dtype=np.float64)
        est_age[agent_id] = 1

    obs = np.zeros((4, FULL_DIM))
    dist = np.zeros(4)
    vis = np.zeros(4, dtype=np.uint8)
    nx, ny, nz = world.dims
    kernels.fill_observations(
        world.cells, nx, ny, nz, world.voxel_size,
        world.origin[0], world.origin[1], world.origin[2], _LIDAR_DIRS,
        pos, yaw, vbody, prev_vbody, yawrate, alive,
        guidance, est_pos, est_vel, est_age,
        np.uint8(1 if gate_open else 0),
        obs_params(world, delay_k=delay_k, dt=dt),
        obs, dist, vis)
    return obs[agent_id].copy()


def obs_params(world: VoxelGrid, *, delay_k: int = 0, dt: float = 0.1,
               visibility_range: float = VIS_RANGE) -> np.ndarray:
    """Packed normalizer constants consumed by the observation kernel."""
    return np.array([
        LIDAR_RANGE, visibility_range, VEL_NORM[0], VEL_NORM[1], VEL_NORM[2],
        REL_VEL_NORM, ACC_NORM, RATE_NORM, SLOT_RADIUS, world.extent[2],
        delay_k / MAX_DELAY_STEPS, dt, float(ESTIMATE_DECAY_STEPS)])


def channel_map() -> list[dict]:
    """Machine-readable description of both observation profiles."""
    blocks = [
        ("range_scan", 0, 26, "distance / 60 m, 1.0 = clear", True),
        ("evader_rel_pos", 26, 3, "(p_e - p_i) / 60 m, zero unless visible", True),
        ("evader_rel_vel", 29, 3, "(v_e - v_i) world / 10 m/s, zero unless visible", True),
        ("self_body_velocity", 32, 3, "v_body / (8, 4, 3) m/s", True),
        ("self_body_accel", 35, 3, "finite-difference accel / 5 m/s^2", True),
        ("self_body_rates", 38, 3, "(0, 0, yaw_rate / 0.8 rad/s)", True),
        ("teammates_top3", 41, 24, "3 x (rel pos /60, rel vel /10, dist /60, alive)", False),
        ("guidance", 65, 3, "planner guidance unit vector", True),
        ("agent_id", 68, 4, "one-hot", True),
        ("mode", 72, 1, "1 = target currently visible", True),
        ("action_delay", 73, 1, "delay steps / 3", True),
        ("tactical_slot", 74, 7, "slot one-hot 4, bearing err /pi, radial err /60, filled", False),
        ("encirclement", 81, 2, "angular coverage /2pi, vertical spread", False),
    ]
    out = []
    lite_cursor = 0
    for name, start, length, norm, in_lite in blocks:
        entry = {
            "name": name,
            "full_start": start,
            "full_length": length,
            "normalizer": norm,
            "in_lite": in_lite,
        }
        if in_lite:
            entry["lite_start"] = lite_cursor
            lite_cursor += length
        out.append(entry)
    return out
