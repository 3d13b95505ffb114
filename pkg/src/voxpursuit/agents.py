"""Scripted controllers: the potential-field evader, three pursuer baselines,
and the plug-in interface for externally trained policies.

Scripted pursuers read the same (possibly noise-perturbed) observation vector
a trained policy would see, plus proprioception (own pose), provided through
PursuerContext. External policies implement PolicyInterface and receive only
the observation vector.

All controllers are deterministic given their inputs and rng state, emit
commands already inside the actuation envelope, and thread their private
memory functionally through act().
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional, Protocol, runtime_checkable

import numpy as np

from . import kernels, perception
from .kinematics import AgentState, ControlCommand, ControlLimits, clamp_control, wrap_angle
from .world import VoxelGrid

PN_GAIN = 3.0
ESTIMATE_DECAY_STEPS = perception.ESTIMATE_DECAY_STEPS
TRACK_BLEND_FAR = 40.0   # beyond: pure guidance steering
TRACK_BLEND_NEAR = 20.0  # below: pure terminal homing
FORWARD_SLOW_RANGE = 12.0
FORWARD_STOP_RANGE = 1.0
LATERAL_APF_RANGE = 12.0
LATERAL_APF_GAIN = 6.0
CLIMB_GAIN = 0.5         # m/s commanded per meter of altitude error
HOLD_SPEED_FRACTION = 0.6
HOLD_YAW_FRACTION = 0.375


@runtime_checkable
class PolicyInterface(Protocol):
    """Contract for pluggable pursuer policies driven by the harness.

    obs_mode selects the observation profile ("lite" 50-D or "full" 83-D).
    act must be deterministic given (observation, memory, rng state).
    """

    obs_mode: str

    def initial_memory(self, agent_id: int) -> object: ...

    def act(self, observation: np.ndarray, memory: object,
            rng: np.random.Generator) -> tuple[ControlCommand, object]: ...


@dataclass(frozen=True)
class PursuerContext:
    """Inputs available to a scripted pursuer at one decision point."""

    step: int
    position: np.ndarray
    yaw: float
    body_velocity: np.ndarray
    observation: np.ndarray  # full 83-channel vector, possibly noisy
    limits: ControlLimits
    dt: float

    @property
    def target_visible(self) -> bool:
        return self.observation[72] > 0.5

    def rel_target(self) -> np.ndarray:
        return self.observation[26:29] * perception.VIS_RANGE

    def rel_target_velocity(self) -> np.ndarray:
        return self.observation[29:32] * perception.REL_VEL_NORM

    def guidance(self) -> np.ndarray:
        return self.observation[65:68].copy()

    def lidar_ranges(self) -> np.ndarray:
        return self.observation[:perception.N_LIDAR] * perception.LIDAR_RANGE


STUCK_SPEED = 0.6         # m/s applied while a real command was issued
STUCK_STEPS = 3
ESCAPE_STEPS = 10
ANCHOR_ORBIT_RADIUS = 40.0


@dataclass(frozen=True)
class TargetMemory:
    """Last-known target estimate plus the wall-escape state; everything a
    scripted pursuer carries between steps."""

    position: Optional[np.ndarray] = None
    velocity: Optional[np.ndarray] = None
    seen_step: int = -10 ** 9
    stuck_count: int = 0
    escape_until: int = -1
    prev_cmd_speed: float = 0.0

    def observe(self, ctx: PursuerContext) -> "TargetMemory":
        if ctx.target_visible:
            v_self = _world_velocity(ctx.yaw, ctx.body_velocity)
            return TargetMemory(
                position=ctx.position + ctx.rel_target(),
                velocity=ctx.rel_target_velocity() + v_self,
                seen_step=ctx.step,
                stuck_count=self.stuck_count,
                escape_until=self.escape_until,
                prev_cmd_speed=self.prev_cmd_speed)
        return self

    def age(self, step: int) -> int:
        return step - self.seen_step

    def valid(self, step: int) -> bool:
        return self.position is not None and self.age(step) <= ESTIMATE_DECAY_STEPS


def _norm3(v) -> float:
    return math.sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])


def _clip(v: float, lim: float) -> float:
    if v > lim:
        return lim
    if v < -lim:
        return -lim
    return v


def _clamped(vx: float, vy: float, vz: float, yaw_rate: float,
             limits: ControlLimits) -> ControlCommand:
    # controller-internal fast path; clamp_control stays the public checked op
    return ControlCommand(_clip(vx, limits.vx_max), _clip(vy, limits.vy_max),
                          _clip(vz, limits.vz_max),
                          _clip(yaw_rate, limits.yaw_rate_max))


def _world_velocity(yaw: float, body_velocity: np.ndarray) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([c * body_velocity[0] - s * body_velocity[1],
                     s * body_velocity[0] + c * body_velocity[1],
                     body_velocity[2]])


def _los_rate(rel: np.ndarray, rel_vel: np.ndarray) -> float:
    """Horizontal line-of-sight angular rate (rad/s) of a target at relative
    position rel moving at relative velocity rel_vel."""
    r2 = rel[0] ** 2 + rel[1] ** 2
    if r2 < 1e-9:
        return 0.0
    return (rel[0] * rel_vel[1] - rel[1] * rel_vel[0]) / r2


_LIDAR_DIR_CACHE = perception.lidar_directions()
_LIDAR_DIR_CACHE.flags.writeable = False
# wide cone (~60 deg off the nose) for the planner-guided flier; narrow cone
# (~30 deg) for the naive reactive one, which therefore never slows for the
# walls it swings toward obliquely
_FORWARD_RAYS_WIDE = tuple(int(k) for k in range(perception.N_LIDAR)
                           if _LIDAR_DIR_CACHE[k, 0] > 0.5)
_FORWARD_RAYS_NARROW = tuple(int(k) for k in range(perception.N_LIDAR)
                             if _LIDAR_DIR_CACHE[k, 0] > 0.9)
_SIDE_RAYS = tuple((int(k), float(_LIDAR_DIR_CACHE[k, 1]))
                   for k in range(perception.N_LIDAR)
                   if abs(_LIDAR_DIR_CACHE[k, 1]) >= 0.3)


def _forward_scale(lidar: np.ndarray, rays: tuple = _FORWARD_RAYS_WIDE) -> float:
    """Forward-speed multiplier from the clearance of forward-looking rays."""
    d_min = math.inf
    for k in rays:
        if lidar[k] < d_min:
            d_min = lidar[k]
    if not math.isfinite(d_min):
        return 1.0
    return min(1.0, max(0.0, (d_min - FORWARD_STOP_RANGE)
                        / (FORWARD_SLOW_RANGE - FORWARD_STOP_RANGE)))


def _lateral_apf(lidar: np.ndarray, gain: float = LATERAL_APF_GAIN) -> float:
    """Body-frame sideways velocity pushing away from close side obstacles."""
    vy = 0.0
    for k, sy in _SIDE_RAYS:
        d = lidar[k]
        if d < LATERAL_APF_RANGE:
            vy -= math.copysign(gain * (1.0 - d / LATERAL_APF_RANGE), sy)
    return vy


def apf_pn_controller(rel_target: np.ndarray, rel_target_vel: np.ndarray,
                      lidar: np.ndarray, limits: ControlLimits,
                      dt: float, lateral_gain: float = 0.8) -> ControlCommand:
    """Reactive pursuit: proportional-navigation yaw, forward speed scaled by
    forward clearance, sideways potential-field repulsion, proportional climb.

    No planner and no memory beyond the caller-supplied target estimate; when
    the target velocity is unknown the caller passes the negated own velocity
    (stationary-target assumption). The sideways repulsion is a light touch:
    strong enough to slide along a single wall, far too weak to resolve the
    corner pockets a proportional-navigation chase steers into.
    """
    yaw_rate = PN_GAIN * _los_rate(rel_target, rel_target_vel)
    vx = limits.vx_max * _forward_scale(lidar, _FORWARD_RAYS_NARROW)
    vy = _lateral_apf(lidar, lateral_gain)
    vz = CLIMB_GAIN * rel_target[2]
    return _clamped(vx, vy, vz, yaw_rate, limits)


def euclidean_controller(rel_target: np.ndarray, yaw: float,
                         limits: ControlLimits, dt: float) -> ControlCommand:
    """Full speed along the straight line to the last-known target position.

    Yaw steers the heading error at the maximum rate; there is no obstacle
    term at all, so the engine safety shield is its only protection.
    """
    heading_err = wrap_angle(math.atan2(rel_target[1], rel_target[0]) - yaw)
    vz = CLIMB_GAIN * rel_target[2]
    return _clamped(limits.vx_max, 0.0, vz, heading_err / dt, limits)


def envelope_toward(direction: np.ndarray, yaw: float, lidar: np.ndarray,
                    limits: ControlLimits, dt: float,
                    yaw_rate: Optional[float] = None) -> ControlCommand:
    """Fly a unit direction using the full per-axis envelope.

    The per-axis bounds make the platform fastest when crabbing: the nose is
    held atan2(vy_max, vx_max) off the motion direction so both horizontal
    axes saturate. Forward speed still respects the forward-ray clearance,
    and close side obstacles add a lateral correction.
    """
    envelope = math.sqrt(limits.vx_max ** 2 + limits.vy_max ** 2 + limits.vz_max ** 2)
    bearing = math.atan2(direction[1], direction[0])
    err = wrap_angle(bearing - yaw)
    if yaw_rate is None:
        crab = math.atan2(limits.vy_max, limits.vx_max)
        target_err = math.copysign(crab, err) if abs(err) > crab * 0.5 else 0.0
        yaw_rate = (err - target_err) / dt
    c, s = math.cos(yaw), math.sin(yaw)
    vx = (c * direction[0] + s * direction[1]) * envelope
    vy = (-s * direction[0] + c * direction[1]) * envelope
    vz = direction[2] * envelope
    scale = _forward_scale(lidar)
    if vx > 0:
        vx *= scale
    vy += _lateral_apf(lidar)
    return _clamped(vx, vy, vz, yaw_rate, limits)


def astar_guided_pursuer(guidance: np.ndarray, rel_target: Optional[np.ndarray],
                         rel_target_vel: Optional[np.ndarray], distance: Optional[float],
                         yaw: float, lidar: np.ndarray, limits: ControlLimits,
                         dt: float) -> ControlCommand:
    """Planner-following pursuit: beyond 40 m steer along the guidance vector,
    blend linearly into terminal homing between 40 and 20 m, pure
    proportional-navigation homing inside 20 m."""
    if distance is None or rel_target is None or distance > TRACK_BLEND_FAR:
        direction = guidance
    else:
        los = rel_target / max(float(np.linalg.norm(rel_target)), 1e-9)
        if distance <= TRACK_BLEND_NEAR:
            pn_rate = PN_GAIN * _los_rate(rel_target, rel_target_vel)
            return envelope_toward(los, yaw, lidar, limits, dt, yaw_rate=pn_rate)
        w = (distance - TRACK_BLEND_NEAR) / (TRACK_BLEND_FAR - TRACK_BLEND_NEAR)
        direction = w * guidance + (1.0 - w) * los
    norm = _norm3(direction)
    if norm < 1e-9:
        return ControlCommand.zero()
    return envelope_toward(direction / norm, yaw, lidar, limits, dt)


def hold_pattern(limits: ControlLimits, lidar: Optional[np.ndarray]) -> ControlCommand:
    """Loiter circle flown while no target estimate exists."""
    scale = _forward_scale(lidar) if lidar is not None else 1.0
    return _clamped(HOLD_SPEED_FRACTION * limits.vx_max * scale, 0.0, 0.0,
                    HOLD_YAW_FRACTION * limits.yaw_rate_max, limits)


def steer_towards(rel: np.ndarray, yaw: float, limits: ControlLimits, dt: float,
                  speed_fraction: float, forward_scale: float = 1.0) -> ControlCommand:
    """Plain point-to-point steering: yaw onto the bearing, fly forward."""
    heading_err = wrap_angle(math.atan2(rel[1], rel[0]) - yaw)
    vx = speed_fraction * limits.vx_max * forward_scale * max(0.2, math.cos(heading_err))
    return _clamped(vx, 0.0, CLIMB_GAIN * rel[2], heading_err / dt, limits)


class ScriptedPursuer:
    """Base for the scripted baselines; subclasses define track()/search().

    All three share the same skeleton: update the target memory from the
    observation, pursue a valid estimate, otherwise search. The estimate is
    discarded once stale; its last position remains only as the loiter anchor
    of the search. Only the planner-guided variant carries the extra state to
    notice it is pinned against a wall and break out; the reactive baselines
    keep no memory beyond the last-known target."""

    name = "scripted"
    USE_ESCAPE = False

    def initial_memory(self, agent_id: int,
                       briefing: Optional[np.ndarray] = None) -> TargetMemory:
        if briefing is None:
            return TargetMemory()
        return TargetMemory(position=np.asarray(briefing, dtype=np.float64),
                            velocity=np.zeros(3), seen_step=0)

    def act(self, ctx: PursuerContext, memory: TargetMemory,
            rng: np.random.Generator) -> tuple[ControlCommand, TargetMemory]:
        memory = memory.observe(ctx)
        stuck = memory.stuck_count
        escape_until = memory.escape_until
        if self.USE_ESCAPE:
            applied = _norm3(ctx.body_velocity)
            stuck = stuck + 1 \
                if (memory.prev_cmd_speed > 2.0 and applied < STUCK_SPEED) else 0
            if stuck >= STUCK_STEPS and ctx.step >= escape_until:
                escape_until = ctx.step + ESCAPE_STEPS
                stuck = 0
        if self.USE_ESCAPE and ctx.step < escape_until:
            cmd = self._escape(ctx)
        elif memory.valid(ctx.step):
            rel = memory.position - ctx.position
            if ctx.target_visible:
                rel_vel = ctx.rel_target_velocity()
            else:
                rel_vel = -_world_velocity(ctx.yaw, ctx.body_velocity)
            cmd = self.track(ctx, rel, rel_vel)
        else:
            cmd = self.search(ctx, memory)
        memory = TargetMemory(
            position=memory.position, velocity=memory.velocity,
            seen_step=memory.seen_step, stuck_count=stuck,
            escape_until=escape_until,
            prev_cmd_speed=math.hypot(cmd.vx, cmd.vy, cmd.vz))
        return cmd, memory

    def _escape(self, ctx: PursuerContext) -> ControlCommand:
        # pinned against a wall: back off, climb a little, rotate toward the
        # most open scan direction
        lidar = ctx.lidar_ranges()
        dirs = _LIDAR_DIR_CACHE
        k = int(np.argmax(lidar))
        turn = math.copysign(ctx.limits.yaw_rate_max, dirs[k, 1] if dirs[k, 1] != 0 else 1.0)
        return _clamped(-0.5 * ctx.limits.vx_max, 0.0, 1.0, turn, ctx.limits)

    SEARCH_SPEED = HOLD_SPEED_FRACTION
    SEARCH_YAW = HOLD_YAW_FRACTION
    SEARCH_VZ = 0.0

    def _search_anchor(self, ctx: PursuerContext, memory: TargetMemory,
                       forward_scale: float) -> ControlCommand:
        anchor = memory.position
        if anchor is not None:
            rel = anchor - ctx.position
            if math.hypot(rel[0], rel[1]) > ANCHOR_ORBIT_RADIUS:
                return steer_towards(rel, ctx.yaw, ctx.limits, ctx.dt,
                                     self.SEARCH_SPEED, forward_scale)
        return _clamped(self.SEARCH_SPEED * ctx.limits.vx_max * forward_scale,
                        0.0, self.SEARCH_VZ,
                        self.SEARCH_YAW * ctx.limits.yaw_rate_max, ctx.limits)

    def track(self, ctx: PursuerContext, rel: np.ndarray,
              rel_vel: np.ndarray) -> ControlCommand:
        raise NotImplementedError

    def search(self, ctx: PursuerContext, memory: TargetMemory) -> ControlCommand:
        raise NotImplementedError


class ApfPnPursuer(ScriptedPursuer):
    """Reactive chaser: fast, local, and blind to topology. Searches at full
    speed in a tight orbit, which is exactly as dangerous as it sounds in a
    dense street grid."""

    name = "apf_pn"
    USE_ESCAPE = True   # watchdog counter only; target memory stays minimal
    SEARCH_SPEED = 1.0
    SEARCH_YAW = 0.25   # fast arcs through the blocks, not a pinned circle
    SEARCH_VZ = -3.0    # dives to hunt at street level
    ROAM_AFTER = 40     # steps without contact before leaving the anchor zone
    ROAM_DRIFT = 2.0    # sideways drift while sweeping; off the nose cone

    def track(self, ctx, rel, rel_vel):
        return apf_pn_controller(rel, rel_vel, ctx.lidar_ranges(), ctx.limits, ctx.dt)

    def search(self, ctx, memory):
        scale = _forward_scale(ctx.lidar_ranges(), _FORWARD_RAYS_NARROW)
        if memory.position is not None and memory.age(ctx.step) <= self.ROAM_AFTER:
            return self._search_anchor(ctx, memory, scale)
        # cold trail: sweep the city at speed in a drifting arc
        return _clamped(ctx.limits.vx_max * scale, self.ROAM_DRIFT,
                        self.SEARCH_VZ,
                        self.SEARCH_YAW * ctx.limits.yaw_rate_max, ctx.limits)


class EuclideanPursuer(ScriptedPursuer):
    name = "euclidean"
    SEARCH_SPEED = 0.55
    SEARCH_YAW = 0.3

    def track(self, ctx, rel, rel_vel):
        return euclidean_controller(rel, ctx.yaw, ctx.limits, ctx.dt)

    def search(self, ctx, memory):
        # no obstacle awareness at all, searching included
        return self._search_anchor(ctx, memory, 1.0)


class AStarGuidedPursuer(ScriptedPursuer):
    name = "astar"
    USE_ESCAPE = True

    def track(self, ctx, rel, rel_vel):
        return astar_guided_pursuer(ctx.guidance(), rel, rel_vel,
                                    _norm3(rel), ctx.yaw,
                                    ctx.lidar_ranges(), ctx.limits, ctx.dt)

    def search(self, ctx, memory):
        # follow the frontier guidance the planner publishes
        lidar = ctx.lidar_ranges()
        if _norm3(ctx.guidance()) < 0.5:
            return hold_pattern(ctx.limits, lidar)
        return astar_guided_pursuer(ctx.guidance(), None, None, None,
                                    ctx.yaw, lidar, ctx.limits, ctx.dt)


SCRIPTED_METHODS = {
    "astar": AStarGuidedPursuer,
    "apf_pn": ApfPnPursuer,
    "euclidean": EuclideanPursuer,
}


def make_scripted(name: str) -> ScriptedPursuer:
    try:
        return SCRIPTED_METHODS[name]()
    except KeyError:
        raise ValueError(f"unknown scripted method {name!r}; "
                         f"available: {sorted(SCRIPTED_METHODS)}") from None


# -- evader ---------------------------------------------------------------------

@dataclass(frozen=True)
class EvaderParams:
    """Escape-behavior coefficients. speed_cap follows the stage schedule.

    repulse_range sits below the pursuers' 60 m sensing range so stalking is
    possible; with a longer-sighted evader the stern chase never resolves.
    """

    speed_cap: float = 9.0
    yaw_rate_max: float = 1.0
    repulse_range: float = 55.0
    obstacle_range: float = 12.0
    probe_range: float = 60.0
    w_pursuer: float = 2000.0
    w_obstacle: float = 8.0
    w_corridor: float = 1.0

    def __post_init__(self):
        if min(self.speed_cap, self.yaw_rate_max, self.repulse_range,
               self.obstacle_range, self.probe_range) <= 0:
            raise ValueError("evader parameters must be strictly positive")


def evader_probe_directions() -> np.ndarray:
    """14 probe rays: 12 level azimuths 30 degrees apart, then up and down."""
    dirs = np.zeros((14, 3))
    for k in range(12):
        a = 2.0 * math.pi * k / 12.0
        dirs[k] = (math.cos(a), math.sin(a), 0.0)
    dirs[12] = (0.0, 0.0, 1.0)
    dirs[13] = (0.0, 0.0, -1.0)
    return dirs


_PROBE_DIRS = evader_probe_directions()
_PROBE_DIRS.flags.writeable = False


def evader_policy(world: VoxelGrid, state: AgentState,
                  pursuer_positions: np.ndarray, pursuer_alive: np.ndarray,
                  params: EvaderParams,
                  rng: Optional[np.random.Generator] = None,
                  dt: float = 0.1) -> ControlCommand:
    """Deterministic escape command: inverse-square repulsion from pursuers
    within range, short-range obstacle repulsion from 14 probe rays, and a
    bias toward the most open probe direction, flown at the speed cap."""
    out = np.zeros(4)
    nx, ny, nz = world.dims
    kernels.evader_command(
        world.cells, nx, ny, nz, world.voxel_size,
        world.origin[0], world.origin[1], world.origin[2],
        np.asarray(state.position, dtype=np.float64), float(state.yaw),
        np.ascontiguousarray(pursuer_positions, dtype=np.float64),
        np.ascontiguousarray(pursuer_alive, dtype=np.uint8),
        bool(np.any(pursuer_alive)),
        _PROBE_DIRS, params.probe_range,
        params.speed_cap, params.yaw_rate_max,
        params.repulse_range, params.obstacle_range,
        params.w_pursuer, params.w_obstacle, params.w_corridor,
        dt, out)
    return ControlCommand(out[0], out[1], out[2], out[3])
