"""The authoritative episode loop: delayed/clamped controls, integration with
the safety shield, collision handling, exploration tracking, visibility
gating, capture detection, team rewards, and per-step records.

One Episode instance is one seeded rollout; everything it does is a pure
function of (world, stage, seed, engine params, perturbations, commands), so
episodes can run embarrassingly parallel across processes while sharing the
immutable world.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import kernels, perception, planner as planner_mod
from .agents import (EvaderParams, PolicyInterface, PursuerContext,
                     ScriptedPursuer, evader_probe_directions, make_scripted)
from .kinematics import AgentState, ControlCommand, ControlLimits
from .perception import ESTIMATE_DECAY_STEPS, FULL_DIM, MAX_DELAY_STEPS
from .rewards import RewardBreakdown, RewardParams
from .world import VoxelGrid

N_PURSUERS = 4
EVADER = 4  # row index of the evader in the state arrays

OUTCOME_CAPTURE = "capture"
OUTCOME_TIMEOUT = "timeout"
OUTCOME_ALL_DEAD = "all_dead"

EV_OBSTACLE = "obstacle"
EV_TEAM = "team"
EV_SHIELD = "shield"
EV_EVADER_OBSTACLE = "evader_obstacle"
EV_CAPTURE = "capture"

# Event classes that count toward the collision metric and break a clean win.
# Shield triggers are penalized in the reward but excluded here; they would
# otherwise saturate the episode-level rate.
COLLISION_EVENT_TYPES = (EV_OBSTACLE, EV_TEAM, EV_EVADER_OBSTACLE)

GATE_SCHEDULE = {1: None, 2: None, 3: 0.45, 4: 0.60, 5: 0.70}
EVADER_SPEED_SCHEDULE = {1: 5.0, 2: 6.0, 3: 7.0, 4: 8.0, 5: 9.0}


class MapUnusableError(RuntimeError):
    """Spawn sampling failed; the map cannot host an episode."""


@dataclass(frozen=True)
class StageConfig:
    """Curriculum-stage constants."""

    stage: int = 5
    capture_radius: float = 8.0
    visibility_range: float = 60.0
    gate_threshold: Optional[float] = 0.70
    gate_timeout_steps: int = 1500
    horizon_steps: int = 3000
    evader_speed_cap: float = 9.0
    evader_yaw_rate_max: float = 1.0
    pursuer_limits: ControlLimits = field(default_factory=ControlLimits.pursuer_default)

    def __post_init__(self):
        if self.gate_threshold is not None and not 0.0 < self.gate_threshold <= 1.0:
            raise ValueError("gate threshold must lie in (0, 1]")
        if self.horizon_steps <= self.gate_timeout_steps:
            raise ValueError("horizon must exceed the gate timeout")

    @classmethod
    def for_stage(cls, stage: int) -> "StageConfig":
        if stage not in GATE_SCHEDULE:
            raise ValueError(f"stage must be 1..5, got {stage}")
        return cls(stage=stage, gate_threshold=GATE_SCHEDULE[stage],
                   evader_speed_cap=EVADER_SPEED_SCHEDULE[stage])

    @classmethod
    def stage5(cls) -> "StageConfig":
        return cls.for_stage(5)


@dataclass(frozen=True)
class EngineParams:
    """Engine constants not fixed by the stage definition."""

    dt: float = 0.1
    team_hit_radius: float = 3.0
    shield_clearance: float = 1.0
    shield_lookahead_steps: float = 2.0
    spawn_cluster_radius: float = 40.0
    spawn_pursuer_separation: float = 12.0
    spawn_evader_separation: float = 120.0
    spawn_attempts: int = 10_000
    initial_briefing: bool = True
    guidance_lookahead: float = 12.0


@dataclass(frozen=True)
class Perturbations:
    """Stress-suite knobs applied around the nominal episode."""

    sigma: float = 0.0
    delay_k: int = 0
    evader_speed: Optional[float] = None
    pursuer_yaw_cap: Optional[float] = None

    def __post_init__(self):
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not 0 <= self.delay_k <= MAX_DELAY_STEPS:
            raise ValueError(f"delay_k must be in 0..{MAX_DELAY_STEPS}")


@dataclass
class EpisodeResult:
    """Outcome and per-episode aggregates of one rollout."""

    outcome: str
    steps: int
    seed: int
    returns: list[float]
    event_counts: dict[str, int]
    capture_distances: list[float]
    capture_agent: Optional[int]
    gate_opened_step: Optional[int]

    @property
    def success(self) -> bool:
        return self.outcome == OUTCOME_CAPTURE

    @property
    def collision(self) -> bool:
        return any(self.event_counts.get(t, 0) > 0 for t in COLLISION_EVENT_TYPES)

    @property
    def clean(self) -> bool:
        return self.success and not self.collision

    @property
    def mean_return(self) -> float:
        return float(np.mean(self.returns))


# reward-term columns of the per-step (4, 8) array
_R_DIR, _R_CAP, _R_QUAL, _R_COL, _R_IMP, _R_LAZY, _R_RHO, _R_SHARE = range(8)


class Episode:
    """One seeded episode. Construction performs the reset."""

    def __init__(self, world: VoxelGrid, stage: StageConfig, seed: int,
                 params: EngineParams = EngineParams(),
                 evader_params: Optional[EvaderParams] = None,
                 reward_params: Optional[RewardParams] = None,
                 perturb: Perturbations = Perturbations(),
                 training_gate: bool = False):
        self.world = world
        self.stage = stage
        self.seed = int(seed)
        self.params = params
        self.perturb = perturb
        self.training_gate = bool(training_gate)

        limits = stage.pursuer_limits
        if perturb.pursuer_yaw_cap is not None:
            limits = replace(limits, yaw_rate_max=perturb.pursuer_yaw_cap)
        self.pursuer_limits = limits
        speed_cap = perturb.evader_speed if perturb.evader_speed is not None \
            else stage.evader_speed_cap
        base_ev = evader_params if evader_params is not None else EvaderParams()
        self.evader_params = replace(base_ev, speed_cap=speed_cap,
                                     yaw_rate_max=stage.evader_yaw_rate_max)
        self.reward_params = reward_params if reward_params is not None else RewardParams(
            capture_radius=stage.capture_radius)

        nx, ny, nz = world.dims
        self._nx, self._ny, self._nz = nx, ny, nz
        self._cells = world.cells
        self._voxel = world.voxel_size
        self._ox, self._oy, self._oz = world.origin

        self._env_rng = np.random.default_rng(np.random.SeedSequence((self.seed, 0)))
        self._noise_rngs = [np.random.default_rng(np.random.SeedSequence((self.seed, 10 + i)))
                            for i in range(N_PURSUERS)]

        # flat state arrays; row 4 is the evader
        self.pos = np.zeros((5, 3))
        self.yaw = np.zeros(5)
        self.vbody = np.zeros((5, 3))
        self.prev_vbody = np.zeros((5, 3))
        self.yawrate = np.zeros(5)
        self.alive = np.zeros(5, dtype=np.uint8)
        self._is_pursuer = np.array([1, 1, 1, 1, 0], dtype=np.uint8)

        self.est_pos = np.zeros((N_PURSUERS, 3))
        self.est_vel = np.zeros((N_PURSUERS, 3))
        self.est_age = np.full(N_PURSUERS, 10 ** 12, dtype=np.int64)

        self.guidance = np.zeros((N_PURSUERS, 3))
        self._plan_centers: list[Optional[np.ndarray]] = [None] * N_PURSUERS
        self._plan_goal_voxel: list[Optional[tuple]] = [None] * N_PURSUERS
        self._plan_step = np.full(N_PURSUERS, -10 ** 9, dtype=np.int64)
        self._plan_target = np.zeros((N_PURSUERS, 3))
        self._plan_kind = [""] * N_PURSUERS


        self.visited = np.zeros(nx * ny * nz, dtype=np.uint8)
        self.visited_count = 0
        self.free_total = int(nx * ny * nz - int(world.cells.sum()))
        self._explore_src = np.full(N_PURSUERS, -1, dtype=np.int64)
        # second sweep bookkeeping once the map is fully explored
        self._patrol: Optional[np.ndarray] = None
        self._patrol_count = 0
        self._goal_consumed = np.zeros(N_PURSUERS, dtype=bool)

        self.gate_active = self.training_gate and stage.gate_threshold is not None
        self.gate_open = not self.gate_active
        self.gate_opened_step: Optional[int] = 0 if self.gate_open else None

        self.steps = 0
        self.done = False
        self.outcome: Optional[str] = None
        self.capture_agent: Optional[int] = None
        self.events: list[tuple[int, str, int]] = []
        self.event_counts: dict[str, int] = {}
        self.returns = np.zeros(N_PURSUERS)

        # per-step scratch
        self.obs = np.zeros((N_PURSUERS, FULL_DIM))
        self.dist = np.zeros(N_PURSUERS)
        self.vis = np.zeros(N_PURSUERS, dtype=np.uint8)
        self.dist_prev = np.zeros(N_PURSUERS)
        self.reward_terms = np.zeros((N_PURSUERS, 8))
        self._acting = np.zeros(N_PURSUERS, dtype=np.uint8)
        self._shield_flag = np.zeros(5, dtype=np.uint8)
        self._obstacle_flag = np.zeros(5, dtype=np.uint8)
        self._team_flag = np.zeros(5, dtype=np.uint8)
        self._impact_speed = np.zeros(5)
        self._vworld = np.zeros((5, 3))
        self._voxflat = np.zeros(5, dtype=np.int64)
        self._evader_cmd = np.zeros(4)
        self._cmd_buf = np.zeros((5, 4))
        self._n_alive = N_PURSUERS

        k = perturb.delay_k
        self._delay_k = k
        self._delay_ring = np.zeros((max(k, 1), N_PURSUERS, 4))
        self._delay_head = 0

        self._phys_params = np.array([
            params.dt, params.shield_clearance, params.shield_lookahead_steps,
            params.team_hit_radius, limits.vx_max, limits.vy_max, limits.vz_max,
            limits.yaw_rate_max])
        rp = self.reward_params
        self._reward_params_arr = np.array([
            rp.w_closure, rp.w_capture, rp.w_quality, rp.w_collision,
            rp.w_impact, rp.w_lazy, rp.alpha_proximity, rp.alpha_velocity,
            rp.alpha_radius, rp.proximity_scale, rp.epsilon, rp.gate_inner,
            rp.gate_outer, rp.hard_gate, rp.participation_closing,
            rp.participation_fraction, rp.capture_radius, params.dt, 8.0])
        self._obs_params = perception.obs_params(
            world, delay_k=k, dt=params.dt,
            visibility_range=stage.visibility_range)

        self._spawn()
        self._initial_exploration()
        self._check_gate()
        if params.initial_briefing and self.gate_open:
            for i in range(N_PURSUERS):
                self.est_pos[i] = self.pos[EVADER]
                self.est_vel[i] = 0.0
                self.est_age[i] = 0
        self.evader_spawn = self.pos[EVADER].copy()
        self.dist_prev[:] = np.linalg.norm(self.pos[:N_PURSUERS] - self.pos[EVADER], axis=1)
        self.refresh_guidance()
        self._fill_observations()
        self.dist_prev[:] = self.dist

    # -- reset internals -------------------------------------------------------

    def _spawnable(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat indices and centers of largest-component free voxels."""
        labels = self.world.free_component_labels()
        flats = np.flatnonzero((self._cells == 0) & (labels == 1))
        if flats.size < 5:
            raise MapUnusableError(
                f"map has only {flats.size} usable free voxels; need at least 5")
        nx, ny = self._nx, self._ny
        xs = flats % nx
        ys = (flats // nx) % ny
        zs = flats // (nx * ny)
        centers = np.stack([
            self._ox + (xs + 0.5) * self._voxel,
            self._oy + (ys + 0.5) * self._voxel,
            self._oz + (zs + 0.5) * self._voxel], axis=1)
        return flats, centers

    def _spawn(self) -> None:
        p = self.params
        rng = self._env_rng
        flats, centers = self._spawnable()
        quadrant = int(rng.integers(4))
        qsx, qsy = planner_mod.QUADRANT_SIGNS[quadrant]
        cx = self._ox + 0.5 * self._nx * self._voxel
        cy = self._oy + 0.5 * self._ny * self._voxel
        in_q = ((centers[:, 0] - cx) * qsx >= 0) & ((centers[:, 1] - cy) * qsy >= 0)
        q_idx = np.flatnonzero(in_q)
        if q_idx.size == 0:
            q_idx = np.arange(flats.size)
        attempts = 0
        chosen: list[int] = []
        while attempts < p.spawn_attempts:
            anchor = int(q_idx[rng.integers(q_idx.size)])
            attempts += 1
            near = np.flatnonzero(
                in_q & (np.linalg.norm(centers - centers[anchor], axis=1)
                        <= p.spawn_cluster_radius))
            chosen = [anchor]
            for _ in range(200):
                if len(chosen) == N_PURSUERS or attempts >= p.spawn_attempts:
                    break
                cand = int(near[rng.integers(near.size)])
                attempts += 1
                if cand in chosen:
                    continue
                if all(np.linalg.norm(centers[cand] - centers[c])
                       >= p.spawn_pursuer_separation for c in chosen):
                    chosen.append(cand)
            if len(chosen) == N_PURSUERS:
                break
        if len(chosen) < N_PURSUERS:
            raise MapUnusableError(
                f"could not place {N_PURSUERS} pursuers after {attempts} samples")
        far = np.flatnonzero(
            np.min(np.linalg.norm(
                centers[:, None, :] - centers[chosen][None, :, :], axis=2), axis=1)
            >= p.spawn_evader_separation)
        if far.size == 0:
            raise MapUnusableError(
                f"no evader spawn at least {p.spawn_evader_separation} m away")
        evader = int(far[rng.integers(far.size)])
        for i, c in enumerate(chosen):
            self.pos[i] = centers[c]
            self.yaw[i] = rng.uniform(-math.pi, math.pi)
        self.pos[EVADER] = centers[evader]
        self.yaw[EVADER] = rng.uniform(-math.pi, math.pi)
        self.alive[:] = 1

    def _initial_exploration(self) -> None:
        for i in range(N_PURSUERS):
            self._explore_from(i)

    def _explore_from(self, i: int) -> None:
        vox = self._voxel_of(self.pos[i])
        if vox is None:
            return
        flat = (vox[2] * self._ny + vox[1]) * self._nx + vox[0]
        if flat == self._explore_src[i]:
            return
        self._explore_src[i] = flat
        self.visited_count = int(kernels.update_visibility(
            self._cells, self._nx, self._ny, self._nz, self._voxel,
            self._ox, self._oy, self._oz, self.visited, flat,
            self.stage.visibility_range, self.visited_count))

    def _voxel_of(self, pnt) -> Optional[tuple[int, int, int]]:
        ix = int(math.floor((pnt[0] - self._ox) / self._voxel))
        iy = int(math.floor((pnt[1] - self._oy) / self._voxel))
        iz = int(math.floor((pnt[2] - self._oz) / self._voxel))
        if (0 <= ix < self._nx and 0 <= iy < self._ny and 0 <= iz < self._nz):
            return ix, iy, iz
        return None

    # -- public state views ------------------------------------------------------

    @property
    def exploration_ratio(self) -> float:
        return self.visited_count / self.free_total if self.free_total else 1.0

    @property
    def n_alive(self) -> int:
        return self._n_alive

    def alive_ids(self) -> list[int]:
        return [i for i in range(N_PURSUERS) if self.alive[i]]

    def agent_states(self) -> list[AgentState]:
        out = []
        for i in range(5):
            out.append(AgentState(
                position=self.pos[i].copy(), yaw=float(self.yaw[i]),
                body_velocity=self.vbody[i].copy(), yaw_rate=float(self.yawrate[i]),
                alive=bool(self.alive[i]),
                role="evader" if i == EVADER else "pursuer"))
        return out

    def observations(self) -> np.ndarray:
        """Current full observations, one row per pursuer (zeros when dead)."""
        return self.obs.copy()

    def policy_observations(self) -> list[tuple[int, np.ndarray]]:
        """(agent_id, observation) pairs for alive pursuers with the episode's
        observation-noise perturbation applied; draws come from per-agent
        seeded streams so the sequence is reproducible."""
        sigma = self.perturb.sigma
        out = []
        for i in self.alive_ids():
            if sigma > 0:
                out.append((i, perception.apply_noise(self.obs[i], sigma,
                                                      self._noise_rngs[i])))
            else:
                # view into the step buffer; valid until the next step()
                out.append((i, self.obs[i]))
        return out

    def reward_breakdowns(self) -> list[RewardBreakdown]:
        out = []
        for i in range(N_PURSUERS):
            t = self.reward_terms[i]
            out.append(RewardBreakdown(
                dir_term=float(t[_R_DIR]), cap_term=float(t[_R_CAP]),
                qual_term=float(t[_R_QUAL]), col_term=float(t[_R_COL]),
                imp_term=float(t[_R_IMP]), lazy_term=float(t[_R_LAZY]),
                rho=float(t[_R_RHO]), share=float(t[_R_SHARE])))
        return out

    # -- the step ----------------------------------------------------------------

    def step(self, commands: Sequence[ControlCommand]) -> bool:
        """Advance one step. commands must hold one entry per alive pursuer,
        ordered by agent id. Returns the done flag."""
        if self.done:
            raise ValueError("episode is done; create a new Episode")
        alive = self.alive
        acting = self._acting
        acting[:] = alive[:N_PURSUERS]
        if len(commands) != self._n_alive:
            raise ValueError(
                f"expected {self._n_alive} commands for alive pursuers, "
                f"got {len(commands)}")
        self.steps += 1

        # (1) action delay, (2) clamp happens inside the physics kernel
        buf = self._cmd_buf
        k = 0
        for i in range(N_PURSUERS):
            if acting[i]:
                cmd = commands[k]
                k += 1
                buf[i, 0] = cmd.vx
                buf[i, 1] = cmd.vy
                buf[i, 2] = cmd.vz
                buf[i, 3] = cmd.yaw_rate
            else:
                buf[i, 0] = buf[i, 1] = buf[i, 2] = buf[i, 3] = 0.0
        if self._delay_k > 0:
            head = self._delay_head
            delayed = self._delay_ring[head].copy()
            self._delay_ring[head] = buf[:N_PURSUERS]
            self._delay_head = (head + 1) % self._delay_k
            buf[:N_PURSUERS] = delayed

        # (3) evader policy from ground truth
        ev = self.evader_params
        kernels.evader_command(
            self._cells, self._nx, self._ny, self._nz, self._voxel,
            self._ox, self._oy, self._oz,
            self.pos[EVADER], float(self.yaw[EVADER]),
            self.pos[:N_PURSUERS], alive[:N_PURSUERS], self._n_alive > 0,
            _EVADER_PROBES, ev.probe_range, ev.speed_cap, ev.yaw_rate_max,
            ev.repulse_range, ev.obstacle_range,
            ev.w_pursuer, ev.w_obstacle, ev.w_corridor, self.params.dt,
            self._evader_cmd)
        buf[EVADER] = self._evader_cmd

        # (4)-(6) clamp, shield filter, integration, collision flags
        mask = kernels.step_physics(
            self._cells, self._nx, self._ny, self._nz, self._voxel,
            self._ox, self._oy, self._oz,
            buf, self.pos, self.yaw, self.vbody, self.prev_vbody,
            self.yawrate, alive, self._is_pursuer, self._phys_params,
            self._shield_flag, self._obstacle_flag, self._team_flag,
            self._impact_speed, self._vworld, self.dist, self._voxflat)
        if mask < 0:
            raise ValueError("command contains NaN")

        # (7) deactivation and event records
        captured = False
        capture_agent: Optional[int] = None
        if mask:
            for i in range(N_PURSUERS):
                if not acting[i]:
                    continue
                if self._shield_flag[i]:
                    self._event(EV_SHIELD, i)
                if self._team_flag[i]:
                    self._event(EV_TEAM, i)
                if self._obstacle_flag[i]:
                    self._event(EV_OBSTACLE, i)
                    alive[i] = 0
                    self._n_alive -= 1
            if self._obstacle_flag[EVADER]:
                self._event(EV_EVADER_OBSTACLE, EVADER)
                captured = True

        # (8) exploration, (9) gate
        for i in range(N_PURSUERS):
            if alive[i] and self._voxflat[i] != self._explore_src[i]:
                self._explore_src[i] = self._voxflat[i]
                self.visited_count = int(kernels.update_visibility(
                    self._cells, self._nx, self._ny, self._nz, self._voxel,
                    self._ox, self._oy, self._oz, self.visited,
                    self._voxflat[i], self.stage.visibility_range,
                    self.visited_count))
                if self._patrol is not None:
                    self._patrol_count = int(kernels.update_visibility(
                        self._cells, self._nx, self._ny, self._nz, self._voxel,
                        self._ox, self._oy, self._oz, self._patrol,
                        self._voxflat[i], self.stage.visibility_range,
                        self._patrol_count))
        if not self.gate_open:
            self._check_gate()

        # (10) capture
        if not captured:
            rc = self.stage.capture_radius
            for i in range(N_PURSUERS):
                if alive[i] and self.dist[i] <= rc:
                    captured = True
                    capture_agent = i
                    break
        if captured:
            self._event(EV_CAPTURE, capture_agent if capture_agent is not None else EVADER)

        # (11) team rewards for the agents that acted this step
        kernels.step_rewards(
            acting, self.dist, self.dist_prev, self.pos,
            np.uint8(captured), self._obstacle_flag, self._team_flag,
            self._shield_flag, self._impact_speed, self._reward_params_arr,
            self.reward_terms)
        terms = self.reward_terms
        for i in range(N_PURSUERS):
            if acting[i]:
                t = terms[i]
                self.returns[i] += (t[_R_DIR] + t[_R_CAP] + t[_R_QUAL]
                                    - t[_R_COL] - t[_R_IMP] - t[_R_LAZY])

        # (12) termination
        if captured:
            self.done = True
            self.outcome = OUTCOME_CAPTURE
            self.capture_agent = capture_agent
        elif self._n_alive == 0:
            self.done = True
            self.outcome = OUTCOME_ALL_DEAD
        elif self.steps >= self.stage.horizon_steps:
            self.done = True
            self.outcome = OUTCOME_TIMEOUT

        # observations for the next decision point
        self._fill_observations()
        self.dist_prev[:] = self.dist
        return self.done

    def _event(self, kind: str, agent: int) -> None:
        self.events.append((self.steps, kind, agent))
        self.event_counts[kind] = self.event_counts.get(kind, 0) + 1

    def _check_gate(self) -> None:
        if self.gate_open:
            return
        tau = self.stage.gate_threshold
        if (self.exploration_ratio >= tau
                or self.steps > self.stage.gate_timeout_steps):
            self.gate_open = True
            self.gate_opened_step = self.steps

    def _fill_observations(self) -> None:
        kernels.fill_observations(
            self._cells, self._nx, self._ny, self._nz, self._voxel,
            self._ox, self._oy, self._oz, _LIDAR_DIRS,
            self.pos, self.yaw, self.vbody, self.prev_vbody, self.yawrate,
            self.alive, self.guidance,
            self.est_pos, self.est_vel, self.est_age,
            np.uint8(1 if self.gate_open else 0), self._obs_params,
            self.obs, self.dist, self.vis)

    # -- guidance ------------------------------------------------------------------

    def refresh_guidance(self) -> None:
        """Update per-agent guidance vectors (track the estimate, or head for
        the assigned exploration frontier) and poke them into the current
        observation rows. Called by the episode driver between steps; not part
        of the physics step."""
        for i in range(N_PURSUERS):
            if not self.alive[i]:
                continue
            self._refresh_agent_guidance(i)
            self.obs[i, 65:68] = self.guidance[i]

    def _refresh_agent_guidance(self, i: int) -> None:
        # A last-known position is worth tracking until the agent has flown
        # there and found nothing; after that, sweep the exploration frontier.
        age = int(self.est_age[i])
        if age == 0:
            self._goal_consumed[i] = False
        elif (not self._goal_consumed[i] and age < 10 ** 11
              and math.dist(self.est_pos[i], self.pos[i]) <= 12.0):
            self._goal_consumed[i] = True
        tracking = age < 10 ** 11 and not self._goal_consumed[i]
        kind = "track" if tracking else "frontier"
        if tracking:
            target = self.est_pos[i]
            moved = math.dist(target, self._plan_target[i])
            due = (planner_mod.replan_due(self.steps, int(self._plan_step[i]), moved)
                   or kind != self._plan_kind[i]
                   or self._plan_centers[i] is None)
        else:
            # a frontier plan stays valid until its goal has been explored
            target = None
            goal = self._plan_goal_voxel[i]
            vis = self._patrol if self._patrol is not None else self.visited
            due = (kind != self._plan_kind[i]
                   or self._plan_centers[i] is None
                   or goal is None
                   or vis[(goal[2] * self._ny + goal[1]) * self._nx + goal[0]] != 0)
        if due:
            self._plan(i, kind, target)
        centers = self._plan_centers[i]
        if centers is None or len(centers) == 0:
            self.guidance[i] = 0.0
            return
        self.guidance[i] = planner_mod.guidance_from_centers(
            self.world, centers, self.pos[i], self.params.guidance_lookahead)

    def _plan(self, i: int, kind: str, target: Optional[np.ndarray]) -> None:
        self._plan_kind[i] = kind
        self._plan_step[i] = self.steps
        start = self._voxel_of(self.pos[i])
        if start is None:
            self._plan_centers[i] = None
            return
        if kind == "track":
            self._plan_target[i] = target
            goal = self._snap_free(target)
        else:
            vis = self._patrol if self._patrol is not None else self.visited
            goal = planner_mod.frontier_goal(self.world, vis, self.pos[i], i)
            if goal is None:
                # everything reachable explored: begin a fresh patrol sweep
                self._patrol = np.zeros_like(self.visited)
                self._patrol_count = 0
                goal = planner_mod.frontier_goal(self.world, self._patrol,
                                                 self.pos[i], i)
        if goal is None:
            self._plan_centers[i] = None
            self._plan_goal_voxel[i] = None
            return
        if (goal == self._plan_goal_voxel[i] and self._plan_centers[i] is not None
                and self._near_path(i)):
            return  # same goal and still on the corridor: keep the cached path
        nx, ny = self._nx, self._ny
        s_flat = (start[2] * ny + start[1]) * nx + start[0]
        g_flat = (goal[2] * ny + goal[1]) * nx + goal[0]
        path_flat, _, _, _, _ = kernels.astar_path(
            self._cells, nx, ny, self._nz, self._voxel, s_flat, g_flat)
        if path_flat.size == 0 and s_flat != g_flat:
            self._plan_centers[i] = None
            self._plan_goal_voxel[i] = None
            return
        xs = path_flat % nx
        ys = (path_flat // nx) % ny
        zs = path_flat // (nx * ny)
        centers = np.stack([
            self._ox + (xs + 0.5) * self._voxel,
            self._oy + (ys + 0.5) * self._voxel,
            self._oz + (zs + 0.5) * self._voxel], axis=1)
        self._plan_centers[i] = centers
        self._plan_goal_voxel[i] = goal

    def _near_path(self, i: int) -> bool:
        centers = self._plan_centers[i]
        d2 = np.sum((centers - self.pos[i]) ** 2, axis=1)
        return bool(np.min(d2) <= (1.5 * self._voxel) ** 2)

    def _snap_free(self, p: np.ndarray) -> Optional[tuple[int, int, int]]:
        vox = self._voxel_of(p)
        if vox is not None and not self._cells[(vox[2] * self._ny + vox[1]) * self._nx + vox[0]]:
            return vox
        if vox is None:
            return None
        best = None
        best_d = math.inf
        for dz in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    ix, iy, iz = vox[0] + dx, vox[1] + dy, vox[2] + dz
                    if not (0 <= ix < self._nx and 0 <= iy < self._ny and 0 <= iz < self._nz):
                        continue
                    flat = (iz * self._ny + iy) * self._nx + ix
                    if self._cells[flat]:
                        continue
                    c = np.array([self._ox + (ix + 0.5) * self._voxel,
                                  self._oy + (iy + 0.5) * self._voxel,
                                  self._oz + (iz + 0.5) * self._voxel])
                    d = float(np.linalg.norm(c - p))
                    if d < best_d:
                        best_d = d
                        best = (ix, iy, iz)
        return best


_LIDAR_DIRS = perception.lidar_directions()
_LIDAR_DIRS.flags.writeable = False

_EVADER_PROBES = evader_probe_directions()
_EVADER_PROBES.flags.writeable = False


# -- episode driver ------------------------------------------------------------


def run_episode(world: VoxelGrid, stage: StageConfig, seed: int,
                policy: Union[str, PolicyInterface],
                perturb: Perturbations = Perturbations(),
                params: EngineParams = EngineParams(),
                evader_params: Optional[EvaderParams] = None,
                reward_params: Optional[RewardParams] = None,
                training_gate: bool = False,
                log_writer: Optional[Callable[[dict], None]] = None) -> EpisodeResult:
    """Roll one full episode under a scripted method name or a plugged-in
    policy, applying observation noise and action delay every step."""
    ep = Episode(world, stage, seed, params=params, evader_params=evader_params,
                 reward_params=reward_params, perturb=perturb,
                 training_gate=training_gate)
    scripted = isinstance(policy, str)
    controllers: dict[int, ScriptedPursuer] = {}
    memories: dict[int, object] = {}
    briefing = ep.evader_spawn if (params.initial_briefing and ep.gate_open) else None
    if scripted:
        for i in range(N_PURSUERS):
            controllers[i] = make_scripted(policy)
            memories[i] = controllers[i].initial_memory(i, briefing)
    else:
        for i in range(N_PURSUERS):
            memories[i] = policy.initial_memory(i)

    while not ep.done:
        commands = []
        for i, obs in ep.policy_observations():
            if scripted:
                ctx = PursuerContext(step=ep.steps, position=ep.pos[i],
                                     yaw=float(ep.yaw[i]),
                                     body_velocity=ep.vbody[i],
                                     observation=obs, limits=ep.pursuer_limits,
                                     dt=params.dt)
                cmd, memories[i] = controllers[i].act(ctx, memories[i], ep._noise_rngs[i])
            else:
                vec = perception.mask_observation(obs) if policy.obs_mode == "lite" else obs
                cmd, memories[i] = policy.act(vec, memories[i], ep._noise_rngs[i])
            commands.append(cmd)
        ep.step(commands)
        ep.refresh_guidance()
        if log_writer is not None:
            log_writer(step_record(ep))

    return EpisodeResult(
        outcome=ep.outcome, steps=ep.steps, seed=ep.seed,
        returns=[float(r) for r in ep.returns],
        event_counts=dict(sorted(ep.event_counts.items())),
        capture_distances=[float(d) for d in ep.dist],
        capture_agent=ep.capture_agent,
        gate_opened_step=ep.gate_opened_step)


def step_record(ep: Episode) -> dict:
    """JSON-ready snapshot of the episode after the latest step."""
    bds = ep.reward_breakdowns()
    return {
        "step": ep.steps,
        "positions": [[round(float(v), 6) for v in ep.pos[i]] for i in range(5)],
        "yaws": [round(float(y), 6) for y in ep.yaw],
        "body_velocities": [[round(float(v), 6) for v in ep.vbody[i]] for i in range(5)],
        "alive": [bool(a) for a in ep.alive],
        "gate_open": ep.gate_open,
        "exploration": round(ep.exploration_ratio, 6),
        "events": [list(e) for e in ep.events if e[0] == ep.steps],
        "rewards": [{
            "dir": b.dir_term, "cap": b.cap_term, "qual": b.qual_term,
            "col": b.col_term, "imp": b.imp_term, "lazy": b.lazy_term,
            "rho": b.rho, "share": b.share, "total": b.total,
        } for b in bds],
    }
