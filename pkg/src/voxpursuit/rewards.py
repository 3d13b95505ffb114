"""Per-agent reward decomposition with locality-gated team credit.

Each step, every pursuer receives
    r_i = w_closure * gate(d_i) * (d_prev_i - d_i)
        + w_capture * rho * share_i * [capture]
        + w_quality * q_i
        - w_collision * collision_count_i
        - w_impact * impact_intensity_i
        - w_lazy * [far and not closing]
where gate() falls linearly from 1 inside 40 m to 0 beyond 80 m, share_i
normalizes hard-gated (60 m) raw contributions across the team, and rho
downscales the capture bonus when fewer than half the living pursuers are
actively closing.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence


@dataclass(frozen=True)
class RewardParams:
    """Weights and thresholds of the credit structure.

    The 40/60/80 m knots align with the 60 m sensing range: full closure
    credit inside 40 m, no capture share beyond 60 m, no closure credit
    beyond 80 m.
    """

    w_closure: float = 0.1      # per meter of range closed
    w_capture: float = 10.0
    w_quality: float = 1.0
    w_collision: float = 1.0
    w_impact: float = 0.5
    w_lazy: float = 0.05
    alpha_proximity: float = 1.0
    alpha_velocity: float = 0.5
    alpha_radius: float = 2.0
    proximity_scale: float = 20.0   # m, exponential falloff of proximity credit
    epsilon: float = 1e-8
    gate_inner: float = 40.0
    gate_outer: float = 80.0
    hard_gate: float = 60.0
    participation_closing: float = 0.5  # m/s
    participation_fraction: float = 0.5
    capture_radius: float = 8.0

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if not (self.gate_inner < self.hard_gate < self.gate_outer):
            raise ValueError("gate knots must be ordered inner < hard < outer")
        for name in ("w_closure", "w_capture", "w_quality", "w_collision",
                     "w_impact", "w_lazy", "alpha_proximity", "alpha_velocity",
                     "alpha_radius"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


@dataclass
class RewardBreakdown:
    """One pursuer's reward terms for one step. total is the exact signed sum."""

    dir_term: float = 0.0
    cap_term: float = 0.0
    qual_term: float = 0.0
    col_term: float = 0.0
    imp_term: float = 0.0
    lazy_term: float = 0.0
    rho: float = 0.0
    share: float = 0.0

    @property
    def total(self) -> float:
        return (self.dir_term + self.cap_term + self.qual_term
                - self.col_term - self.imp_term - self.lazy_term)


def directional_gate(d: float, params: RewardParams = RewardParams()) -> float:
    """Closure-credit weight: 1 inside the inner knot, linear to 0 at the
    outer knot. Continuous and nonincreasing."""
    if d < 0:
        raise ValueError("distance must be >= 0")
    if d <= params.gate_inner:
        return 1.0
    if d <= params.gate_outer:
        return (params.gate_outer - d) / (params.gate_outer - params.gate_inner)
    return 0.0


def raw_contribution(d: float, v_closing: float,
                     params: RewardParams = RewardParams()) -> float:
    """Unnormalized capture credit, hard-gated beyond 60 m: proximity decay
    plus rectified closing speed plus a capture-radius bonus."""
    if d < 0:
        raise ValueError("distance must be >= 0")
    if d > params.hard_gate:
        return 0.0
    c = params.alpha_proximity * math.exp(-d / params.proximity_scale)
    c += params.alpha_velocity * max(v_closing, 0.0)
    if d <= params.capture_radius:
        c += params.alpha_radius
    return c


def normalized_shares(raw: Sequence[float], epsilon: float = 1e-8) -> list[float]:
    """share_i = raw_i / (sum_j raw_j + epsilon); all zeros stay zero."""
    total = sum(raw) + epsilon
    return [c / total for c in raw]


def participation_ratio(distances: Sequence[float], closing: Sequence[float],
                        n_alive: int,
                        params: RewardParams = RewardParams()) -> float:
    """min(1, participants / (fraction * n_alive)) where a participant is
    within the hard gate and closing faster than the threshold."""
    if n_alive < 1 or len(distances) != n_alive or len(closing) != n_alive:
        raise ValueError("distances/closing must both have length n_alive >= 1")
    active = sum(1 for d, v in zip(distances, closing)
                 if d <= params.hard_gate and v > params.participation_closing)
    return min(1.0, active / (params.participation_fraction * n_alive))


def collision_indicator(obstacle_hit: bool, team_hit: bool, shield: bool) -> int:
    """Unified collision count: obstacle impacts, inter-agent contacts and
    safety-shield triggers are additive."""
    return int(obstacle_hit) + int(team_hit) + int(shield)


def capture_quality(azimuth_list: Sequence[float]) -> float:
    """Encirclement quality from the azimuths (radians, around the evader) of
    the pursuers inside the hard gate: complement of the largest angular gap,
    as a fraction of the full circle. One pursuer covers nothing."""
    n = len(azimuth_list)
    if n <= 1:
        return 0.0
    az = sorted(azimuth_list)
    gap = 2.0 * math.pi - (az[-1] - az[0])
    for i in range(1, n):
        gap = max(gap, az[i] - az[i - 1])
    return (2.0 * math.pi - gap) / (2.0 * math.pi)


@dataclass
class TeamStepContext:
    """Everything the credit structure needs about one step.

    Lists are indexed over the pursuers that acted this step (alive at the
    step start). Azimuths are only needed on the capture step.
    """

    dist_prev: Sequence[float]
    dist_curr: Sequence[float]
    dt: float
    captured: bool
    obstacle_hit: Sequence[bool]
    team_hit: Sequence[bool]
    shield: Sequence[bool]
    impact_intensity: Sequence[float]
    azimuths: Optional[Sequence[float]] = None


def team_step_rewards(ctx: TeamStepContext,
                      params: RewardParams = RewardParams()) -> list[RewardBreakdown]:
    """Reward breakdowns for every acting pursuer for one step."""
    n = len(ctx.dist_curr)
    if not (len(ctx.dist_prev) == len(ctx.obstacle_hit) == len(ctx.team_hit)
            == len(ctx.shield) == len(ctx.impact_intensity) == n) or n < 1:
        raise ValueError("inconsistent team sizes in step context")
    closing = [(dp - dc) / ctx.dt for dp, dc in zip(ctx.dist_prev, ctx.dist_curr)]
    out = []
    if ctx.captured:
        raw = [raw_contribution(d, v, params) for d, v in zip(ctx.dist_curr, closing)]
        shares = normalized_shares(raw, params.epsilon)
        rho = participation_ratio(ctx.dist_curr, closing, n, params)
        within = [i for i in range(n) if ctx.dist_curr[i] <= params.hard_gate]
        if ctx.azimuths is not None and len(within) > 0:
            q_total = capture_quality([ctx.azimuths[i] for i in within])
            q_each = q_total / len(within)
        else:
            q_each = 0.0
    else:
        shares = [0.0] * n
        rho = 0.0
        within = []
        q_each = 0.0
    for i in range(n):
        b = RewardBreakdown(rho=rho, share=shares[i])
        d = ctx.dist_curr[i]
        b.dir_term = params.w_closure * directional_gate(d, params) * (ctx.dist_prev[i] - d)
        if ctx.captured:
            b.cap_term = params.w_capture * rho * shares[i]
            if i in within:
                b.qual_term = params.w_quality * q_each
        b.col_term = params.w_collision * collision_indicator(
            ctx.obstacle_hit[i], ctx.team_hit[i], ctx.shield[i])
        b.imp_term = params.w_impact * ctx.impact_intensity[i]
        if d > params.gate_outer and closing[i] <= 0.0:
            b.lazy_term = params.w_lazy
        out.append(b)
    return out


def per_agent_reward(agent_index: int, ctx: TeamStepContext,
                     params: RewardParams = RewardParams()) -> RewardBreakdown:
    """Breakdown for a single pursuer (team context still required, since the
    capture share and participation ratio are team-level quantities)."""
    return team_step_rewards(ctx, params)[agent_index]
