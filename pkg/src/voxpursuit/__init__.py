"""voxpursuit: deterministic 4-vs-1 pursuit-evasion on 3D voxel maps."""

__version__ = "0.1.0"

from .agents import (EvaderParams, PolicyInterface, PursuerContext,
                     evader_policy, make_scripted, SCRIPTED_METHODS)
from .engine import (Episode, EngineParams, EpisodeResult, MapUnusableError,
                     Perturbations, StageConfig, run_episode)
from .kinematics import (AgentState, ControlCommand, ControlLimits,
                         capture_check, clamp_control, closing_speed, step_agent)
from .perception import (DelayBuffer, FULL_DIM, LITE_DIM, apply_noise,
                         assemble_full, channel_map, mask_observation)
from .planner import (VoxelPath, frontier_goal, guidance_from_path, plan_astar,
                      replan_due)
from .rewards import (RewardBreakdown, RewardParams, collision_indicator,
                      directional_gate, normalized_shares, participation_ratio,
                      per_agent_reward, raw_contribution, team_step_rewards)
from .world import (MapFormatError, VoxelGrid, WorldStats, compute_stats,
                    load_map, save_map)
