"""Topology-aware 3D A* over the voxel grid and guidance-vector extraction.

Paths are 26-connected with Euclidean inter-center edge costs, searched under
an admissible Euclidean heuristic with deterministic lowest-flat-index tie
breaking. Path costs are reported canonically from the step-type counts
(axis / face-diagonal / space-diagonal), so equal-cost paths always yield the
same float.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .world import VoxelGrid

SQRT2 = math.sqrt(2.0)
SQRT3 = math.sqrt(3.0)

REPLAN_STEP_INTERVAL = 10
REPLAN_TARGET_SHIFT = 12.0  # m, two voxels
LOOKAHEAD_DEFAULT = 12.0    # m
ARRIVAL_RADIUS_VOXELS = 0.5


def step_cost(n_axis: int, n_face: int, n_space: int, voxel_size: float) -> float:
    """Canonical cost of a path from its step-type counts."""
    return (n_axis + n_face * SQRT2 + n_space * SQRT3) * voxel_size


@dataclass(frozen=True)
class VoxelPath:
    """Ordered free-voxel chain from start to goal with its canonical cost."""

    voxels: tuple[tuple[int, int, int], ...]
    cost: float

    def __len__(self) -> int:
        return len(self.voxels)


def plan_astar(grid: VoxelGrid, start: Sequence[int], goal: Sequence[int]) -> Optional[VoxelPath]:
    """Cost-optimal path between two free voxels, or None when unreachable.

    Raises ValueError when either endpoint is occupied or out of bounds.
    """
    for name, idx in (("start", start), ("goal", goal)):
        if not grid.in_bounds_index(idx):
            raise ValueError(f"{name} voxel {tuple(idx)} out of bounds")
        if grid.occupied(idx):
            raise ValueError(f"{name} voxel {tuple(idx)} is occupied")
    nx, ny, nz = grid.dims
    s = grid.flat_index(*start)
    g = grid.flat_index(*goal)
    path_flat, n1, n2, n3, _ = kernels.astar_path(
        grid.cells, nx, ny, nz, grid.voxel_size, s, g)
    if path_flat.size == 0 and s != g:
        return None
    if s == g:
        return VoxelPath((tuple(int(v) for v in start),), 0.0)
    voxels = tuple(grid.unflatten(int(f)) for f in path_flat)
    return VoxelPath(voxels, step_cost(n1, n2, n3, grid.voxel_size))


def path_centers(grid: VoxelGrid, path: VoxelPath) -> np.ndarray:
    return np.array([grid.voxel_center(v) for v in path.voxels])


def guidance_from_centers(grid: VoxelGrid, centers: np.ndarray, agent_pos: np.ndarray,
                          lookahead: float = LOOKAHEAD_DEFAULT) -> np.ndarray:
    """guidance_from_path on a precomputed (L, 3) waypoint-center array."""
    out = np.zeros(3)
    nx, ny, nz = grid.dims
    kernels.guidance_vector(
        grid.cells, nx, ny, nz, grid.voxel_size,
        grid.origin[0], grid.origin[1], grid.origin[2],
        np.ascontiguousarray(centers, dtype=np.float64),
        float(agent_pos[0]), float(agent_pos[1]), float(agent_pos[2]),
        float(lookahead), ARRIVAL_RADIUS_VOXELS * grid.voxel_size, out)
    return out


def guidance_from_path(grid: VoxelGrid, path: VoxelPath, agent_pos: np.ndarray,
                       lookahead: float = LOOKAHEAD_DEFAULT) -> np.ndarray:
    """Unit vector from the agent toward the waypoint one lookahead of
    arc-length past the path vertex nearest to the agent.

    Returns the zero vector when the agent is within half a voxel of the
    final waypoint. If the straight line to the arc-length target is blocked
    within the first meter, the target backs off toward the nearest forward
    waypoint so the vector never points into a wall face next to the agent.
    """
    if len(path) == 0:
        raise ValueError("empty path")
    return guidance_from_centers(grid, path_centers(grid, path), agent_pos, lookahead)


def replan_due(step: int, last_plan_step: int, target_moved: float) -> bool:
    """Replan every REPLAN_STEP_INTERVAL steps or when the target has shifted
    more than REPLAN_TARGET_SHIFT meters since the last plan."""
    return (step - last_plan_step) >= REPLAN_STEP_INTERVAL or target_moved > REPLAN_TARGET_SHIFT


QUADRANT_SIGNS = ((1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0))


def frontier_goal(grid: VoxelGrid, visited: np.ndarray, agent_pos: np.ndarray,
                  agent_id: int) -> Optional[tuple[int, int, int]]:
    """Nearest unexplored free voxel in the agent's azimuthal quadrant (around
    the grid center), restricted to the agent's free component; falls back to
    any quadrant, and returns None when everything reachable is explored."""
    vox = grid.world_to_voxel(agent_pos)
    if vox is None:
        return None
    labels = grid.free_component_labels()
    label = int(labels[grid.flat_index(*vox)])
    if label == 0:
        return None
    qsx, qsy = QUADRANT_SIGNS[agent_id % 4]
    nx, ny, nz = grid.dims
    flat = kernels.nearest_frontier(
        grid.cells, visited, labels, nx, ny, nz, grid.voxel_size,
        grid.origin[0], grid.origin[1], grid.origin[2],
        float(agent_pos[0]), float(agent_pos[1]), float(agent_pos[2]),
        qsx, qsy, label)
    if flat < 0:
        return None
    return grid.unflatten(int(flat))
