"""Independent reference implementations used to pin expected values.

These stay deliberately naive (marching, BFS, heapq Dijkstra) so they cannot
share bugs with the fast paths they check.
"""
from __future__ import annotations

import heapq
import math

import numpy as np


def ray_march(grid, origin, direction, max_range, step=0.01):
    """Brute-force raycast: walk the ray in `step` increments and report the
    first sample inside an occupied voxel or outside the grid."""
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    t = 0.0
    while t <= max_range:
        p = origin + t * direction
        vox = grid.world_to_voxel(p)
        if vox is None or grid.occupied(vox):
            return t
        t += step
    return None


def free_components_bfs(grid):
    """Sizes of 6-connected free components, largest first."""
    nx, ny, nz = grid.dims
    seen = set()
    sizes = []
    for z in range(nz):
        for y in range(ny):
            for x in range(nx):
                if (x, y, z) in seen or grid.occupied((x, y, z)):
                    continue
                size = 0
                queue = [(x, y, z)]
                seen.add((x, y, z))
                while queue:
                    cx, cy, cz = queue.pop()
                    size += 1
                    for dx, dy, dz in ((1, 0, 0), (-1, 0, 0), (0, 1, 0),
                                       (0, -1, 0), (0, 0, 1), (0, 0, -1)):
                        n = (cx + dx, cy + dy, cz + dz)
                        if (0 <= n[0] < nx and 0 <= n[1] < ny and 0 <= n[2] < nz
                                and n not in seen and not grid.occupied(n)):
                            seen.add(n)
                            queue.append(n)
                sizes.append(size)
    return sorted(sizes, reverse=True)


def dijkstra(grid, start, goal):
    """Shortest 26-connected path cost as step-type counts, or None.

    Returns (n_axis, n_face_diagonal, n_space_diagonal) so the caller can
    build the canonical float cost exactly like the implementation under
    test.
    """
    nx, ny, nz = grid.dims

    def flat(v):
        return (v[2] * ny + v[1]) * nx + v[0]

    start_f = flat(start)
    goal_f = flat(goal)
    dist = {start_f: 0.0}
    parent = {}
    heap = [(0.0, start_f)]
    done = set()
    while heap:
        d, node = heapq.heappop(heap)
        if node in done:
            continue
        done.add(node)
        if node == goal_f:
            break
        x = node % nx
        y = (node // nx) % ny
        z = node // (nx * ny)
        for dz in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    if dx == dy == dz == 0:
                        continue
                    xx, yy, zz = x + dx, y + dy, z + dz
                    if not (0 <= xx < nx and 0 <= yy < ny and 0 <= zz < nz):
                        continue
                    if grid.occupied((xx, yy, zz)):
                        continue
                    nb = (zz * ny + yy) * nx + xx
                    w = math.sqrt(abs(dx) + abs(dy) + abs(dz)) * grid.voxel_size
                    nd = d + w
                    if nd < dist.get(nb, math.inf):
                        dist[nb] = nd
                        parent[nb] = node
                        heapq.heappush(heap, (nd, nb))
    if goal_f not in done:
        return None
    counts = [0, 0, 0]
    node = goal_f
    while node != start_f:
        p = parent[node]
        ax, ay, az = node % nx, (node // nx) % ny, node // (nx * ny)
        bx, by, bz = p % nx, (p // nx) % ny, p // (nx * ny)
        counts[abs(ax - bx) + abs(ay - by) + abs(az - bz) - 1] += 1
        node = p
    return tuple(counts)
