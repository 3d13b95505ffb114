"""Immutable 3D voxel occupancy world: raycasts, line of sight, statistics,
and the `.vmap.json` map file format.

Occupancy is stored flat with row-major x-fastest layout:
flat = (z * ny + y) * nx + x. The grid boundary behaves as occupied for
raycasts and motion, so the arena is closed.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from . import kernels


class MapFormatError(ValueError):
    """Raised when a map file fails structural validation."""


@dataclass(frozen=True)
class WorldStats:
    """Aggregate occupancy statistics of a grid."""

    occupancy_ratio: float
    largest_free_component_ratio: float
    band_occupancy: tuple[float, float, float]


class VoxelGrid:
    """Immutable boolean occupancy grid with world-frame geometry attached.

    dims are (nx, ny, nz); world extent is dims * voxel_size starting at
    `origin`. Statistics and the free-component labeling are computed lazily
    and cached; the occupancy buffer is write-protected after construction.
    """

    def __init__(self, dims: Sequence[int], voxel_size: float,
                 occupancy: np.ndarray, origin: Sequence[float] = (0.0, 0.0, 0.0)):
        nx, ny, nz = (int(d) for d in dims)
        if nx <= 0 or ny <= 0 or nz <= 0:
            raise ValueError(f"dims must be strictly positive, got {dims!r}")
        if voxel_size <= 0:
            raise ValueError("voxel_size must be positive")
        cells = np.ascontiguousarray(occupancy, dtype=np.uint8).reshape(-1)
        if cells.size != nx * ny * nz:
            raise ValueError(
                f"occupancy has {cells.size} cells, expected {nx * ny * nz}")
        cells = cells.copy()
        cells.flags.writeable = False
        self.dims = (nx, ny, nz)
        self.voxel_size = float(voxel_size)
        self.origin = (float(origin[0]), float(origin[1]), float(origin[2]))
        self.cells = cells
        self._stats: Optional[WorldStats] = None
        self._labels: Optional[np.ndarray] = None

    # -- construction helpers -------------------------------------------------

    @classmethod
    def empty(cls, dims: Sequence[int], voxel_size: float,
              origin: Sequence[float] = (0.0, 0.0, 0.0)) -> "VoxelGrid":
        nx, ny, nz = (int(d) for d in dims)
        return cls(dims, voxel_size, np.zeros(nx * ny * nz, dtype=np.uint8), origin)

    def with_occupancy(self, occupancy: np.ndarray) -> "VoxelGrid":
        return VoxelGrid(self.dims, self.voxel_size, occupancy, self.origin)

    # -- indexing -------------------------------------------------------------

    @property
    def extent(self) -> tuple[float, float, float]:
        nx, ny, nz = self.dims
        v = self.voxel_size
        return (nx * v, ny * v, nz * v)

    def flat_index(self, ix: int, iy: int, iz: int) -> int:
        nx, ny, nz = self.dims
        return (iz * ny + iy) * nx + ix

    def unflatten(self, flat: int) -> tuple[int, int, int]:
        nx, ny, _ = self.dims
        return (flat % nx, (flat // nx) % ny, flat // (nx * ny))

    def in_bounds_index(self, idx: Sequence[int]) -> bool:
        nx, ny, nz = self.dims
        ix, iy, iz = idx
        return 0 <= ix < nx and 0 <= iy < ny and 0 <= iz < nz

    def occupied(self, idx: Sequence[int]) -> bool:
        if not self.in_bounds_index(idx):
            raise IndexError(f"voxel index {tuple(idx)} out of bounds {self.dims}")
        return bool(self.cells[self.flat_index(*idx)])

    def world_to_voxel(self, p: Sequence[float]) -> Optional[tuple[int, int, int]]:
        """Voxel index containing world point p, or None when out of bounds.

        Faces belong to the upper cell (floor convention).
        """
        v = self.voxel_size
        ix = math.floor((p[0] - self.origin[0]) / v)
        iy = math.floor((p[1] - self.origin[1]) / v)
        iz = math.floor((p[2] - self.origin[2]) / v)
        idx = (int(ix), int(iy), int(iz))
        return idx if self.in_bounds_index(idx) else None

    def voxel_center(self, idx: Sequence[int]) -> np.ndarray:
        v = self.voxel_size
        return np.array([self.origin[0] + (idx[0] + 0.5) * v,
                         self.origin[1] + (idx[1] + 0.5) * v,
                         self.origin[2] + (idx[2] + 0.5) * v])

    def in_bounds_point(self, p: Sequence[float]) -> bool:
        return self.world_to_voxel(p) is not None

    # -- geometry queries -----------------------------------------------------

    def raycast(self, origin: Sequence[float], direction: Sequence[float],
                max_range: float) -> Optional[float]:
        """Distance to the first occupied-voxel face or grid boundary along a
        unit ray, or None when the ray is clear for the full max_range.
        """
        dx, dy, dz = float(direction[0]), float(direction[1]), float(direction[2])
        norm = math.sqrt(dx * dx + dy * dy + dz * dz)
        if not math.isfinite(norm) or abs(norm - 1.0) > 1e-6:
            raise ValueError(f"direction must be unit length, got norm {norm}")
        nx, ny, nz = self.dims
        hit = kernels.ray_distance(
            self.cells, nx, ny, nz,
            self.origin[0], self.origin[1], self.origin[2],
            float(origin[0]), float(origin[1]), float(origin[2]),
            dx, dy, dz, float(max_range), self.voxel_size)
        return None if hit < 0.0 else float(hit)

    def line_of_sight(self, a: Sequence[float], b: Sequence[float]) -> bool:
        """True when the open segment from a to b crosses no occupied voxel."""
        if not self.in_bounds_point(a) or not self.in_bounds_point(b):
            raise ValueError("line_of_sight endpoints must lie inside the grid")
        nx, ny, nz = self.dims
        return bool(kernels.los_clear_v(
            self.cells, nx, ny, nz, self.voxel_size,
            self.origin[0], self.origin[1], self.origin[2],
            float(a[0]), float(a[1]), float(a[2]),
            float(b[0]), float(b[1]), float(b[2])))

    # -- statistics -----------------------------------------------------------

    def free_component_labels(self) -> np.ndarray:
        """Label array over free voxels (flat int32; 0 on occupied cells).

        Components are 6-connected (face adjacency). Labels are renumbered so
        the largest component is 1.
        """
        if self._labels is None:
            nx, ny, nz = self.dims
            free = (self.cells == 0).reshape(nz, ny, nx)
            structure = ndimage.generate_binary_structure(3, 1)
            labels, n = ndimage.label(free, structure=structure)
            if n > 1:
                sizes = np.bincount(labels.reshape(-1))
                sizes[0] = 0
                order = np.argsort(-sizes, kind="stable")
                remap = np.zeros(n + 1, dtype=np.int32)
                rank = 1
                for lbl in order:
                    if sizes[lbl] > 0:
                        remap[lbl] = rank
                        rank += 1
                labels = remap[labels]
            self._labels = np.ascontiguousarray(labels.reshape(-1), dtype=np.int32)
            self._labels.flags.writeable = False
        return self._labels

    def stats(self) -> WorldStats:
        if self._stats is None:
            self._stats = compute_stats(self)
        return self._stats


def compute_stats(grid: VoxelGrid) -> WorldStats:
    """Occupancy ratio, largest 6-connected free component share, and
    per-altitude-band occupancy over z-thirds (low, mid, high)."""
    nx, ny, nz = grid.dims
    total = nx * ny * nz
    occupied = int(grid.cells.sum())
    free = total - occupied
    if free == 0:
        component = 1.0  # vacuous: no free space to fragment
    else:
        labels = grid.free_component_labels()
        largest = int((labels == 1).sum())
        component = largest / free
    occ3d = grid.cells.reshape(nz, ny, nx)
    bands = [0.0, 0.0, 0.0]
    counts = [0, 0, 0]
    sums = [0, 0, 0]
    for z in range(nz):
        b = min(2, 3 * z // nz) if nz >= 1 else 0
        counts[b] += nx * ny
        sums[b] += int(occ3d[z].sum())
    for b in range(3):
        bands[b] = sums[b] / counts[b] if counts[b] else 0.0
    return WorldStats(
        occupancy_ratio=occupied / total,
        largest_free_component_ratio=component,
        band_occupancy=(bands[0], bands[1], bands[2]),
    )


# -- map file format -----------------------------------------------------------

MAP_SUFFIX = ".vmap.json"


def occupancy_rle(cells: np.ndarray) -> list[list[int]]:
    """Run-length encode a flat 0/1 array as [value, run] pairs."""
    out: list[list[int]] = []
    if cells.size == 0:
        return out
    changes = np.flatnonzero(np.diff(cells)) + 1
    starts = np.concatenate(([0], changes))
    ends = np.concatenate((changes, [cells.size]))
    for s, e in zip(starts, ends):
        out.append([int(cells[s]), int(e - s)])
    return out


def rle_to_occupancy(rle: list, expected: int) -> np.ndarray:
    cells = np.empty(expected, dtype=np.uint8)
    pos = 0
    for pair in rle:
        if len(pair) != 2:
            raise MapFormatError(f"bad RLE pair {pair!r}")
        value, run = pair
        if value not in (0, 1) or not isinstance(run, int) or run <= 0:
            raise MapFormatError(f"bad RLE pair {pair!r}")
        if pos + run > expected:
            raise MapFormatError(
                f"RLE expands past {expected} cells")
        cells[pos:pos + run] = value
        pos += run
    if pos != expected:
        raise MapFormatError(
            f"RLE covers {pos} cells, grid needs {expected}")
    return cells


def save_map(grid: VoxelGrid, path: str, seed: Optional[int] = None,
             generator_params: Optional[dict] = None) -> None:
    doc = {
        "dims": list(grid.dims),
        "voxel_size": grid.voxel_size,
        "origin": list(grid.origin),
        "seed": seed,
        "generator_params": generator_params,
        "rle": occupancy_rle(grid.cells),
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")


def load_map(path: str) -> VoxelGrid:
    with open(path) as fh:
        doc = json.load(fh)
    try:
        dims = doc["dims"]
        voxel_size = doc["voxel_size"]
        origin = doc.get("origin", [0.0, 0.0, 0.0])
        rle = doc["rle"]
    except (KeyError, TypeError) as exc:
        raise MapFormatError(f"missing map field: {exc}") from exc
    if not (isinstance(dims, list) and len(dims) == 3):
        raise MapFormatError(f"dims must be a 3-list, got {dims!r}")
    nx, ny, nz = (int(d) for d in dims)
    cells = rle_to_occupancy(rle, nx * ny * nz)
    return VoxelGrid(dims, float(voxel_size), cells, origin)
