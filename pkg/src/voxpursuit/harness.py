"""Benchmark and stress-sweep orchestration: deterministic episode seeding,
per-seed-then-across-seed aggregation, and persistent CSV/JSONL outputs with
full provenance.

Episode seeds derive from sha256(base_seed, method, episode_index), so any
single cell of any table can be reproduced in isolation, and rows at an
identity setting (sigma = 0, delay = 0) coincide with the unperturbed
benchmark under the same seeds.
"""
from __future__ import annotations

import csv
import hashlib
import importlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

from . import __version__, mapgen
from .agents import EvaderParams, PolicyInterface, SCRIPTED_METHODS
from .engine import (EngineParams, EpisodeResult, Perturbations, StageConfig,
                     run_episode)
from .rewards import RewardParams
from .world import VoxelGrid, load_map

DEFAULT_METHODS = ("astar", "apf_pn", "euclidean")
DEFAULT_SEEDS = (0, 1, 2)
DELAY_SEEDS = (0, 1, 2, 3, 4)
BENCH_EPISODES = 500
SWEEP_EPISODES = 200

SWEEP_GRIDS: dict[str, tuple] = {
    "speed": (7.0, 8.0, 9.0, 10.0),
    "yaw": (0.8, 0.6, 0.4, 0.2),
    "noise": (0.0, 0.05, 0.10, 0.15, 0.20),
    "delay": (0, 1, 2, 3),
    "density": (0.08, 0.12, 0.16, 0.20, 0.24),
}
DENSITY_MAP_SEED_BASE = 100  # unseen maps for the zero-shot axis


class ConfigError(ValueError):
    """Invalid harness configuration (reported before any episode runs)."""


@dataclass(frozen=True)
class BenchConfig:
    """One benchmark or sweep invocation."""

    map: str = "canonical"
    stage: int = 5
    methods: tuple[str, ...] = DEFAULT_METHODS
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    episodes: int = BENCH_EPISODES
    sigma: float = 0.0
    delay: int = 0
    evader_speed: Optional[float] = None
    yaw_cap: Optional[float] = None
    training_gate: bool = False
    engine: EngineParams = field(default_factory=EngineParams)
    evader: EvaderParams = field(default_factory=EvaderParams)
    rewards: Optional[RewardParams] = None
    out: Optional[str] = None
    log_trajectories: bool = False

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")
        if not self.methods:
            raise ConfigError("at least one method is required")
        if not self.seeds:
            raise ConfigError("at least one seed is required")


@dataclass(frozen=True)
class SweepSpec:
    """One stress axis: a value grid evaluated at episodes/setting/seed."""

    axis: str
    values: tuple = ()
    episodes: int = SWEEP_EPISODES
    seeds: tuple[int, ...] = ()

    def __post_init__(self):
        if self.axis not in SWEEP_GRIDS:
            raise ConfigError(
                f"unknown sweep axis {self.axis!r}; choose from {sorted(SWEEP_GRIDS)}")
        if not self.values:
            object.__setattr__(self, "values", SWEEP_GRIDS[self.axis])
        if not self.seeds:
            object.__setattr__(
                self, "seeds",
                DELAY_SEEDS if self.axis == "delay" else DEFAULT_SEEDS)
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")


@dataclass
class MetricsRow:
    """Aggregated metrics for one (method, axis, setting) cell."""

    method: str
    axis: str
    setting: str
    seeds: tuple[int, ...]
    episodes: int
    success_mean: float
    success_std: float
    clean_mean: float
    clean_std: float
    collision_mean: float
    collision_std: float
    avg_steps_mean: float
    avg_steps_std: float
    return_mean: float
    return_std: float
    map_hash: str
    config_hash: str
    engine_version: str


def episode_seed(base_seed: int, method: str, episode_index: int) -> int:
    """Stable 63-bit episode seed; independent of the sweep setting so that
    identity settings reproduce benchmark cells exactly."""
    digest = hashlib.sha256(
        f"{base_seed}|{method}|{episode_index}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def map_hash(grid: VoxelGrid) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(grid.dims, dtype=np.int64).tobytes())
    h.update(np.float64(grid.voxel_size).tobytes())
    h.update(grid.cells.tobytes())
    return h.hexdigest()[:16]


def config_hash(cfg: BenchConfig) -> str:
    doc = asdict(cfg)
    doc["rewards"] = asdict(cfg.rewards) if cfg.rewards is not None else None
    blob = json.dumps(doc, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def resolve_map(spec: str) -> VoxelGrid:
    if spec == "canonical":
        return mapgen.canonical_map()
    return load_map(spec)


def resolve_method(name: str) -> Union[str, PolicyInterface]:
    """Scripted method name, or 'plugin:module.path:attr' imported and
    instantiated. Raises ConfigError for anything unknown."""
    if name in SCRIPTED_METHODS:
        return name
    if name.startswith("plugin:"):
        try:
            _, modname, attr = name.split(":", 2)
            obj = getattr(importlib.import_module(modname), attr)
        except (ValueError, ImportError, AttributeError) as exc:
            raise ConfigError(f"cannot load policy plugin {name!r}: {exc}") from exc
        policy = obj() if callable(obj) and not isinstance(obj, PolicyInterface) else obj
        if not isinstance(policy, PolicyInterface):
            raise ConfigError(f"{name!r} does not provide the policy interface")
        return policy
    raise ConfigError(
        f"unknown method {name!r}; scripted methods: {sorted(SCRIPTED_METHODS)}, "
        "or use plugin:module:attr")


@dataclass
class EpisodeTask:
    method: str
    axis: str
    setting: str
    base_seed: int
    episode_index: int
    map_spec: str
    density: Optional[float]
    stage: int
    perturb: Perturbations
    cfg: BenchConfig


def _grid_for_task(task: EpisodeTask) -> VoxelGrid:
    if task.density is not None:
        idx = SWEEP_GRIDS["density"].index(task.density)
        return mapgen.generate(mapgen.MapSpec(
            target_density=task.density, seed=DENSITY_MAP_SEED_BASE + idx))
    return resolve_map(task.map_spec)


_WORKER_GRIDS: dict = {}


def _run_task(task: EpisodeTask) -> tuple:
    key = (task.map_spec, task.density)
    grid = _WORKER_GRIDS.get(key)
    if grid is None:
        grid = _grid_for_task(task)
        _WORKER_GRIDS[key] = grid
    stage = StageConfig.for_stage(task.stage)
    seed = episode_seed(task.base_seed, task.method, task.episode_index)
    log_writer = None
    traj_fh = None
    if task.cfg.log_trajectories and task.cfg.out:
        traj_dir = Path(task.cfg.out) / "traj"
        traj_dir.mkdir(parents=True, exist_ok=True)
        name = (f"{task.method}_{task.axis}_{task.setting}"
                f"_s{task.base_seed}_e{task.episode_index}.jsonl")
        traj_fh = open(traj_dir / name, "w")

        def log_writer(rec, fh=traj_fh):
            fh.write(json.dumps(rec, sort_keys=True))
            fh.write("\n")
    try:
        result = run_episode(
            grid, stage, seed, resolve_method(task.method),
            perturb=task.perturb, params=task.cfg.engine,
            evader_params=task.cfg.evader, reward_params=task.cfg.rewards,
            training_gate=task.cfg.training_gate, log_writer=log_writer)
    finally:
        if traj_fh is not None:
            traj_fh.close()
    return (task.method, task.axis, task.setting, task.base_seed,
            task.episode_index, result)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("VOXPURSUIT_WORKERS", "1")))
    except ValueError:
        return 1


def _execute(tasks: list[EpisodeTask],
             progress: Optional[Callable[[int, int], None]] = None) -> list[tuple]:
    results = []
    workers = worker_count()
    if workers == 1:
        for k, t in enumerate(tasks):
            results.append(_run_task(t))
            if progress:
                progress(k + 1, len(tasks))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for k, r in enumerate(pool.map(_run_task, tasks, chunksize=8)):
                results.append(r)
                if progress:
                    progress(k + 1, len(tasks))
    # merge order must not depend on scheduling
    results.sort(key=lambda r: (r[0], r[2], r[3], r[4]))
    return results


def aggregate(per_seed_episodes: dict[int, list[EpisodeResult]]) -> dict[str, float]:
    """Per-seed means first, then mean and population std across seeds."""
    if not per_seed_episodes:
        raise ValueError("nothing to aggregate")
    seed_rows = []
    for seed in sorted(per_seed_episodes):
        eps = per_seed_episodes[seed]
        seed_rows.append((
            float(np.mean([e.success for e in eps])),
            float(np.mean([e.clean for e in eps])),
            float(np.mean([e.collision for e in eps])),
            float(np.mean([e.steps for e in eps])),
            float(np.mean([e.mean_return for e in eps])),
        ))
    arr = np.array(seed_rows)
    mean = arr.mean(axis=0)
    std = arr.std(axis=0)  # population std across seeds
    names = ("success", "clean", "collision", "avg_steps", "return")
    out = {}
    for i, n in enumerate(names):
        out[f"{n}_mean"] = float(mean[i])
        out[f"{n}_std"] = float(std[i])
    return out


def _build_rows(cfg: BenchConfig, axis: str, setting_of: dict,
                results: list[tuple], grids_hash: dict[str, str]) -> list[MetricsRow]:
    chash = config_hash(cfg)
    grouped: dict[tuple[str, str], dict[int, list[EpisodeResult]]] = {}
    for method, ax, setting, seed, _idx, res in results:
        grouped.setdefault((method, setting), {}).setdefault(seed, []).append(res)
    rows = []
    for (method, setting), by_seed in sorted(grouped.items()):
        agg = aggregate(by_seed)
        episodes = len(next(iter(by_seed.values())))
        rows.append(MetricsRow(
            method=method, axis=axis, setting=setting,
            seeds=tuple(sorted(by_seed)), episodes=episodes,
            success_mean=agg["success_mean"], success_std=agg["success_std"],
            clean_mean=agg["clean_mean"], clean_std=agg["clean_std"],
            collision_mean=agg["collision_mean"], collision_std=agg["collision_std"],
            avg_steps_mean=agg["avg_steps_mean"], avg_steps_std=agg["avg_steps_std"],
            return_mean=agg["return_mean"], return_std=agg["return_std"],
            map_hash=grids_hash.get(setting, grids_hash.get("", "")),
            config_hash=chash, engine_version=__version__))
    rows.sort(key=lambda r: (r.axis, _setting_sort_key(r.setting), r.method))
    return rows


def _setting_sort_key(s: str):
    try:
        return (0, float(s))
    except ValueError:
        return (1, s)


def run_benchmark(cfg: BenchConfig,
                  progress: Optional[Callable[[int, int], None]] = None
                  ) -> tuple[list[MetricsRow], list[tuple]]:
    """Full methods x seeds x episodes cross product on the configured map."""
    for m in cfg.methods:
        resolve_method(m)  # fail fast on config errors
    grid = resolve_map(cfg.map)
    ghash = map_hash(grid)
    perturb = Perturbations(sigma=cfg.sigma, delay_k=cfg.delay,
                            evader_speed=cfg.evader_speed,
                            pursuer_yaw_cap=cfg.yaw_cap)
    tasks = [EpisodeTask(method=m, axis="benchmark", setting="benchmark",
                         base_seed=s, episode_index=k, map_spec=cfg.map,
                         density=None, stage=cfg.stage, perturb=perturb, cfg=cfg)
             for m in cfg.methods for s in cfg.seeds for k in range(cfg.episodes)]
    results = _execute(tasks, progress)
    rows = _build_rows(cfg, "benchmark", {}, results, {"benchmark": ghash, "": ghash})
    return rows, results


def run_sweep(spec: SweepSpec, cfg: BenchConfig,
              progress: Optional[Callable[[int, int], None]] = None
              ) -> tuple[list[MetricsRow], list[tuple]]:
    """One stress axis: each grid value overrides the corresponding knob.

    speed -> evader speed cap, yaw -> pursuer yaw-rate cap, noise -> sigma,
    delay -> action delay, density -> a freshly generated unseen map.
    """
    for m in cfg.methods:
        resolve_method(m)
    base = Perturbations(sigma=cfg.sigma, delay_k=cfg.delay,
                         evader_speed=cfg.evader_speed,
                         pursuer_yaw_cap=cfg.yaw_cap)
    seeds = spec.seeds
    tasks = []
    grids_hash: dict[str, str] = {}
    for value in spec.values:
        setting = _format_setting(value)
        density = None
        perturb = base
        if spec.axis == "speed":
            perturb = replace(base, evader_speed=float(value))
        elif spec.axis == "yaw":
            perturb = replace(base, pursuer_yaw_cap=float(value))
        elif spec.axis == "noise":
            perturb = replace(base, sigma=float(value))
        elif spec.axis == "delay":
            perturb = replace(base, delay_k=int(value))
        elif spec.axis == "density":
            density = float(value)
        if density is not None:
            idx = SWEEP_GRIDS["density"].index(density)
            g = mapgen.generate(mapgen.MapSpec(
                target_density=density, seed=DENSITY_MAP_SEED_BASE + idx))
            grids_hash[setting] = map_hash(g)
        else:
            grids_hash[setting] = map_hash(resolve_map(cfg.map))
        for m in cfg.methods:
            for s in seeds:
                for k in range(spec.episodes):
                    tasks.append(EpisodeTask(
                        method=m, axis=spec.axis, setting=setting,
                        base_seed=s, episode_index=k, map_spec=cfg.map,
                        density=density, stage=cfg.stage, perturb=perturb,
                        cfg=cfg))
    results = _execute(tasks, progress)
    rows = _build_rows(cfg, spec.axis, {}, results, grids_hash)
    return rows, results


def _format_setting(value) -> str:
    if isinstance(value, float):
        return f"{value:g}"
    return str(value)


# -- persistence -----------------------------------------------------------------

CSV_COLUMNS = [
    "method", "axis", "setting", "seeds", "episodes",
    "success_mean", "success_std", "clean_mean", "clean_std",
    "collision_mean", "collision_std", "avg_steps_mean", "avg_steps_std",
    "return_mean", "return_std", "map_hash", "config_hash", "engine_version",
]


def _fmt(x) -> str:
    if isinstance(x, float):
        return format(x, ".10g")
    if isinstance(x, tuple):
        return "|".join(str(v) for v in x)
    return str(x)


def write_summary_csv(rows: Iterable[MetricsRow], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in rows:
            w.writerow([_fmt(getattr(r, c)) for c in CSV_COLUMNS])


def write_episodes_jsonl(results: Iterable[tuple], path: Union[str, Path]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for method, axis, setting, seed, idx, res in results:
            fh.write(json.dumps({
                "method": method, "axis": axis, "setting": setting,
                "seed": seed, "episode": idx,
                "episode_seed": episode_seed(seed, method, idx),
                "outcome": res.outcome, "steps": res.steps,
                "success": res.success, "clean": res.clean,
                "collision": res.collision,
                "returns": [round(r, 9) for r in res.returns],
                "events": res.event_counts,
                "gate_opened_step": res.gate_opened_step,
            }, sort_keys=True))
            fh.write("\n")


def write_plot_data(rows: Sequence[MetricsRow], out_dir: Union[str, Path]) -> list[Path]:
    """Reshape a summary into per-axis series files for external plotting."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    axes = sorted({r.axis for r in rows})
    for axis in axes:
        axis_rows = [r for r in rows if r.axis == axis]
        methods = sorted({r.method for r in axis_rows})
        settings = sorted({r.setting for r in axis_rows}, key=_setting_sort_key)
        path = out_dir / f"axis_{axis}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            header = ["setting"]
            for m in methods:
                for metric in ("success", "clean", "collision", "avg_steps", "return"):
                    header += [f"{m}_{metric}_mean", f"{m}_{metric}_std"]
            w.writerow(header)
            for s in settings:
                row = [s]
                for m in methods:
                    cell = next((r for r in axis_rows
                                 if r.method == m and r.setting == s), None)
                    for metric in ("success", "clean", "collision", "avg_steps", "return"):
                        if cell is None:
                            row += ["", ""]
                        else:
                            row += [_fmt(getattr(cell, f"{metric}_mean")),
                                    _fmt(getattr(cell, f"{metric}_std"))]
                w.writerow(row)
        written.append(path)
    return written


# -- config files ------------------------------------------------------------------

def load_config(path: Optional[str] = None, **overrides) -> BenchConfig:
    """Build a BenchConfig from an optional JSON file plus keyword overrides
    (CLI flags). Nested engine/evader/rewards dicts override field-wise."""
    doc: dict = {}
    if path is not None:
        with open(path) as fh:
            doc = json.load(fh)
    doc.update({k: v for k, v in overrides.items() if v is not None})
    engine = EngineParams(**doc.pop("engine", {})) if not isinstance(
        doc.get("engine"), EngineParams) else doc.pop("engine")
    evader = EvaderParams(**doc.pop("evader", {})) if not isinstance(
        doc.get("evader"), EvaderParams) else doc.pop("evader")
    rew = doc.pop("rewards", None)
    if isinstance(rew, dict):
        rew = RewardParams(**rew)
    for key in ("methods", "seeds"):
        if key in doc and isinstance(doc[key], list):
            doc[key] = tuple(doc[key])
    try:
        return BenchConfig(engine=engine, evader=evader, rewards=rew, **doc)
    except TypeError as exc:
        raise ConfigError(f"bad config key: {exc}") from exc
