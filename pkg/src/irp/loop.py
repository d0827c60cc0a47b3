"""The iterative residual control loop: execute, observe, sample delta
actions, predict each one's trajectory, execute the best-predicted delta.

Executed rope distances d_i are exact point-to-polyline distances of the
observed tip track; candidate selection operates on thresholded predicted
grids (nearest supra-threshold cell center), so predicted values carry a
quantization offset of at most half a cell diagonal relative to d_i.
Cloth distances are the mean settled keypoint distance on both sides.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    GridSpec,
    SimulationDiverged,
    Trajectory,
    WorldVariant,
    apply_delta,
    denormalize_action,
    derive_seed,
    rng_stream,
)
from .predictor import Prediction
from .raster import (
    grid_min_distance,
    mean_keypoint_distance,
    min_distance,
    rasterize,
)

STOP_REACHED = "reached"
STOP_MAX_STEP = "max_step"
STOP_DIVERGED = "diverged"


@dataclass(frozen=True)
class IRPConfig:
    n_samples: int = 128
    sigma_gain: float = 0.5       # sigma = sigma_gain * d_i (adaptive)
    sigma_cap: float = 0.25       # normalized units
    threshold: float = 0.2
    d_stop: float = 0.02          # m
    max_step: int = 16            # 16 for simulation, 10 for deployment
    adaptive_sigma: bool = True
    const_sigma: float = 0.125    # used when adaptive_sigma is off

    def __post_init__(self):
        if self.n_samples < 1 or self.max_step < 1:
            raise ValueError("n_samples and max_step must be >= 1")
        if not (0.0 < self.threshold < 1.0):
            raise ValueError("threshold must lie in (0, 1)")
        if self.d_stop < 0.0:
            raise ValueError("d_stop must be >= 0")

    def replace(self, **kw) -> "IRPConfig":
        from dataclasses import replace as _replace
        return _replace(self, **kw)


@dataclass
class IterationRecord:
    action: np.ndarray                 # normalized, as executed
    trajectory: Trajectory
    distance: float                    # m
    deltas: np.ndarray | None = None   # (n_samples, N_a)
    predicted_best_distance: float | None = None
    selected_index: int | None = None


@dataclass
class EpisodeLog:
    iterations: list[IterationRecord] = field(default_factory=list)
    stop_reason: str = STOP_MAX_STEP

    @property
    def distances(self) -> list[float]:
        return [it.distance for it in self.iterations]

    @property
    def final_distance(self) -> float:
        return self.iterations[-1].distance if self.iterations else math.nan

    @property
    def final_action(self) -> np.ndarray | None:
        return self.iterations[-1].action if self.iterations else None


@dataclass(frozen=True)
class Env:
    """A plant: simulator + object parameters + world variant + raster spec."""

    task: str
    params: object
    world: WorldVariant
    grid_spec: GridSpec

    def execute(self, a_norm: np.ndarray, seed: int) -> Trajectory:
        from . import sim_cloth, sim_rope
        action = denormalize_action(np.asarray(a_norm, dtype=np.float64),
                                    self.task)
        if self.task == "rope":
            return sim_rope.execute_whip(self.params, action, self.world, seed)
        return sim_cloth.execute_swing(self.params, action, self.world, seed)


def episode_distance(env_task: str, traj: Trajectory, obs, goal,
                     cfg: IRPConfig) -> float:
    if env_task == "cloth":
        return mean_keypoint_distance(traj.final_keypoints, goal)
    return min_distance(traj, goal)


def sample_deltas(d_i: float, cfg: IRPConfig,
                  stream: np.random.Generator, n_a: int) -> np.ndarray:
    """n_samples i.i.d. spherical-Gaussian delta actions.

    Adaptive: sigma = min(sigma_gain * d_i, sigma_cap); otherwise the
    configured constant sigma. d_i = 0 degenerates to exact zeros.
    """
    if d_i < 0:
        raise ValueError("d_i must be >= 0")
    if cfg.adaptive_sigma:
        sigma = min(cfg.sigma_gain * d_i, cfg.sigma_cap)
    else:
        sigma = cfg.const_sigma
    return stream.normal(0.0, sigma, size=(cfg.n_samples, n_a))


def prediction_distance(pred: Prediction, goal, cfg: IRPConfig) -> float:
    """Distance-to-goal of one prediction (inf if nothing passes threshold)."""
    if not goal.is_rope:
        if pred.final_keypoints is None:
            return math.inf
        return mean_keypoint_distance(pred.final_keypoints, goal)
    return grid_min_distance(pred.grid, goal, cfg.threshold)


def select(preds: list[Prediction], goal, cfg: IRPConfig,
           deltas: np.ndarray | None = None) -> tuple[int, float]:
    """Index of the best prediction; ties break toward the smallest delta
    norm, then the lowest index. Empty thresholded predictions rank last."""
    if not preds:
        raise ValueError("select needs at least one prediction")
    best_j = 0
    best_key = None
    best_d = math.inf
    for j, pred in enumerate(preds):
        d = prediction_distance(pred, goal, cfg)
        norm = float(np.linalg.norm(deltas[j])) if deltas is not None else 0.0
        key = (d, norm, j)
        if best_key is None or key < best_key:
            best_key = key
            best_j = j
            best_d = d
    return best_j, best_d


def run_episode(env: Env, goal, pred, init: np.ndarray, cfg: IRPConfig,
                seed: int) -> EpisodeLog:
    """Run the full loop: execute, measure, stop/sample/predict/select."""
    a = np.asarray(init, dtype=np.float64).copy()
    if a.min() < 0.0 or a.max() > 1.0:
        raise ValueError("initial action must lie in the normalized box")
    log = EpisodeLog()
    for i in range(cfg.max_step):
        try:
            traj = env.execute(a, derive_seed(seed, "exec", i))
        except SimulationDiverged:
            log.stop_reason = STOP_DIVERGED
            return log
        obs = rasterize(traj, env.grid_spec)
        d = episode_distance(env.task, traj, obs, goal, cfg)
        it = IterationRecord(action=a.copy(), trajectory=traj, distance=d)
        log.iterations.append(it)
        if d < cfg.d_stop:
            log.stop_reason = STOP_REACHED
            return log
        if i == cfg.max_step - 1:
            break
        if hasattr(pred, "notify_executed"):
            pred.notify_executed(a)
        stream = rng_stream(derive_seed(seed, "deltas", i), "deltas")
        deltas = sample_deltas(d, cfg, stream, len(a))
        preds = [pred.predict(obs, deltas[j]) for j in range(cfg.n_samples)]
        j, best_d = select(preds, goal, cfg, deltas)
        it.deltas = deltas
        it.selected_index = j
        it.predicted_best_distance = best_d
        a = apply_delta(a, deltas[j])
    log.stop_reason = STOP_MAX_STEP
    return log


def _num(x):
    if x is None or not math.isfinite(x):
        return None
    return float(x)


def write_episode_jsonl(log: EpisodeLog, path: str,
                        include_trajectories: bool = True,
                        include_deltas: bool = False) -> None:
    """One JSON object per iteration; the last line carries the stop reason."""
    with open(path, "w") as f:
        last = len(log.iterations) - 1
        for i, it in enumerate(log.iterations):
            row = {
                "step": i + 1,
                "action": [float(v) for v in it.action],
                "distance": _num(it.distance),
                "selected_index": it.selected_index,
                "predicted_best_distance": _num(it.predicted_best_distance),
            }
            if include_trajectories:
                row["tracks"] = [tr.tolist() for tr in it.trajectory.tracks]
                if it.trajectory.final_keypoints is not None:
                    row["final_keypoints"] = \
                        it.trajectory.final_keypoints.tolist()
            if include_deltas and it.deltas is not None:
                row["deltas"] = it.deltas.tolist()
            if i == last:
                row["stop_reason"] = log.stop_reason
            f.write(json.dumps(row, sort_keys=True) + "\n")
