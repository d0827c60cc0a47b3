"""Comparison controllers sharing one contract: propose the next action
(or a full single-shot action) given the observation history and the goal.

Deep regressors from the original comparison are replaced by ridge / k-NN
analogs with the same information structure: identical inputs, identical
supervision, desk-scale fitting.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from .core import ROPE_SPACE, Goal, RopeAction, apply_delta, rng_stream
from .dataset import Dataset, brute_force_optimal
from .loop import IRPConfig, sample_deltas
from .predictor import KnnIndex
from .raster import (
    OccupancyGrid,
    chamfer,
    polyline_point_distance,
    rasterize,
    resample_polyline,
)
from . import sim_rope

N_PROBES = 16
RIDGE_LAMBDA = 1e-3
HEURISTIC_GAIN = 0.5
ITERLINEAR_RIDGE = 1e-2
ITERLINEAR_K = 64
DELTAREG_K = 4
DELTAREG_GAIN = 1.0


# ---------------------------------------------------------------------------
# System identification
# ---------------------------------------------------------------------------


def probe_actions(ds: Dataset, n: int = N_PROBES) -> list[int]:
    """Deterministic low-discrepancy subset of the action grid (flat ids)."""
    sob = qmc.Sobol(d=len(ds.action_dims), scramble=False)
    picks: list[int] = []
    seen = set()
    # draw generously; collisions are skipped to keep exactly n unique probes
    pts = sob.random(max(4 * n, 64))
    for row in pts:
        idx = ds.nearest_action_idx(row)
        if idx not in seen:
            seen.add(idx)
            picks.append(idx)
        if len(picks) == n:
            break
    if len(picks) < n:
        for idx in range(ds.n_actions):
            if idx not in seen:
                picks.append(idx)
                seen.add(idx)
            if len(picks) == n:
                break
    return picks


@dataclass
class SysIdModel:
    probes: list[int]                  # flat action ids
    train_cells: np.ndarray            # param indices used as references
    ref_grids: list                    # [probe][train_cell] OccupancyGrid
    weights: np.ndarray                # ridge map features+1 -> 2 params
    param_lo: np.ndarray
    param_hi: np.ndarray

    def features(self, probe_grids: list[OccupancyGrid]) -> np.ndarray:
        """Concatenated chamfer distances of each probe trajectory to every
        reference rope's stored probe trajectory."""
        feats = []
        for i, grid in enumerate(probe_grids):
            for ref in self.ref_grids[i]:
                d = chamfer(grid, ref)
                feats.append(d if math.isfinite(d) else 10.0)
        return np.asarray(feats)

    def estimate(self, probe_grids: list[OccupancyGrid]) -> np.ndarray:
        """(length, density) estimate, clipped to the parameter-grid box."""
        x = np.concatenate([self.features(probe_grids), [1.0]])
        norm = np.clip(x @ self.weights, 0.0, 1.0)
        return self.param_lo + norm * (self.param_hi - self.param_lo)


def sysid_fit(ds: Dataset) -> SysIdModel:
    """Ridge regression from probe-trajectory chamfer features to the true
    (length, density), trained on the train-split cells."""
    train = ds.split_indices("train")
    if len(train) < 4:
        raise ValueError("sysid needs at least 4 train cells")
    probes = probe_actions(ds)
    ref_grids = []
    for a in probes:
        row = []
        for p in train:
            rec = ds.record(int(p), a, 0)
            row.append(rasterize(rec, ds.grid_spec) if rec is not None
                       else OccupancyGrid.zeros(ds.grid_spec))
        ref_grids.append(row)

    param_lo = np.array([ds.param_axes[0][0], ds.param_axes[1][0]])
    param_hi = np.array([ds.param_axes[0][-1], ds.param_axes[1][-1]])
    model = SysIdModel(probes=probes, train_cells=train, ref_grids=ref_grids,
                       weights=None, param_lo=param_lo, param_hi=param_hi)
    xs, ys = [], []
    for p in train:
        grids = [ref_grids[i][list(train).index(p)]
                 for i in range(len(probes))]
        xs.append(np.concatenate([model.features(grids), [1.0]]))
        ys.append(ds.param_norm(int(p)))
    x = np.asarray(xs)
    y = np.asarray(ys)
    a = x.T @ x + RIDGE_LAMBDA * np.eye(x.shape[1])
    model.weights = np.linalg.solve(a, x.T @ y)
    return model


def sysid_action(ds: Dataset, model: SysIdModel,
                 probe_grids: list[OccupancyGrid], goal: Goal) -> int:
    """Estimate parameters from the probe observations, then take the
    brute-force optimum of the nearest train rope."""
    est = model.estimate(probe_grids)
    train = ds.split_indices("train")
    norms = np.stack([ds.param_norm(int(p)) for p in train])
    est_norm = (est - model.param_lo) / (model.param_hi - model.param_lo)
    nearest = int(train[np.argmin(((norms - est_norm) ** 2).sum(axis=1))])
    action_idx, _ = brute_force_optimal(ds, nearest, goal)
    return action_idx


def sysid_gt(ds: Dataset, params, goal: Goal) -> int:
    """Brute-force optimum at the parameter cell nearest the true values."""
    if ds.task == "rope":
        values = (params.length, params.lin_density)
    else:
        values = (params.size, params.area_density)
    cell = ds.nearest_param_idx(np.asarray(values))
    action_idx, _ = brute_force_optimal(ds, cell, goal)
    return action_idx


def optsim(ds: Dataset, params, goal: Goal) -> int:
    """Training-world brute-force optimum for measured parameters (executed
    once by the evaluator, with no iteration)."""
    return sysid_gt(ds, params, goal)


# ---------------------------------------------------------------------------
# Iterative heuristic
# ---------------------------------------------------------------------------


def _segments_intersect(p0, p1, q0, q1) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q0, q1, p0)
    d2 = orient(q0, q1, p1)
    d3 = orient(p0, p1, q0)
    d4 = orient(p0, p1, q1)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        return True
    return False


def _polyline_hits(points: np.ndarray, q0, q1) -> bool:
    for i in range(len(points) - 1):
        if _segments_intersect(points[i], points[i + 1], q0, q1):
            return True
    return False


def heuristic_step(traj, goal: Goal, a_norm: np.ndarray,
                   gain: float = HEURISTIC_GAIN):
    """Speed/amplitude scaling rule against the origin-goal geometry.

    Crossing the origin-goal segment means the swing falls short of the
    goal: scale speed and the joint excursion from home up by gain*d_i;
    crossing only the ray beyond the goal means overshoot: scale down.
    Missing the ray entirely returns None (terminate, to avoid increasing
    error).
    """
    pts = traj.tracks[0][:, 1:3].astype(np.float64)
    g = goal.yz
    d_i = polyline_point_distance(pts, g)
    origin = np.zeros(2)
    if _polyline_hits(pts, origin, g):
        direction = 1.0
    else:
        far = g + (g / (np.linalg.norm(g) + 1e-12)) * 10.0
        if _polyline_hits(pts, g, far):
            direction = -1.0
        else:
            return None
    factor = gain * d_i
    home = ROPE_SPACE.normalize(
        RopeAction(1.0, *sim_rope.home_pose()).to_array())
    out = a_norm.copy()
    out[0] = np.clip(a_norm[0] + direction * factor, 0.0, 1.0)
    excursion = a_norm[1:] - home[1:]
    out[1:] = np.clip(home[1:] + excursion * (1.0 + direction * factor),
                      0.0, 1.0)
    return out


def cloth_heuristic_step(final_keypoints, goal: Goal, a_norm: np.ndarray,
                         gain: float = HEURISTIC_GAIN) -> np.ndarray:
    """Cloth variant: increase every action parameter when the landed
    keypoints fall short of the goal (in Y), decrease otherwise."""
    from .raster import mean_keypoint_distance
    d_i = mean_keypoint_distance(final_keypoints, goal)
    landed = float(np.mean(np.asarray(final_keypoints, dtype=np.float64)[:, 0]))
    target = float(np.mean(goal.points[:, 0]))
    direction = 1.0 if landed < target else -1.0
    return np.clip(a_norm + direction * gain * d_i, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Iterative linear model
# ---------------------------------------------------------------------------


def iterlinear_fit(history: list[tuple[np.ndarray, object]]) -> np.ndarray:
    """Ridge fit from (action, bias) to the resampled trajectory polyline."""
    if not history:
        raise ValueError("history must be non-empty")
    xs = np.stack([np.concatenate([a, [1.0]]) for a, _ in history])
    ys = np.stack([resample_polyline(traj, ITERLINEAR_K).ravel()
                   for _, traj in history])
    a = xs.T @ xs + ITERLINEAR_RIDGE * np.eye(xs.shape[1])
    return np.linalg.solve(a, xs.T @ ys)


def iterlinear_predict(weights: np.ndarray, a_norm: np.ndarray) -> np.ndarray:
    x = np.concatenate([a_norm, [1.0]])
    return (x @ weights).reshape(ITERLINEAR_K, 2)


def iterlinear_step(history, goal: Goal, d_i: float, cfg: IRPConfig,
                    stream: np.random.Generator) -> np.ndarray:
    """Refit the linear plant on the history, then propose the candidate
    (sampled around the last action, same sampler as the main loop) whose
    predicted polyline lies closest to the goal."""
    weights = iterlinear_fit(history)
    last = history[-1][0]
    deltas = sample_deltas(d_i, cfg, stream, len(last))
    best, best_a = math.inf, last
    for j in range(len(deltas)):
        cand = apply_delta(last, deltas[j])
        pts = iterlinear_predict(weights, cand)
        d = polyline_point_distance(pts, goal.yz)
        if d < best:
            best, best_a = d, cand
    return best_a


# ---------------------------------------------------------------------------
# Direct delta regression
# ---------------------------------------------------------------------------


class DeltaRegController:
    """k-NN regression from (observed grid, goal) to the optimal delta.

    Neighbors come from the same chamfer index the main predictor uses;
    each neighbor contributes (brute-force optimal action for the goal on
    its parameter cell) minus (its own action); the mean (the MSE-minimizing
    point estimate) is scaled by a proportional gain and applied clipped.
    """

    def __init__(self, ds: Dataset, index: KnnIndex, k: int = DELTAREG_K,
                 gain: float = DELTAREG_GAIN):
        self.ds = ds
        self.index = index
        self.k = k
        self.gain = gain
        self._bf_cache: dict = {}

    @staticmethod
    def average(deltas: np.ndarray) -> np.ndarray:
        return np.mean(np.asarray(deltas, dtype=np.float64), axis=0)

    def _optimal_action(self, param_idx: int, goal: Goal,
                        goal_key) -> np.ndarray:
        key = (param_idx, goal_key)
        hit = self._bf_cache.get(key)
        if hit is None:
            a, _ = brute_force_optimal(self.ds, param_idx, goal)
            hit = self.ds.action_norm(a)
            self._bf_cache[key] = hit
        return hit

    def step(self, observed: OccupancyGrid, goal: Goal,
             a_norm: np.ndarray) -> np.ndarray:
        recs, _ = self.index.match(observed, self.k)
        if not recs:
            return a_norm.copy()
        goal_key = goal.points.tobytes()
        deltas = []
        for rec in recs:
            opt = self._optimal_action(int(self.index.param_idx[rec]), goal,
                                       goal_key)
            deltas.append(opt - self.index.action_norm[rec])
        delta = self.average(np.stack(deltas)) * self.gain
        return apply_delta(a_norm, delta)


# ---------------------------------------------------------------------------
# Model container hooks (sysid persists through the shared "IRPM1" format)
# ---------------------------------------------------------------------------

TAG_SYSID = 3


def save_sysid(model: SysIdModel, ds: Dataset, path: str) -> None:
    from .predictor import MODEL_MAGIC
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(struct.pack("<B", TAG_SYSID))
        f.write(struct.pack("<I", len(model.probes)))
        f.write(np.asarray(model.probes, dtype="<i4").tobytes())
        f.write(struct.pack("<I", len(model.train_cells)))
        f.write(np.asarray(model.train_cells, dtype="<i4").tobytes())
        f.write(struct.pack("<2I", *model.weights.shape))
        f.write(model.weights.astype("<f8").tobytes())
        f.write(model.param_lo.astype("<f8").tobytes())
        f.write(model.param_hi.astype("<f8").tobytes())


def load_sysid(ds: Dataset, path: str) -> SysIdModel:
    from .dataset import _Cursor
    from .predictor import MODEL_MAGIC
    with open(path, "rb") as f:
        buf = f.read()
    cur = _Cursor(buf)
    if bytes(cur.unpack("5s")[0]) != MODEL_MAGIC:
        raise ValueError("not a model container")
    if cur.unpack("B")[0] != TAG_SYSID:
        raise ValueError("not a sysid model")
    n_probes = cur.unpack("I")[0]
    probes = [int(v) for v in cur.array("<i4", n_probes)]
    n_train = cur.unpack("I")[0]
    train_cells = cur.array("<i4", n_train).copy()
    r, c = cur.unpack("2I")
    weights = cur.array("<f8", r * c).reshape(r, c).copy()
    param_lo = cur.array("<f8", 2).copy()
    param_hi = cur.array("<f8", 2).copy()
    ref_grids = []
    for a in probes:
        row = []
        for p in train_cells:
            rec = ds.record(int(p), a, 0)
            row.append(rasterize(rec, ds.grid_spec) if rec is not None
                       else OccupancyGrid.zeros(ds.grid_spec))
        ref_grids.append(row)
    return SysIdModel(probes=probes, train_cells=train_cells,
                      ref_grids=ref_grids, weights=weights,
                      param_lo=param_lo, param_hi=param_hi)
