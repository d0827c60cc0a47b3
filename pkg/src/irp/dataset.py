"""Offline sweep datasets: (object parameters x action grid x repeats).

Records are stored in a little-endian binary container (magic "IRPD1"):

  header:  magic 5s | task u8 (0 rope, 1 cloth) | param dims u32 x2 |
           n_a u8 | action dims u32 x n_a | repeats u16 |
           grid spec f64 x5 (height, width, extent, origin_y, origin_z) |
           seed u64 | world (mode u8, drag f64, floor_z f64,
           init_noise f64, embodiment f64) |
           rope: n_links u32 + joint_damping f64 / cloth: n_grid u32 |
           param axis values f64 x d0, f64 x d1 |
           action values per dim f64 |
           split labels u8 x (d0*d1) | record count u64
  record:  param_idx u32 | action_idx u32 | repeat u16 | valid u8 |
           n_tracks u8 | per track (n_pts u32 + f32 (t,y,z) triples) |
           n_final_kp u8 | f32 (y,z) pairs

Every (param_idx, action_idx, repeat) triple appears exactly once, in
row-major order, so regeneration with the same seed is byte-identical.
"""

from __future__ import annotations

import hashlib
import math
import multiprocessing
import struct
from dataclasses import dataclass, field

import numba
import numpy as np

from .core import (
    ClothParams,
    Goal,
    GridSpec,
    RopeParams,
    SimulationDiverged,
    Trajectory,
    WorldVariant,
    action_space,
    derive_seed,
    rng_stream,
)
from .raster import mean_keypoint_distance, min_distance, polyline_point_distance

MAGIC = b"IRPD1"

ROPE_LENGTH_RANGE = (0.4, 1.6)       # m, parameter-grid axis 0
ROPE_DENSITY_RANGE = (0.008, 0.080)  # kg/m, axis 1
CLOTH_SIZE_RANGE = (0.4, 0.6)        # m
CLOTH_DENSITY_RANGE = (0.2, 1.4)     # kg/m^2
ROPE_N_LINKS = 25
CLOTH_N_GRID = 13

SPLIT_NAMES = ("train", "validation", "test_interp", "test_extrap")
SPLIT_CODE = {name: i for i, name in enumerate(SPLIT_NAMES)}
UNSPLIT = 255

DESK_DEFAULTS = {
    "rope": dict(param_dims=(8, 8), action_dims=(9, 9, 9), repeats=3),
    "cloth": dict(param_dims=(6, 6), action_dims=(6, 6, 6, 4), repeats=1),
}


def default_grid_spec(task: str) -> GridSpec:
    return GridSpec(channels=1 if task == "rope" else 9)


def default_world() -> WorldVariant:
    return WorldVariant.training(init_noise_sd=0.005)


@dataclass
class Dataset:
    task: str
    seed: int
    grid_spec: GridSpec
    world: WorldVariant
    param_dims: tuple[int, int]
    param_axes: tuple[np.ndarray, np.ndarray]
    action_dims: tuple[int, ...]
    action_values: list[np.ndarray]       # physical units, per dimension
    repeats: int
    rope_n_links: int = ROPE_N_LINKS
    rope_joint_damping: float = RopeParams.__dataclass_fields__["joint_damping"].default
    cloth_n_grid: int = CLOTH_N_GRID
    records: list = field(default_factory=list)          # Trajectory | None
    valid: np.ndarray = field(default=None)              # bool per record
    splits: np.ndarray = field(default=None)             # u8 per param cell

    # ---- indexing -------------------------------------------------------

    @property
    def n_params(self) -> int:
        return self.param_dims[0] * self.param_dims[1]

    @property
    def n_actions(self) -> int:
        return int(np.prod(self.action_dims))

    @property
    def n_records(self) -> int:
        return self.n_params * self.n_actions * self.repeats

    def flat_index(self, param_idx: int, action_idx: int, repeat: int) -> int:
        return (param_idx * self.n_actions + action_idx) * self.repeats + repeat

    def record(self, param_idx: int, action_idx: int, repeat: int):
        return self.records[self.flat_index(param_idx, action_idx, repeat)]

    def params_of(self, param_idx: int):
        i, j = divmod(param_idx, self.param_dims[1])
        a0 = float(self.param_axes[0][i])
        a1 = float(self.param_axes[1][j])
        if self.task == "rope":
            return RopeParams(length=a0, lin_density=a1,
                              n_links=self.rope_n_links,
                              joint_damping=self.rope_joint_damping)
        return ClothParams(size=a0, area_density=a1, n_grid=self.cloth_n_grid)

    def action_of(self, action_idx: int) -> np.ndarray:
        """Physical action vector for a flat action-grid index."""
        multi = np.unravel_index(action_idx, self.action_dims)
        return np.array([self.action_values[d][m]
                         for d, m in enumerate(multi)], dtype=np.float64)

    def action_norm(self, action_idx: int) -> np.ndarray:
        return action_space(self.task).normalize(self.action_of(action_idx))

    def action_object(self, action_idx: int):
        from .core import denormalize_action
        return denormalize_action(self.action_norm(action_idx), self.task)

    def nearest_action_idx(self, a_norm: np.ndarray) -> int:
        """Snap a normalized action to the nearest grid point, per dimension."""
        multi = []
        for d, n_d in enumerate(self.action_dims):
            k = int(round(float(a_norm[d]) * (n_d - 1)))
            multi.append(min(max(k, 0), n_d - 1))
        return int(np.ravel_multi_index(tuple(multi), self.action_dims))

    def param_norm(self, param_idx: int) -> np.ndarray:
        """Parameter-cell coordinates scaled to [0,1]^2 over the grid hull."""
        i, j = divmod(param_idx, self.param_dims[1])
        ax0, ax1 = self.param_axes
        return np.array([
            (ax0[i] - ax0[0]) / (ax0[-1] - ax0[0]),
            (ax1[j] - ax1[0]) / (ax1[-1] - ax1[0]),
        ])

    def nearest_param_idx(self, values: np.ndarray) -> int:
        """Nearest cell to physical parameter values (clipped to the hull)."""
        ax0, ax1 = self.param_axes
        v0 = min(max(float(values[0]), ax0[0]), ax0[-1])
        v1 = min(max(float(values[1]), ax1[0]), ax1[-1])
        i = int(np.argmin(np.abs(ax0 - v0)))
        j = int(np.argmin(np.abs(ax1 - v1)))
        return i * self.param_dims[1] + j

    def split_indices(self, name: str) -> np.ndarray:
        if self.splits is None:
            raise ValueError("dataset has no splits assigned")
        return np.nonzero(self.splits == SPLIT_CODE[name])[0]

    # ---- distances ------------------------------------------------------

    def _ensure_packed(self):
        """Pack rope tip tracks into flat arrays for the numba distance scan."""
        if getattr(self, "_packed", None) is not None:
            return
        pts = []
        offsets = np.zeros(self.n_records + 1, dtype=np.int64)
        for k, rec in enumerate(self.records):
            if rec is not None and rec.n_tracks > 0:
                yz = rec.tracks[0][:, 1:3].astype(np.float64)
                pts.append(yz)
                offsets[k + 1] = offsets[k] + len(yz)
            else:
                offsets[k + 1] = offsets[k]
        self._packed = (np.concatenate(pts, axis=0) if pts
                        else np.zeros((0, 2)), offsets)

    def distances_to_goal(self, goal: Goal,
                          param_indices=None) -> np.ndarray:
        """Repeat-averaged distance metric per (param, action) grid point.

        Returns an array of shape (len(param_indices), n_actions); cells whose
        repeats are all invalid hold +inf.
        """
        if param_indices is None:
            param_indices = np.arange(self.n_params)
        param_indices = np.asarray(param_indices, dtype=np.int64)
        if self.task == "rope":
            self._ensure_packed()
            pts, offsets = self._packed
            out = np.empty((len(param_indices), self.n_actions))
            _rope_goal_scan(pts, offsets, param_indices, self.n_actions,
                            self.repeats, float(goal.yz[0]), float(goal.yz[1]),
                            self.valid, out)
            return out
        out = np.full((len(param_indices), self.n_actions), np.inf)
        for pi, p in enumerate(param_indices):
            for a in range(self.n_actions):
                total, count = 0.0, 0
                for r in range(self.repeats):
                    k = self.flat_index(int(p), a, r)
                    if not self.valid[k]:
                        continue
                    rec = self.records[k]
                    total += mean_keypoint_distance(rec.final_keypoints,
                                                    goal)
                    count += 1
                if count:
                    out[pi, a] = total / count
        return out


@numba.njit(cache=True)
def _rope_goal_scan(pts, offsets, param_indices, n_actions, repeats,
                    gy, gz, valid, out):  # pragma: no cover - jit
    for pi in range(param_indices.shape[0]):
        p = param_indices[pi]
        for a in range(n_actions):
            total = 0.0
            count = 0
            for r in range(repeats):
                k = (p * n_actions + a) * repeats + r
                if not valid[k]:
                    continue
                lo = offsets[k]
                hi = offsets[k + 1]
                if hi <= lo:
                    continue
                best = 1e300
                py = pts[lo, 0]
                pz = pts[lo, 1]
                d0 = math.sqrt((py - gy) ** 2 + (pz - gz) ** 2)
                if d0 < best:
                    best = d0
                for m in range(lo + 1, hi):
                    qy = pts[m, 0]
                    qz = pts[m, 1]
                    dy = qy - py
                    dz = qz - pz
                    seg2 = dy * dy + dz * dz
                    if seg2 > 0.0:
                        t = ((gy - py) * dy + (gz - pz) * dz) / seg2
                        if t < 0.0:
                            t = 0.0
                        elif t > 1.0:
                            t = 1.0
                        cy = py + t * dy
                        cz = pz + t * dz
                        d = math.sqrt((cy - gy) ** 2 + (cz - gz) ** 2)
                        if d < best:
                            best = d
                    py = qy
                    pz = qz
                total += best
                count += 1
            if count > 0:
                out[pi, a] = total / count
            else:
                out[pi, a] = np.inf


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def _param_axes(task: str, param_dims) -> tuple[np.ndarray, np.ndarray]:
    if task == "rope":
        r0, r1 = ROPE_LENGTH_RANGE, ROPE_DENSITY_RANGE
    else:
        r0, r1 = CLOTH_SIZE_RANGE, CLOTH_DENSITY_RANGE
    return (np.linspace(r0[0], r0[1], param_dims[0]),
            np.linspace(r1[0], r1[1], param_dims[1]))


def _action_values(task: str, action_dims) -> list[np.ndarray]:
    space = action_space(task)
    return [np.linspace(space.lo[d], space.hi[d], n_d)
            for d, n_d in enumerate(action_dims)]


def _simulate_record(task, params, action_vec, world, seed):
    from . import sim_cloth, sim_rope
    from .core import ClothAction, RopeAction
    if task == "rope":
        action = RopeAction.from_array(action_vec)
        return sim_rope.execute_whip(params, action, world, seed)
    action = ClothAction.from_array(action_vec)
    return sim_cloth.execute_swing(params, action, world, seed)


def _gen_cell(args):
    """Simulate every (action, repeat) of one parameter cell (worker task)."""
    (task, param_dims, param_axes, action_dims, action_values, repeats,
     world, seed, param_idx, rope_consts, cloth_n_grid) = args
    i, j = divmod(param_idx, param_dims[1])
    if task == "rope":
        params = RopeParams(length=float(param_axes[0][i]),
                            lin_density=float(param_axes[1][j]),
                            n_links=rope_consts[0],
                            joint_damping=rope_consts[1])
    else:
        params = ClothParams(size=float(param_axes[0][i]),
                             area_density=float(param_axes[1][j]),
                             n_grid=cloth_n_grid)
    n_actions = int(np.prod(action_dims))
    out = []
    for a in range(n_actions):
        multi = np.unravel_index(a, action_dims)
        vec = np.array([action_values[d][m] for d, m in enumerate(multi)])
        for r in range(repeats):
            rec_seed = derive_seed(seed, "record", param_idx, a, r)
            try:
                traj = _simulate_record(task, params, vec, world, rec_seed)
                out.append((a, r, True, traj))
            except SimulationDiverged:
                out.append((a, r, False, None))
    return param_idx, out


def generate(task: str, param_dims=None, action_dims=None, repeats=None,
             world: WorldVariant | None = None, seed: int = 0,
             grid_spec: GridSpec | None = None, jobs: int = 1,
             rope_n_links: int = ROPE_N_LINKS,
             rope_joint_damping: float | None = None,
             cloth_n_grid: int = CLOTH_N_GRID) -> Dataset:
    """Simulate the full (params x actions x repeats) sweep deterministically.

    Diverged cells are kept as invalid records so generation is total over
    the whole box.
    """
    desk = DESK_DEFAULTS[task]
    param_dims = tuple(param_dims or desk["param_dims"])
    action_dims = tuple(action_dims or desk["action_dims"])
    repeats = repeats if repeats is not None else desk["repeats"]
    world = world if world is not None else default_world()
    grid_spec = grid_spec or default_grid_spec(task)
    if min(param_dims) < 2 or min(action_dims) < 2:
        raise ValueError("every grid axis needs at least 2 samples")
    if rope_joint_damping is None:
        rope_joint_damping = RopeParams.__dataclass_fields__[
            "joint_damping"].default

    param_axes = _param_axes(task, param_dims)
    action_values = _action_values(task, action_dims)
    ds = Dataset(task=task, seed=seed, grid_spec=grid_spec, world=world,
                 param_dims=param_dims, param_axes=param_axes,
                 action_dims=action_dims, action_values=action_values,
                 repeats=repeats, rope_n_links=rope_n_links,
                 rope_joint_damping=rope_joint_damping,
                 cloth_n_grid=cloth_n_grid)
    ds.records = [None] * ds.n_records
    ds.valid = np.zeros(ds.n_records, dtype=bool)
    ds.splits = np.full(ds.n_params, UNSPLIT, dtype=np.uint8)

    tasks = [(task, param_dims, param_axes, action_dims, action_values,
              repeats, world, seed, p, (rope_n_links, rope_joint_damping),
              cloth_n_grid)
             for p in range(ds.n_params)]
    if jobs > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(jobs) as pool:
            results = pool.map(_gen_cell, tasks)
    else:
        results = [_gen_cell(t) for t in tasks]
    for param_idx, cell in results:
        for a, r, ok, traj in cell:
            k = ds.flat_index(param_idx, a, r)
            ds.records[k] = traj
            ds.valid[k] = ok
    return ds


def split(ds: Dataset) -> Dataset:
    """Assign parameter-cell splits (idempotent, derived from the seed).

    The outer 1-cell border of the parameter grid is extrapolation; of the
    interior a seeded 20% (rounded up) is interpolation, 10% validation, and
    the rest training.
    """
    d0, d1 = ds.param_dims
    if d0 < 4 or d1 < 4:
        raise ValueError("parameter grid must be at least 4x4 to split")
    splits = np.full(ds.n_params, UNSPLIT, dtype=np.uint8)
    interior = []
    for p in range(ds.n_params):
        i, j = divmod(p, d1)
        if i == 0 or j == 0 or i == d0 - 1 or j == d1 - 1:
            splits[p] = SPLIT_CODE["test_extrap"]
        else:
            interior.append(p)
    interior = np.array(interior)
    order = rng_stream(ds.seed, "split").permutation(len(interior))
    n_interp = math.ceil(0.2 * len(interior))
    n_val = math.ceil(0.1 * len(interior))
    shuffled = interior[order]
    splits[shuffled[:n_interp]] = SPLIT_CODE["test_interp"]
    splits[shuffled[n_interp:n_interp + n_val]] = SPLIT_CODE["validation"]
    splits[shuffled[n_interp + n_val:]] = SPLIT_CODE["train"]
    ds.splits = splits
    return ds


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------


def brute_force_optimal(ds: Dataset, param_idx: int,
                        goal: Goal) -> tuple[int, float]:
    """Exhaustive argmin over the action grid of the repeat-averaged metric.

    Returns (action_idx, distance); ties break toward the lowest index.
    """
    dists = ds.distances_to_goal(goal, [param_idx])[0]
    a = int(np.argmin(dists))
    return a, float(dists[a])


def avg_action(ds: Dataset, goal: Goal) -> int:
    """Action index minimizing the mean distance over train-split cells."""
    train = ds.split_indices("train")
    if len(train) == 0:
        raise ValueError("dataset has no train split")
    dists = ds.distances_to_goal(goal, train)
    a = int(np.argmin(np.mean(dists, axis=0)))
    return a


def sample_goals(ds: Dataset, param_idx: int, n: int, seed: int,
                 return_provenance: bool = False):
    """Reachable goals drawn from stored trajectories of one parameter cell.

    Rope: a point drawn uniformly along a uniformly drawn valid record's
    tip path (sample points weighted by adjacent arc length, so the
    near-static dangle phases do not dominate). Cloth: the settled
    keypoints of a uniformly drawn valid record.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = rng_stream(seed, "goals")
    base = param_idx * ds.n_actions * ds.repeats
    valid_local = np.nonzero(ds.valid[base:base + ds.n_actions * ds.repeats])[0]
    if len(valid_local) == 0:
        raise ValueError(f"parameter cell {param_idx} has no valid records")
    goals, prov = [], []
    ext = ds.grid_spec.extent
    oy, oz = ds.grid_spec.origin
    for _ in range(n):
        for _attempt in range(100):
            k_local = int(valid_local[rng.integers(len(valid_local))])
            a, r = divmod(k_local, ds.repeats)
            rec = ds.records[base + k_local]
            if ds.task == "rope":
                track = rec.tracks[0]
                seg = np.linalg.norm(
                    np.diff(track[:, 1:3].astype(np.float64), axis=0), axis=1)
                w = np.zeros(len(track))
                w[:-1] += seg
                w[1:] += seg
                total = w.sum()
                if total > 0:
                    pt = int(rng.choice(len(track), p=w / total))
                else:
                    pt = int(rng.integers(len(track)))
                y, z = float(track[pt, 1]), float(track[pt, 2])
                if abs(y - oy) <= ext and abs(z - oz) <= ext:
                    goals.append(Goal.rope(y, z))
                    prov.append((a, r, pt))
                    break
            else:
                kps = rec.final_keypoints
                if (np.abs(kps[:, 0] - oy) <= ext).all() \
                        and (np.abs(kps[:, 1] - oz) <= ext).all():
                    goals.append(Goal.cloth(kps))
                    prov.append((a, r, -1))
                    break
        else:
            raise ValueError("could not sample an in-window goal")
    if return_provenance:
        return goals, prov
    return goals


def repeat_noise_radius(ds: Dataset, param_idx: int, action_idx: int,
                        repeat: int) -> float:
    """Trajectory-spread bound used by the reachability acceptance check.

    Rope: mean over repeats r' of the directed Hausdorff distance from the
    given repeat's samples to the polyline of r'. Cloth: mean over r' of the
    keypoint distance between settled configurations. Any goal drawn from
    the given repeat has brute-force distance at most this value.
    """
    src = ds.record(param_idx, action_idx, repeat)
    total = 0.0
    count = 0
    for r in range(ds.repeats):
        k = ds.flat_index(param_idx, action_idx, r)
        if not ds.valid[k]:
            continue
        other = ds.records[k]
        if ds.task == "rope":
            pts = src.tracks[0][:, 1:3].astype(np.float64)
            other_pts = other.tracks[0][:, 1:3].astype(np.float64)
            d = max(polyline_point_distance(other_pts, p) for p in pts)
        else:
            d = float(np.mean(np.linalg.norm(
                src.final_keypoints.astype(np.float64)
                - other.final_keypoints.astype(np.float64), axis=1)))
        total += d
        count += 1
    if count == 0:
        return math.inf
    return total / count


# ---------------------------------------------------------------------------
# Container IO
# ---------------------------------------------------------------------------


def save(ds: Dataset, path: str) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<B", 0 if ds.task == "rope" else 1))
        f.write(struct.pack("<II", *ds.param_dims))
        f.write(struct.pack("<B", len(ds.action_dims)))
        f.write(struct.pack(f"<{len(ds.action_dims)}I", *ds.action_dims))
        f.write(struct.pack("<H", ds.repeats))
        gs = ds.grid_spec
        f.write(struct.pack("<5d", gs.height, gs.width, gs.extent,
                            gs.origin[0], gs.origin[1]))
        f.write(struct.pack("<Q", ds.seed & 0xFFFFFFFFFFFFFFFF))
        w = ds.world
        f.write(struct.pack("<B4d", 0 if w.mode == "training" else 1,
                            w.drag_coeff, w.floor_z, w.init_noise_sd,
                            w.embodiment_link))
        if ds.task == "rope":
            f.write(struct.pack("<Id", ds.rope_n_links, ds.rope_joint_damping))
        else:
            f.write(struct.pack("<I", ds.cloth_n_grid))
        for axis in ds.param_axes:
            f.write(np.asarray(axis, dtype="<f8").tobytes())
        for vals in ds.action_values:
            f.write(np.asarray(vals, dtype="<f8").tobytes())
        f.write(ds.splits.astype(np.uint8).tobytes())
        f.write(struct.pack("<Q", ds.n_records))
        for p in range(ds.n_params):
            for a in range(ds.n_actions):
                for r in range(ds.repeats):
                    k = ds.flat_index(p, a, r)
                    rec = ds.records[k]
                    ok = bool(ds.valid[k])
                    f.write(struct.pack("<IIHB", p, a, r, 1 if ok else 0))
                    if rec is None:
                        f.write(struct.pack("<B", 0))
                        f.write(struct.pack("<B", 0))
                        continue
                    f.write(struct.pack("<B", rec.n_tracks))
                    for tr in rec.tracks:
                        f.write(struct.pack("<I", len(tr)))
                        f.write(np.ascontiguousarray(tr, dtype="<f4").tobytes())
                    if rec.final_keypoints is not None:
                        f.write(struct.pack("<B", len(rec.final_keypoints)))
                        f.write(np.ascontiguousarray(
                            rec.final_keypoints, dtype="<f4").tobytes())
                    else:
                        f.write(struct.pack("<B", 0))


class _Cursor:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def unpack(self, fmt: str):
        vals = struct.unpack_from("<" + fmt, self.buf, self.pos)
        self.pos += struct.calcsize("<" + fmt)
        return vals

    def array(self, dtype, count):
        arr = np.frombuffer(self.buf, dtype=dtype, count=count,
                            offset=self.pos)
        self.pos += arr.nbytes
        return arr


def load(path: str) -> Dataset:
    with open(path, "rb") as f:
        buf = f.read()
    cur = _Cursor(buf)
    magic = bytes(cur.unpack("5s")[0])
    if magic != MAGIC:
        raise ValueError(f"not a dataset container (magic {magic!r})")
    task = "rope" if cur.unpack("B")[0] == 0 else "cloth"
    param_dims = cur.unpack("II")
    n_a = cur.unpack("B")[0]
    action_dims = cur.unpack(f"{n_a}I")
    repeats = cur.unpack("H")[0]
    h, wdt, ext, oy, oz = cur.unpack("5d")
    grid_spec = GridSpec(height=int(h), width=int(wdt),
                         channels=1 if task == "rope" else 9,
                         extent=ext, origin=(oy, oz))
    seed = cur.unpack("Q")[0]
    mode_b, drag, floor_z, noise, emb = cur.unpack("B4d")
    world = WorldVariant(mode="training" if mode_b == 0 else "deployment",
                         drag_coeff=drag, floor_z=floor_z,
                         init_noise_sd=noise, embodiment_link=emb)
    if task == "rope":
        n_links, joint_damping = cur.unpack("Id")
        cloth_n_grid = CLOTH_N_GRID
    else:
        n_links, joint_damping = ROPE_N_LINKS, \
            RopeParams.__dataclass_fields__["joint_damping"].default
        cloth_n_grid = cur.unpack("I")[0]
    axes = (cur.array("<f8", param_dims[0]).copy(),
            cur.array("<f8", param_dims[1]).copy())
    action_values = [cur.array("<f8", n_d).copy() for n_d in action_dims]
    n_params = param_dims[0] * param_dims[1]
    splits = cur.array(np.uint8, n_params).copy()
    n_records = cur.unpack("Q")[0]

    ds = Dataset(task=task, seed=seed, grid_spec=grid_spec, world=world,
                 param_dims=tuple(param_dims), param_axes=axes,
                 action_dims=tuple(action_dims), action_values=action_values,
                 repeats=repeats, rope_n_links=n_links,
                 rope_joint_damping=joint_damping, cloth_n_grid=cloth_n_grid)
    if n_records != ds.n_records:
        raise ValueError("record count does not match grid dimensions")
    ds.records = [None] * n_records
    ds.valid = np.zeros(n_records, dtype=bool)
    ds.splits = splits
    for _ in range(n_records):
        p, a, r, ok = cur.unpack("IIHB")
        n_tracks = cur.unpack("B")[0]
        tracks = []
        for _t in range(n_tracks):
            n_pts = cur.unpack("I")[0]
            tracks.append(cur.array("<f4", n_pts * 3).reshape(n_pts, 3))
        n_kp = cur.unpack("B")[0]
        final = cur.array("<f4", n_kp * 2).reshape(n_kp, 2) if n_kp else None
        k = ds.flat_index(p, a, r)
        ds.valid[k] = bool(ok)
        if n_tracks:
            ds.records[k] = Trajectory(tracks=tuple(tracks),
                                       final_keypoints=final)
    return ds


def file_hash(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def export_csv(ds: Dataset, path: str) -> None:
    """Flat CSV dump of the records for external inspection."""
    with open(path, "w") as f:
        f.write("param_idx,action_idx,repeat,valid,track,t,y,z\n")
        for p in range(ds.n_params):
            for a in range(ds.n_actions):
                for r in range(ds.repeats):
                    k = ds.flat_index(p, a, r)
                    rec = ds.records[k]
                    ok = int(ds.valid[k])
                    if rec is None:
                        f.write(f"{p},{a},{r},{ok},,,,\n")
                        continue
                    for ti, tr in enumerate(rec.tracks):
                        for row in tr:
                            f.write(f"{p},{a},{r},{ok},{ti},"
                                    f"{row[0]!r},{row[1]!r},{row[2]!r}\n")
