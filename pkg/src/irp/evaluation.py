"""Experiment matrices and reports: method comparisons per split, the
domain-shifted deployment run, online adaptation to a mid-episode object
swap, robot embodiment changes, and the cloth placement comparison.

Every experiment emits a ResultsTable with one row per
(method, split, cell, goal, step) and is byte-reproducible from
(dataset, config, seed). Episodes run in parallel with deterministic
per-episode seeds; aggregation is a fixed-order reduction.
"""

from __future__ import annotations

import json
import math
import multiprocessing
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import baselines, sim_rope
from .core import Goal, RopeParams, WorldVariant, derive_seed, rng_stream
from .dataset import Dataset, avg_action, brute_force_optimal, sample_goals
from .loop import Env, IRPConfig, episode_distance, run_episode
from .predictor import KnnIndex, KnnPredictor, gt_build
from .raster import rasterize

CLOTH_GOAL_Y0_RANGE = (0.3, 0.9)   # gripped-edge target Y translation range
CLOTH_INIT_NORM = (0.5, 0.5, 0.5, 0.5)
KNN_K = 4

ROPE_METHODS = ("irp", "irp_gt", "const_sigma", "sysid", "sysid_gt", "avg",
                "optsim", "iter_heuristic", "iter_linear", "delta_reg")
SINGLE_SHOT = {"sysid", "sysid_gt", "avg", "optsim"}


@dataclass
class ResultsTable:
    name: str
    rows: list = field(default_factory=list)
    # extras: per-episode metadata such as final actions and stop reasons
    extras: dict = field(default_factory=dict)
    manifest: dict = field(default_factory=dict)

    COLUMNS = ("method", "split", "cell", "goal", "step", "distance_m")

    def aggregate(self):
        """(method, split, step) -> (n, mean, ci95 half-width)."""
        groups: dict = {}
        for method, split, cell, goal, step, dist in self.rows:
            groups.setdefault((method, split, step), []).append(dist)
        out = []
        for (method, split, step), vals in sorted(groups.items()):
            arr = np.asarray([v for v in vals if math.isfinite(v)])
            if len(arr) == 0:
                out.append((method, split, step, 0, math.nan, math.nan))
                continue
            mean = float(arr.mean())
            sd = float(arr.std(ddof=1)) if len(arr) > 1 else 0.0
            ci = 1.96 * sd / math.sqrt(len(arr))
            out.append((method, split, step, len(arr), mean, ci))
        return out


class ScheduledEnv:
    """Plant whose object parameters swap after a given execution count."""

    def __init__(self, task, params, world, grid_spec, swap_step=None,
                 swapped_params=None):
        self.task = task
        self.params = params
        self.world = world
        self.grid_spec = grid_spec
        self.swap_step = swap_step
        self.swapped_params = swapped_params
        self.calls = 0

    def execute(self, a_norm, seed):
        params = self.params
        if self.swap_step is not None and self.calls >= self.swap_step:
            params = self.swapped_params
        self.calls += 1
        return Env(self.task, params, self.world, self.grid_spec).execute(
            a_norm, seed)


# ---------------------------------------------------------------------------
# Per-method episode runners
# ---------------------------------------------------------------------------


def _measure_once(env, a_norm, goal, cfg, seed):
    traj = env.execute(a_norm, seed)
    obs = rasterize(traj, env.grid_spec)
    return episode_distance(env.task, traj, obs, goal, cfg), traj, obs


def _pad(distances, n, value=None):
    out = list(distances)
    if not out:
        return [math.nan] * n
    fill = out[-1] if value is None else value
    return out + [fill] * (n - len(out))


def _loop_distances(log, cfg):
    pad_value = math.nan if log.stop_reason == "diverged" else None
    return _pad(log.distances, cfg.max_step, pad_value)


def run_method_episode(method: str, env, ds: Dataset, goal: Goal,
                       init_idx: int, models: dict, cfg: IRPConfig,
                       seed: int):
    """Distances per step (length cfg.max_step) plus the final action.

    Early-stopped episodes hold their last distance; diverged episodes pad
    with NaN.
    """
    init = ds.action_norm(init_idx)
    if method in ("irp", "irp_mlp"):
        log = run_episode(env, goal, models[method], init, cfg, seed)
        return _loop_distances(log, cfg), log.final_action
    if method == "const_sigma":
        log = run_episode(env, goal, models["const_sigma"], init,
                          cfg.replace(adaptive_sigma=False), seed)
        return _loop_distances(log, cfg), log.final_action
    if method == "irp_gt":
        pred = gt_build(env.task, env.params, env.world, env.grid_spec)
        log = run_episode(env, goal, pred, init, cfg, seed)
        return _loop_distances(log, cfg), log.final_action

    if method in SINGLE_SHOT:
        if method == "avg":
            a_idx = init_idx
        elif method in ("optsim", "sysid_gt"):
            a_idx = baselines.optsim(ds, env.params, goal)
        else:  # sysid: execute the fixed probes, estimate, then act
            model = models["sysid"]
            grids = []
            for i, probe in enumerate(model.probes):
                _, _, obs = _measure_once(env, ds.action_norm(probe), goal,
                                          cfg, derive_seed(seed, "probe", i))
                grids.append(obs)
            a_idx = baselines.sysid_action(ds, model, grids, goal)
        a_norm = ds.action_norm(a_idx)
        try:
            d, _, _ = _measure_once(env, a_norm, goal, cfg,
                                    derive_seed(seed, "exec", 0))
        except Exception:
            return [math.nan] * cfg.max_step, a_norm
        return [d] * cfg.max_step, a_norm

    if method == "iter_heuristic":
        a = init.copy()
        dists = []
        for i in range(cfg.max_step):
            try:
                d, traj, obs = _measure_once(env, a, goal, cfg,
                                             derive_seed(seed, "exec", i))
            except Exception:
                return _pad(dists, cfg.max_step, math.nan), a
            dists.append(d)
            if d < cfg.d_stop:
                break
            if env.task == "rope":
                nxt = baselines.heuristic_step(traj, goal, a)
            else:
                nxt = baselines.cloth_heuristic_step(traj.final_keypoints,
                                                     goal, a)
            if nxt is None:
                break
            a = nxt
        return _pad(dists, cfg.max_step), a

    if method == "iter_linear":
        a = init.copy()
        history = []
        dists = []
        for i in range(cfg.max_step):
            try:
                d, traj, obs = _measure_once(env, a, goal, cfg,
                                             derive_seed(seed, "exec", i))
            except Exception:
                return _pad(dists, cfg.max_step, math.nan), a
            dists.append(d)
            history.append((a.copy(), traj))
            if d < cfg.d_stop or i == cfg.max_step - 1:
                break
            stream = rng_stream(derive_seed(seed, "il", i), "candidates")
            a = baselines.iterlinear_step(history, goal, d, cfg, stream)
        return _pad(dists, cfg.max_step), a

    if method == "delta_reg":
        controller = models["delta_reg"]
        a = init.copy()
        dists = []
        for i in range(cfg.max_step):
            try:
                d, traj, obs = _measure_once(env, a, goal, cfg,
                                             derive_seed(seed, "exec", i))
            except Exception:
                return _pad(dists, cfg.max_step, math.nan), a
            dists.append(d)
            if d < cfg.d_stop or i == cfg.max_step - 1:
                break
            a = controller.step(obs, goal, a)
        return _pad(dists, cfg.max_step), a

    raise ValueError(f"unknown method '{method}'")


def build_models(ds: Dataset, methods, knn_k: int = KNN_K) -> dict:
    """Fit every model the requested methods need (index shared)."""
    models = {}
    needs_index = {"irp", "const_sigma", "delta_reg"} & set(methods)
    if needs_index:
        index = KnnIndex.build(ds)
        if "irp" in methods:
            models["irp"] = KnnPredictor(index, knn_k)
        if "const_sigma" in methods:
            models["const_sigma"] = KnnPredictor(index, knn_k)
        if "delta_reg" in methods:
            models["delta_reg"] = baselines.DeltaRegController(ds, index)
    if "sysid" in methods:
        models["sysid"] = baselines.sysid_fit(ds)
    return models


# ---------------------------------------------------------------------------
# Parallel episode execution
# ---------------------------------------------------------------------------

_CTX: dict = {}


def _init_action_worker(args):
    cell, goal_idx = args
    return (cell, goal_idx), avg_action(_CTX["ds"], _CTX["goals"][(cell,
                                                                   goal_idx)])


def _episode_worker(desc):
    method, split, cell, goal_idx = desc
    ds = _CTX["ds"]
    cfg = _CTX["cfg"]
    goal = _CTX["goals"][(cell, goal_idx)]
    init_idx = _CTX["inits"][(cell, goal_idx)]
    env = Env(ds.task, ds.params_of(cell), _CTX["world"], ds.grid_spec)
    seed = derive_seed(_CTX["seed"], "ep", method, split, cell, goal_idx)
    dists, final_action = run_method_episode(method, env, ds, goal, init_idx,
                                             _CTX["models"], cfg, seed)
    return desc, dists, None if final_action is None else list(final_action)


def _pool_map(fn, items, jobs):
    if jobs <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    ctx = multiprocessing.get_context("fork")
    with ctx.Pool(jobs) as pool:
        return pool.map(fn, items, chunksize=1)


def run_matrix(ds: Dataset, methods, split_names=("test_interp",
                                                  "test_extrap"),
               n_cells: int = 5, n_goals: int = 25,
               cfg: IRPConfig | None = None, seed: int = 0,
               world: WorldVariant | None = None, jobs: int = 1,
               assert_floor: bool = True, knn_k: int = KNN_K,
               name: str = "sim_matrix") -> ResultsTable:
    """Method comparison over (cells x goals) per split.

    The default plant is the noiseless training world (matched dynamics);
    pass a deployment world for the domain-shift variant. Goals are drawn
    from each cell's own stored trajectories (reachable by construction).
    """
    cfg = cfg or IRPConfig(d_stop=0.0)
    world = world or WorldVariant.training()
    models = build_models(ds, methods, knn_k)

    cells_by_split = {}
    for split in split_names:
        idxs = ds.split_indices(split)
        order = rng_stream(derive_seed(seed, "cells", split),
                           "perm").permutation(len(idxs))
        cells_by_split[split] = [int(idxs[k]) for k in order[:n_cells]]

    goals = {}
    for split, cells in cells_by_split.items():
        for cell in cells:
            gs = sample_goals(ds, cell, n_goals,
                              derive_seed(seed, "goals", cell))
            for gi, g in enumerate(gs):
                goals[(cell, gi)] = g

    _CTX.update(ds=ds, cfg=cfg, world=world, models=models, seed=seed,
                goals=goals, inits={})
    try:
        init_pairs = sorted(goals.keys())
        init_results = _pool_map(_init_action_worker, init_pairs, jobs)
        inits = dict(init_results)
        _CTX["inits"] = inits

        descs = []
        for split, cells in cells_by_split.items():
            for cell in cells:
                for gi in range(n_goals):
                    for method in methods:
                        descs.append((method, split, cell, gi))
        results = _pool_map(_episode_worker, descs, jobs)
    finally:
        _CTX.clear()

    table = ResultsTable(name=name)
    finals = {}
    for (method, split, cell, gi), dists, final_action in results:
        for step, d in enumerate(dists, start=1):
            table.rows.append((method, split, cell, gi, step, d))
        finals[(method, split, cell, gi)] = final_action
    table.extras["final_actions"] = finals
    table.extras["cells_by_split"] = cells_by_split

    # the brute-force floor bounds methods restricted to grid actions; the
    # sampling-based loops execute continuous actions and may dip below it
    floors = {}
    matched = world.mode == "training" and world.init_noise_sd == 0.0
    if assert_floor and matched:
        diag = ds.grid_spec.cell_size * math.sqrt(2.0)
        for (cell, gi), goal in goals.items():
            floors[(cell, gi)] = brute_force_optimal(ds, cell, goal)[1]
        for method, split, cell, gi, step, d in table.rows:
            if method not in SINGLE_SHOT:
                continue
            if math.isfinite(d) and d < floors[(cell, gi)] - diag - 1e-9:
                raise RuntimeError(
                    f"floor violation: {method} {split} cell={cell} "
                    f"goal={gi} step={step}: {d} < {floors[(cell, gi)]}")
        table.extras["floors"] = floors

    table.manifest = dict(
        experiment=name, methods=list(methods),
        split_names=list(split_names), n_cells=n_cells, n_goals=n_goals,
        seed=seed, config=asdict(cfg), world=asdict(world),
        cells_by_split=cells_by_split,
    )
    return table


def run_shift_matrix(ds: Dataset, methods=("irp", "optsim", "avg",
                                           "iter_linear"),
                     n_cells: int = 5, n_goals: int = 8,
                     cfg: IRPConfig | None = None, seed: int = 0,
                     world: WorldVariant | None = None,
                     jobs: int = 1) -> ResultsTable:
    """Deployment-world comparison (drag + floor + initial noise on)."""
    cfg = cfg or IRPConfig(max_step=10, d_stop=0.02)
    world = world or WorldVariant.deployment()
    return run_matrix(ds, methods, split_names=("test_interp",),
                      n_cells=n_cells, n_goals=n_goals, cfg=cfg, seed=seed,
                      world=world, jobs=jobs, assert_floor=False,
                      name="shift_matrix")


def run_online_adaptation(ds: Dataset, cfg: IRPConfig | None = None,
                          swap_step: int | None = 6, n_seeds: int = 5,
                          seed: int = 0, jobs: int = 1,
                          knn_k: int = KNN_K) -> ResultsTable:
    """IRP on the base rope with a knot emulation swapped in mid-episode."""
    cfg = (cfg or IRPConfig()).replace(d_stop=0.0)
    base = RopeParams(n_links=ds.rope_n_links,
                      joint_damping=ds.rope_joint_damping)
    knotted = sim_rope.make_knotted(base)
    cell = ds.nearest_param_idx(np.array([base.length, base.lin_density]))
    world = WorldVariant.training()
    index = KnnIndex.build(ds)

    table = ResultsTable(name="online_adaptation")
    finals = {}
    for s in range(n_seeds):
        goal = sample_goals(ds, cell, 1, derive_seed(seed, "goal", s))[0]
        init_idx = avg_action(ds, goal)
        env = ScheduledEnv(ds.task, base, world, ds.grid_spec,
                           swap_step=swap_step, swapped_params=knotted)
        pred = KnnPredictor(index, knn_k)
        log = run_episode(env, goal, pred, ds.action_norm(init_idx), cfg,
                          derive_seed(seed, "ep", s))
        dists = _loop_distances(log, cfg)
        for step, d in enumerate(dists, start=1):
            table.rows.append(("irp", "online", cell, s, step, d))
        finals[("irp", "online", cell, s)] = list(log.final_action)
    table.extras["final_actions"] = finals
    table.manifest = dict(experiment="online_adaptation", swap_step=swap_step,
                          n_seeds=n_seeds, seed=seed, config=asdict(cfg),
                          base_cell=cell)
    return table


def run_embodiment(ds: Dataset, cfg: IRPConfig | None = None,
                   link_lengths=(0.4, 0.5, 0.6), n_goals: int = 8,
                   seed: int = 0, jobs: int = 1,
                   knn_k: int = KNN_K) -> ResultsTable:
    """IRP across robot last-link lengths, same goals, shared predictor."""
    if not set(link_lengths) <= {0.4, 0.5, 0.6}:
        raise ValueError("link lengths must be within {0.4, 0.5, 0.6}")
    cfg = (cfg or IRPConfig()).replace(d_stop=0.0)
    idxs = ds.split_indices("test_interp")
    order = rng_stream(derive_seed(seed, "cells", "embodiment"),
                       "perm").permutation(len(idxs))
    cell = int(idxs[order[0]])
    goals = sample_goals(ds, cell, n_goals, derive_seed(seed, "goals", cell))
    inits = [avg_action(ds, g) for g in goals]
    index = KnnIndex.build(ds)

    table = ResultsTable(name="embodiment")
    finals = {}
    for link in link_lengths:
        label = f"elink_{int(round(link * 100))}"
        world = WorldVariant.training(embodiment_link=link)
        for gi, goal in enumerate(goals):
            env = Env(ds.task, ds.params_of(cell), world, ds.grid_spec)
            pred = KnnPredictor(index, knn_k)
            log = run_episode(env, goal, pred, ds.action_norm(inits[gi]),
                              cfg, derive_seed(seed, "ep", label, gi))
            dists = _loop_distances(log, cfg)
            for step, d in enumerate(dists, start=1):
                table.rows.append((label, "embodiment", cell, gi, step, d))
            finals[(label, gi)] = list(log.final_action)
    table.extras["final_actions"] = finals
    table.manifest = dict(experiment="embodiment", cell=cell,
                          link_lengths=list(link_lengths), n_goals=n_goals,
                          seed=seed, config=asdict(cfg))
    return table


def cloth_goal_lattice(size: float, y0: float) -> Goal:
    """Flat 3x3 target: gripped edge at y0, rows spaced by size/2, on the
    table (z=0); columns project onto identical Y-Z positions."""
    pts = []
    for r in range(3):
        for _c in range(3):
            pts.append((y0 + 0.5 * r * size, 0.0))
    return Goal.cloth(np.asarray(pts))


def run_cloth_eval(ds: Dataset, methods=("irp", "delta_reg",
                                         "iter_heuristic"),
                   n_cloths: int = 5, n_goals: int = 11,
                   cfg: IRPConfig | None = None, seed: int = 0,
                   jobs: int = 1, knn_k: int = KNN_K) -> ResultsTable:
    """Cloth placement comparison on unseen cloths over translated goals."""
    if ds.task != "cloth":
        raise ValueError("run_cloth_eval needs a cloth dataset")
    cfg = (cfg or IRPConfig()).replace(d_stop=0.0)
    world = WorldVariant.training()
    test = np.concatenate([ds.split_indices("test_interp"),
                           ds.split_indices("test_extrap")])
    order = rng_stream(derive_seed(seed, "cells", "cloth"),
                       "perm").permutation(len(test))
    cells = [int(test[k]) for k in order[:n_cloths]]

    y0s = np.linspace(CLOTH_GOAL_Y0_RANGE[0], CLOTH_GOAL_Y0_RANGE[1], n_goals)
    goals = {}
    for cell in cells:
        size = ds.params_of(cell).size
        for gi, y0 in enumerate(y0s):
            goals[(cell, gi)] = cloth_goal_lattice(size, float(y0))

    init_idx = ds.nearest_action_idx(np.asarray(CLOTH_INIT_NORM))
    models = build_models(ds, methods, knn_k)
    _CTX.update(ds=ds, cfg=cfg, world=world, models=models, seed=seed,
                goals=goals,
                inits={key: init_idx for key in goals})
    try:
        descs = [(method, "cloth", cell, gi)
                 for cell in cells for gi in range(n_goals)
                 for method in methods]
        results = _pool_map(_episode_worker, descs, jobs)
    finally:
        _CTX.clear()

    table = ResultsTable(name="cloth_eval")
    finals = {}
    for (method, split, cell, gi), dists, final_action in results:
        for step, d in enumerate(dists, start=1):
            table.rows.append((method, split, cell, gi, step, d))
        finals[(method, split, cell, gi)] = final_action
    table.extras["final_actions"] = finals
    table.manifest = dict(experiment="cloth_eval", methods=list(methods),
                          cells=cells, n_goals=n_goals, seed=seed,
                          config=asdict(cfg), y0_range=CLOTH_GOAL_Y0_RANGE)
    return table


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _fmt(x) -> str:
    if isinstance(x, float):
        if math.isnan(x):
            return "nan"
        return repr(x)
    return str(x)


def write_rows_csv(table: ResultsTable, path: str) -> None:
    with open(path, "w") as f:
        f.write(",".join(ResultsTable.COLUMNS) + "\n")
        for row in table.rows:
            f.write(",".join(_fmt(v) for v in row) + "\n")


def write_agg_csv(table: ResultsTable, path: str) -> None:
    with open(path, "w") as f:
        f.write("method,split,step,n,mean_m,ci95_m\n")
        for method, split, step, n, mean, ci in table.aggregate():
            f.write(f"{method},{split},{step},{n},{_fmt(mean)},{_fmt(ci)}\n")


def write_split_svg(table: ResultsTable, split: str, path: str) -> None:
    """Distance-vs-step line chart with 95% CI whiskers, one line per method."""
    agg = [row for row in table.aggregate() if row[1] == split and row[3] > 0]
    methods = sorted({row[0] for row in agg})
    if not agg or not methods:
        agg = []
        methods = sorted({r[0] for r in table.rows})
    w, h = 640, 420
    ml, mr, mt, mb = 60, 20, 40, 45
    steps = sorted({row[2] for row in agg}) or [1]
    vals = [row[4] + row[5] for row in agg if math.isfinite(row[4])] or [1.0]
    ymax = max(vals) * 1.05
    ymin = 0.0
    xmax = max(steps)

    def sx(step):
        return ml + (step - 1) / max(xmax - 1, 1) * (w - ml - mr)

    def sy(v):
        return mt + (1 - (v - ymin) / (ymax - ymin)) * (h - mt - mb)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" '
             f'height="{h}" viewBox="0 0 {w} {h}">',
             f'<rect width="{w}" height="{h}" fill="white"/>',
             f'<text x="{w/2:.1f}" y="20" text-anchor="middle" '
             f'font-size="14">{table.name}: {split}</text>']
    # axes
    parts.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{h-mb}" '
                 f'stroke="black"/>')
    parts.append(f'<line x1="{ml}" y1="{h-mb}" x2="{w-mr}" y2="{h-mb}" '
                 f'stroke="black"/>')
    for k in range(6):
        v = ymin + (ymax - ymin) * k / 5
        y = sy(v)
        parts.append(f'<line x1="{ml-4}" y1="{y:.1f}" x2="{ml}" y2="{y:.1f}" '
                     f'stroke="black"/>')
        parts.append(f'<text x="{ml-8}" y="{y+4:.1f}" text-anchor="end" '
                     f'font-size="10">{v:.3f}</text>')
    for step in steps:
        x = sx(step)
        parts.append(f'<line x1="{x:.1f}" y1="{h-mb}" x2="{x:.1f}" '
                     f'y2="{h-mb+4}" stroke="black"/>')
        parts.append(f'<text x="{x:.1f}" y="{h-mb+16}" text-anchor="middle" '
                     f'font-size="10">{step}</text>')
    parts.append(f'<text x="{(ml+w-mr)/2:.1f}" y="{h-8}" '
                 f'text-anchor="middle" font-size="12">step</text>')
    parts.append(f'<text x="14" y="{(mt+h-mb)/2:.1f}" font-size="12" '
                 f'transform="rotate(-90 14 {(mt+h-mb)/2:.1f})" '
                 f'text-anchor="middle">distance (m)</text>')
    for mi, method in enumerate(methods):
        color = _PALETTE[mi % len(_PALETTE)]
        pts = [(row[2], row[4], row[5]) for row in agg if row[0] == method
               and math.isfinite(row[4])]
        if pts:
            path_d = " ".join(f"{sx(s):.1f},{sy(v):.1f}" for s, v, _ in pts)
            parts.append(f'<polyline fill="none" stroke="{color}" '
                         f'stroke-width="1.5" points="{path_d}"/>')
            for s, v, ci in pts:
                if ci > 0:
                    parts.append(
                        f'<line x1="{sx(s):.1f}" y1="{sy(v-ci):.1f}" '
                        f'x2="{sx(s):.1f}" y2="{sy(v+ci):.1f}" '
                        f'stroke="{color}" stroke-width="0.8"/>')
        ly = mt + 14 * mi
        parts.append(f'<line x1="{w-mr-110}" y1="{ly}" x2="{w-mr-90}" '
                     f'y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{w-mr-85}" y="{ly+4}" font-size="11">'
                     f'{method}</text>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts) + "\n")


def summarize(tables, out_dir: str, manifest_extra: dict | None = None):
    """Emit per-experiment row/aggregate CSVs, per-split SVGs and a manifest."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for table in tables:
        rows_path = os.path.join(out_dir, f"{table.name}_rows.csv")
        agg_path = os.path.join(out_dir, f"{table.name}_agg.csv")
        write_rows_csv(table, rows_path)
        write_agg_csv(table, agg_path)
        written += [rows_path, agg_path]
        for split in sorted({r[1] for r in table.rows}):
            svg_path = os.path.join(out_dir, f"{table.name}_{split}.svg")
            write_split_svg(table, split, svg_path)
            written.append(svg_path)
    manifest = {
        "tables": [t.manifest for t in tables],
        "outputs": [os.path.basename(p) for p in written],
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    man_path = os.path.join(out_dir, "manifest.json")
    with open(man_path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    written.append(man_path)
    return written
