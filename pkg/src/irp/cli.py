"""Command-line pipeline: dataset generation, predictor building, episode
runs, experiment matrices, and report emission.

Exit codes: 0 success, 1 runtime failure, 2 usage, 3 invalid
configuration or arguments, 4 simulation diverged.

Every flag has a config-file equivalent (flat `key = value` lines with a
mandatory `config_version = 1`); explicit flags win over the config file,
which wins over defaults. The effective merged configuration is echoed
into each run's manifest. IRP_OUT_DIR provides the --out-dir default.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from . import baselines, dataset as dsm, evaluation as ev, predictor as pm
from .core import SimulationDiverged, WorldVariant
from .loop import Env, IRPConfig, run_episode, write_episode_jsonl
from .raster import rasterize, write_pgm

EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_DIVERGED = 4

CONFIG_VERSION = 1

DEFAULTS = {
    "task": "rope",
    "seed": 0,
    "jobs": 1,
    "world": "training",
    "out_dir": None,          # IRP_OUT_DIR or "."
    "dataset": None,
    "model": None,
    "method": "irp",
    "param_dims": None,       # e.g. "8,8"
    "action_dims": None,      # e.g. "9,9,9"
    "repeats": None,
    "init_noise": 0.005,
    "knn_k": ev.KNN_K,
    "n_cells": 5,
    "n_goals": 25,
    "max_step": None,
    "n_samples": 128,
    "d_stop": None,
    "experiment": "sim-matrix",
    "methods": None,          # csv list for eval
    "rope": "test_interp:0",
    "goal": 0,
    "mlp_epochs": 20,
    "mlp_pairs": 4096,
    "swap_step": 6,
    "n_seeds": 5,
}


class CliError(Exception):
    def __init__(self, message, code=EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def read_config(path: str) -> dict:
    out = {}
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise CliError(f"{path}:{line_no}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key.replace("-", "_")] = value
    if "config_version" not in out:
        raise CliError(f"{path}: missing config_version")
    if int(out.pop("config_version")) != CONFIG_VERSION:
        raise CliError(f"{path}: unsupported config_version")
    unknown = set(out) - set(DEFAULTS)
    if unknown:
        raise CliError(f"{path}: unknown keys {sorted(unknown)}")
    return out


def merge_config(args: argparse.Namespace) -> dict:
    cfg = dict(DEFAULTS)
    if getattr(args, "config", None):
        file_cfg = read_config(args.config)
        for key, value in file_cfg.items():
            default = DEFAULTS[key]
            if isinstance(default, int) and not isinstance(default, bool):
                cfg[key] = int(value)
            elif isinstance(default, float):
                cfg[key] = float(value)
            else:
                cfg[key] = value
    for key in DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    if cfg["out_dir"] is None:
        cfg["out_dir"] = os.environ.get("IRP_OUT_DIR", ".")
    return cfg


def _dims(text, n_expected=None):
    if text is None:
        return None
    dims = tuple(int(v) for v in str(text).split(","))
    if n_expected and len(dims) != n_expected:
        raise CliError(f"expected {n_expected} comma-separated dims")
    return dims


def _world(cfg) -> WorldVariant:
    if cfg["world"] == "training":
        return WorldVariant.training(init_noise_sd=float(cfg["init_noise"]))
    if cfg["world"] == "deployment":
        return WorldVariant.deployment(init_noise_sd=float(cfg["init_noise"]))
    raise CliError(f"unknown world '{cfg['world']}'")


def _load_dataset(cfg) -> dsm.Dataset:
    if not cfg["dataset"]:
        raise CliError("--dataset is required for this command")
    return dsm.load(cfg["dataset"])


def _irp_config(cfg, default_max=16, default_dstop=0.0) -> IRPConfig:
    return IRPConfig(
        n_samples=int(cfg["n_samples"]),
        max_step=int(cfg["max_step"]) if cfg["max_step"] is not None
        else default_max,
        d_stop=float(cfg["d_stop"]) if cfg["d_stop"] is not None
        else default_dstop,
    )


def _manifest(cfg, path):
    with open(path, "w") as f:
        json.dump({"effective_config": {k: cfg[k] for k in sorted(cfg)}},
                  f, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_gen(cfg) -> int:
    task = cfg["task"]
    ds = dsm.generate(
        task,
        param_dims=_dims(cfg["param_dims"], 2),
        action_dims=_dims(cfg["action_dims"]),
        repeats=int(cfg["repeats"]) if cfg["repeats"] is not None else None,
        world=WorldVariant.training(init_noise_sd=float(cfg["init_noise"])),
        seed=int(cfg["seed"]),
        jobs=int(cfg["jobs"]),
    )
    dsm.split(ds)
    out = cfg["dataset"] or os.path.join(cfg["out_dir"], f"{task}.irpd")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    dsm.save(ds, out)
    digest = dsm.file_hash(out)
    print(f"dataset: {out}")
    print(f"records: {ds.n_records}")
    print(f"sha256: {digest}")
    return 0


def cmd_build_knn(cfg) -> int:
    ds = _load_dataset(cfg)
    pred = pm.knn_build(ds, int(cfg["knn_k"]))
    out = cfg["model"] or os.path.join(cfg["out_dir"], f"{ds.task}_knn.irpm")
    pm.save_model(pred, out)
    print(f"model: {out}")
    print(f"records indexed: {pred.index.n_records}")
    return 0


def cmd_train_mlp(cfg) -> int:
    ds = _load_dataset(cfg)
    tc = pm.TrainConfig(epochs=int(cfg["mlp_epochs"]),
                        n_pairs=int(cfg["mlp_pairs"]),
                        seed=int(cfg["seed"]))
    pred = pm.mlp_train(ds, tc)
    out = cfg["model"] or os.path.join(cfg["out_dir"], f"{ds.task}_mlp.irpm")
    pm.save_model(pred, out)
    pm.export_weights_csv(pred, out + ".weights.csv")
    print(f"model: {out}")
    print(f"final epoch loss: {pred.loss_history[-1]!r}")
    return 0


def cmd_fit_baselines(cfg) -> int:
    ds = _load_dataset(cfg)
    model = baselines.sysid_fit(ds)
    out = cfg["model"] or os.path.join(cfg["out_dir"],
                                       f"{ds.task}_sysid.irpm")
    baselines.save_sysid(model, ds, out)
    print(f"model: {out}")
    print(f"probes: {model.probes}")
    return 0


def _resolve_cell(ds, text) -> int:
    text = str(text)
    if ":" in text:
        split, k = text.split(":", 1)
        idxs = ds.split_indices(split)
        if not len(idxs):
            raise CliError(f"split '{split}' is empty")
        return int(idxs[int(k) % len(idxs)])
    return int(text)


def cmd_run(cfg) -> int:
    ds = _load_dataset(cfg)
    cell = _resolve_cell(ds, cfg["rope"])
    from .core import derive_seed
    goal_i = int(cfg["goal"])
    goals = dsm.sample_goals(ds, cell, goal_i + 1,
                             derive_seed(int(cfg["seed"]), "goals", cell))
    goal = goals[goal_i]
    world = _world(cfg)
    icfg = _irp_config(cfg, default_max=16, default_dstop=0.02)
    method = cfg["method"]
    models = ev.build_models(ds, (method,), int(cfg["knn_k"]))
    env = Env(ds.task, ds.params_of(cell), world, ds.grid_spec)
    init_idx = dsm.avg_action(ds, goal) if ds.task == "rope" \
        else ds.nearest_action_idx(np.asarray(ev.CLOTH_INIT_NORM))
    if method == "irp":
        log = run_episode(env, goal, models["irp"],
                          ds.action_norm(init_idx), icfg, int(cfg["seed"]))
        for i, d in enumerate(log.distances, start=1):
            print(f"step {i}: d={d:.4f} m")
        print(f"stop: {log.stop_reason}")
        if cfg["out_dir"]:
            os.makedirs(cfg["out_dir"], exist_ok=True)
            write_episode_jsonl(log, os.path.join(cfg["out_dir"],
                                                  "episode.jsonl"))
    else:
        dists, _ = ev.run_method_episode(method, env, ds, goal, init_idx,
                                         models, icfg, int(cfg["seed"]))
        for i, d in enumerate(dists, start=1):
            print(f"step {i}: d={d:.4f} m")
        print("stop: max_step")
    return 0


def cmd_eval(cfg) -> int:
    ds = _load_dataset(cfg)
    seed = int(cfg["seed"])
    jobs = int(cfg["jobs"])
    knn_k = int(cfg["knn_k"])
    experiment = cfg["experiment"]
    methods = tuple(cfg["methods"].split(",")) if cfg["methods"] else None
    if experiment == "sim-matrix":
        cfg_i = _irp_config(cfg)
        table = ev.run_matrix(
            ds, methods or ("irp", "const_sigma", "sysid", "sysid_gt", "avg",
                            "iter_heuristic", "iter_linear", "delta_reg"),
            n_cells=int(cfg["n_cells"]), n_goals=int(cfg["n_goals"]),
            cfg=cfg_i, seed=seed, jobs=jobs, knn_k=knn_k)
    elif experiment == "ablation":
        table = ev.run_matrix(ds, methods or ("irp", "const_sigma"),
                              n_cells=int(cfg["n_cells"]),
                              n_goals=int(cfg["n_goals"]),
                              cfg=_irp_config(cfg), seed=seed, jobs=jobs,
                              knn_k=knn_k, name="ablation")
    elif experiment == "shift-matrix":
        table = ev.run_shift_matrix(
            ds, methods or ("irp", "optsim", "avg", "iter_linear"),
            n_cells=int(cfg["n_cells"]), n_goals=int(cfg["n_goals"]),
            cfg=_irp_config(cfg, default_max=10, default_dstop=0.02),
            seed=seed, world=_world({**cfg, "world": "deployment"}),
            jobs=jobs)
    elif experiment == "online-adaptation":
        table = ev.run_online_adaptation(ds, _irp_config(cfg),
                                         swap_step=int(cfg["swap_step"]),
                                         n_seeds=int(cfg["n_seeds"]),
                                         seed=seed, jobs=jobs, knn_k=knn_k)
    elif experiment == "embodiment":
        table = ev.run_embodiment(ds, _irp_config(cfg),
                                  n_goals=int(cfg["n_goals"]), seed=seed,
                                  jobs=jobs, knn_k=knn_k)
    elif experiment == "cloth-eval":
        table = ev.run_cloth_eval(
            ds, methods or ("irp", "delta_reg", "iter_heuristic"),
            n_cloths=int(cfg["n_cells"]), n_goals=int(cfg["n_goals"]),
            cfg=_irp_config(cfg), seed=seed, jobs=jobs, knn_k=knn_k)
    else:
        raise CliError(f"unknown experiment '{experiment}'")
    extra = {"effective_config": {k: cfg[k] for k in sorted(cfg)},
             "dataset_sha256": dsm.file_hash(cfg["dataset"])}
    written = ev.summarize([table], cfg["out_dir"], manifest_extra=extra)
    for path in written:
        print(f"wrote: {path}")
    return 0


def cmd_report(cfg) -> int:
    if not cfg["dataset"]:
        raise CliError("--dataset must point at a *_rows.csv file here")
    rows_path = cfg["dataset"]
    table = ev.ResultsTable(name=os.path.basename(rows_path)
                            .replace("_rows.csv", ""))
    with open(rows_path) as f:
        header = f.readline().strip().split(",")
        if tuple(header) != ev.ResultsTable.COLUMNS:
            raise CliError(f"unexpected columns {header}")
        for line in f:
            method, split, cell, goal, step, dist = line.strip().split(",")
            table.rows.append((method, split, int(cell), int(goal),
                               int(step), float(dist)))
    written = ev.summarize([table], cfg["out_dir"])
    for path in written:
        print(f"wrote: {path}")
    return 0


def cmd_inspect(cfg) -> int:
    ds = _load_dataset(cfg)
    print(f"task: {ds.task}")
    print(f"seed: {ds.seed}")
    print(f"param grid: {ds.param_dims[0]}x{ds.param_dims[1]}")
    print(f"action grid: {'x'.join(str(d) for d in ds.action_dims)}")
    print(f"repeats: {ds.repeats}")
    print(f"records: {ds.n_records} ({int(ds.valid.sum())} valid)")
    print(f"axis0: {ds.param_axes[0][0]:.4f}..{ds.param_axes[0][-1]:.4f}")
    print(f"axis1: {ds.param_axes[1][0]:.4f}..{ds.param_axes[1][-1]:.4f}")
    if ds.splits is not None:
        for name in dsm.SPLIT_NAMES:
            print(f"split {name}: {len(ds.split_indices(name))} cells")
    if cfg["rope"] and ":" not in str(cfg["rope"]):
        cell = int(cfg["rope"])
        rec = ds.record(cell, int(cfg["goal"]), 0)
        if rec is not None and cfg["out_dir"]:
            os.makedirs(cfg["out_dir"], exist_ok=True)
            prefix = os.path.join(cfg["out_dir"],
                                  f"cell{cell}_action{cfg['goal']}")
            paths = write_pgm(rasterize(rec, ds.grid_spec), prefix)
            for p in paths:
                print(f"wrote: {p}")
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "build-knn": cmd_build_knn,
    "train-mlp": cmd_train_mlp,
    "fit-baselines": cmd_fit_baselines,
    "run": cmd_run,
    "eval": cmd_eval,
    "report": cmd_report,
    "inspect": cmd_inspect,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="irp",
        description="Iterative residual policy workbench: simulators, "
                    "datasets, predictors, control loop, evaluation.",
        epilog="Exit codes: 0 ok, 1 runtime, 2 usage, 3 config, "
               "4 simulation diverged.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def common(p):
        p.add_argument("--task", choices=("rope", "cloth"))
        p.add_argument("--seed", type=int)
        p.add_argument("--jobs", type=int)
        p.add_argument("--dataset", help="dataset container path")
        p.add_argument("--model", help="model container path")
        p.add_argument("--method", help="controller name")
        p.add_argument("--world", choices=("training", "deployment"))
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--out-dir", dest="out_dir",
                       help="output directory (default $IRP_OUT_DIR or .)")

    p = sub.add_parser("gen", help="generate a dataset sweep and split it")
    common(p)
    p.add_argument("--param-dims", dest="param_dims", help="e.g. 8,8")
    p.add_argument("--action-dims", dest="action_dims", help="e.g. 9,9,9")
    p.add_argument("--repeats", type=int)
    p.add_argument("--init-noise", dest="init_noise", type=float)

    p = sub.add_parser("build-knn", help="build the k-NN predictor index")
    common(p)
    p.add_argument("--knn-k", dest="knn_k", type=int)

    p = sub.add_parser("train-mlp", help="train the MLP predictor")
    common(p)
    p.add_argument("--mlp-epochs", dest="mlp_epochs", type=int)
    p.add_argument("--mlp-pairs", dest="mlp_pairs", type=int)

    p = sub.add_parser("fit-baselines", help="fit the sysid baseline model")
    common(p)

    p = sub.add_parser("run", help="run one episode and print distances")
    common(p)
    p.add_argument("--rope", help="cell selector: split:index or index")
    p.add_argument("--goal", type=int, help="goal index within the cell")
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--max-step", dest="max_step", type=int)
    p.add_argument("--d-stop", dest="d_stop", type=float)
    p.add_argument("--knn-k", dest="knn_k", type=int)

    p = sub.add_parser("eval", help="run an experiment matrix")
    common(p)
    p.add_argument("--experiment",
                   choices=("sim-matrix", "ablation", "shift-matrix",
                            "online-adaptation", "embodiment", "cloth-eval"))
    p.add_argument("--methods", help="comma-separated method list")
    p.add_argument("--n-cells", dest="n_cells", type=int)
    p.add_argument("--n-goals", dest="n_goals", type=int)
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--max-step", dest="max_step", type=int)
    p.add_argument("--d-stop", dest="d_stop", type=float)
    p.add_argument("--knn-k", dest="knn_k", type=int)
    p.add_argument("--swap-step", dest="swap_step", type=int)
    p.add_argument("--n-seeds", dest="n_seeds", type=int)
    p.add_argument("--init-noise", dest="init_noise", type=float)

    p = sub.add_parser("report", help="re-aggregate a *_rows.csv report")
    common(p)

    p = sub.add_parser("inspect", help="print dataset info / dump grids")
    common(p)
    p.add_argument("--rope", help="cell index for grid dumps")
    p.add_argument("--goal", type=int, help="action index for grid dumps")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not args.command:
        parser.print_help()
        return EXIT_USAGE
    try:
        cfg = merge_config(args)
        return COMMANDS[args.command](cfg)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except SimulationDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG if isinstance(exc, ValueError) else EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
