import json
import math
import xml.dom.minidom

import numpy as np
import pytest

from irp import dataset as dsm, evaluation as ev, predictor as pm
from irp.core import WorldVariant
from irp.loop import Env, IRPConfig, run_episode


CFG = IRPConfig(n_samples=16, max_step=4, d_stop=0.0)


@pytest.fixture(scope="module")
def matrix(small_rope_ds):
    return ev.run_matrix(small_rope_ds, methods=("irp", "avg", "delta_reg"),
                         split_names=("test_interp",), n_cells=1, n_goals=3,
                         cfg=CFG, seed=5, jobs=1)


def test_row_accounting(matrix):
    episodes = 3 * 1 * 3  # methods x cells x goals
    assert len(matrix.rows) == episodes * CFG.max_step
    steps = {row[4] for row in matrix.rows}
    assert steps == set(range(1, CFG.max_step + 1))


def test_single_shot_constant_line(matrix):
    by_episode = {}
    for method, split, cell, goal, step, dist in matrix.rows:
        if method == "avg":
            by_episode.setdefault((cell, goal), []).append(dist)
    for dists in by_episode.values():
        assert len(set(dists)) == 1


def test_matrix_rerun_identical_across_jobs(small_rope_ds, matrix):
    again = ev.run_matrix(small_rope_ds, methods=("irp", "avg", "delta_reg"),
                          split_names=("test_interp",), n_cells=1, n_goals=3,
                          cfg=CFG, seed=5, jobs=2)
    assert again.rows == matrix.rows


def test_aggregate_ci_formula(matrix):
    agg = matrix.aggregate()
    groups = {}
    for method, split, cell, goal, step, dist in matrix.rows:
        groups.setdefault((method, split, step), []).append(dist)
    for method, split, step, n, mean, ci in agg:
        vals = np.asarray([v for v in groups[(method, split, step)]
                           if math.isfinite(v)])
        assert n == len(vals)
        assert mean == pytest.approx(vals.mean(), abs=1e-12)
        sd = vals.std(ddof=1) if len(vals) > 1 else 0.0
        assert ci == pytest.approx(1.96 * sd / math.sqrt(len(vals)),
                                   abs=1e-9)


def test_floor_assertion(matrix, small_rope_ds):
    floors = matrix.extras["floors"]
    diag = small_rope_ds.grid_spec.cell_size * math.sqrt(2)
    for method, split, cell, goal, step, dist in matrix.rows:
        if method in ev.SINGLE_SHOT and math.isfinite(dist):
            assert dist >= floors[(cell, goal)] - diag - 1e-9


def test_summarize_outputs(matrix, tmp_path):
    out = str(tmp_path / "report")
    written = ev.summarize([matrix], out)
    names = {p.split("/")[-1] for p in written}
    assert "sim_matrix_rows.csv" in names
    assert "sim_matrix_agg.csv" in names
    assert "sim_matrix_test_interp.svg" in names
    assert "manifest.json" in names
    rows = open(f"{out}/sim_matrix_rows.csv").read().splitlines()
    assert rows[0] == "method,split,cell,goal,step,distance_m"
    assert len(rows) - 1 == len(matrix.rows)
    manifest = json.load(open(f"{out}/manifest.json"))
    assert manifest["tables"][0]["experiment"] == "sim_matrix"


def test_svg_well_formed_and_legend(matrix, tmp_path):
    path = str(tmp_path / "chart.svg")
    ev.write_split_svg(matrix, "test_interp", path)
    xml.dom.minidom.parse(path)
    text = open(path).read()
    for method in ("irp", "avg", "delta_reg"):
        assert method in text


def test_scheduled_env_no_swap_matches_plain(small_rope_ds):
    ds = small_rope_ds
    cell = 5
    params = ds.params_of(cell)
    world = WorldVariant.training()
    goal = dsm.sample_goals(ds, cell, 1, seed=3)[0]
    init = ds.action_norm(40)
    pred = pm.gt_build("rope", params, world, ds.grid_spec)
    cfg = IRPConfig(n_samples=8, max_step=3, d_stop=0.0)
    plain = run_episode(Env("rope", params, world, ds.grid_spec), goal,
                        pred, init, cfg, seed=2)
    pred2 = pm.gt_build("rope", params, world, ds.grid_spec)
    swaps = ev.ScheduledEnv("rope", params, world, ds.grid_spec,
                            swap_step=None, swapped_params=None)
    swapped = run_episode(swaps, goal, pred2, init, cfg, seed=2)
    assert plain.distances == swapped.distances


def test_scheduled_env_swaps_parameters(small_rope_ds):
    ds = small_rope_ds
    from irp.sim_rope import make_knotted
    params = ds.params_of(5)
    env = ev.ScheduledEnv("rope", params, WorldVariant.training(),
                          ds.grid_spec, swap_step=1,
                          swapped_params=make_knotted(params))
    a = ds.action_norm(40)
    t0 = env.execute(a, 0)
    t1 = env.execute(a, 0)
    assert not np.array_equal(t0.tracks[0], t1.tracks[0])


def test_embodiment_validates_links(small_rope_ds):
    with pytest.raises(ValueError, match="link"):
        ev.run_embodiment(small_rope_ds, CFG, link_lengths=(0.3,))


def test_cloth_goal_lattice():
    goal = ev.cloth_goal_lattice(0.5, 0.3)
    assert goal.points.shape == (9, 2)
    assert np.all(goal.points[:, 1] == 0.0)
    assert np.allclose(sorted(set(goal.points[:, 0])), [0.3, 0.55, 0.8])


def test_cloth_eval_requires_cloth(small_rope_ds):
    with pytest.raises(ValueError, match="cloth"):
        ev.run_cloth_eval(small_rope_ds, cfg=CFG, seed=0)


def test_cloth_eval_smoke(small_cloth_ds):
    table = ev.run_cloth_eval(small_cloth_ds,
                              methods=("irp", "iter_heuristic"),
                              n_cloths=1, n_goals=2,
                              cfg=IRPConfig(n_samples=8, max_step=3,
                                            d_stop=0.0), seed=1)
    assert len(table.rows) == 2 * 1 * 2 * 3
    for _m, _s, _c, _g, _st, dist in table.rows:
        assert math.isfinite(dist) and dist >= 0.0


def test_online_adaptation_rows(small_rope_ds):
    table = ev.run_online_adaptation(
        small_rope_ds, IRPConfig(n_samples=8, max_step=4, d_stop=0.0),
        swap_step=2, n_seeds=2, seed=0)
    assert len(table.rows) == 2 * 4
    assert table.manifest["swap_step"] == 2
