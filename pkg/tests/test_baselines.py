import numpy as np
import pytest

from irp import baselines, dataset as dsm
from irp.core import Goal, Trajectory, WorldVariant, rng_stream
from irp.loop import Env, IRPConfig
from irp.predictor import KnnIndex
from irp.raster import min_distance, rasterize


def test_probe_actions_deterministic(small_rope_ds):
    a = baselines.probe_actions(small_rope_ds)
    b = baselines.probe_actions(small_rope_ds)
    assert a == b
    assert len(a) == 16 and len(set(a)) == 16
    assert all(0 <= idx < small_rope_ds.n_actions for idx in a)


@pytest.fixture(scope="module")
def sysid(small_rope_noiseless_ds):
    return baselines.sysid_fit(small_rope_noiseless_ds)


def _probe_grids(ds, model, cell, world=None, from_dataset=True):
    grids = []
    world = world or WorldVariant.training()
    env = Env("rope", ds.params_of(cell), world, ds.grid_spec)
    for probe in model.probes:
        if from_dataset:
            rec = ds.record(cell, probe, 0)
        else:
            rec = env.execute(ds.action_norm(probe), 0)
        grids.append(rasterize(rec, ds.grid_spec))
    return grids


def test_sysid_parameter_regression_accuracy(small_rope_noiseless_ds, sysid):
    ds = small_rope_noiseless_ds
    errs = []
    for cell in ds.split_indices("train"):
        est = sysid.estimate(_probe_grids(ds, sysid, int(cell)))
        true = np.array([ds.params_of(int(cell)).length,
                         ds.params_of(int(cell)).lin_density])
        errs.append(np.abs(est - true) / true)
    assert float(np.mean(errs)) < 0.10


def test_sysid_estimates_clipped(small_rope_noiseless_ds, sysid):
    ds = small_rope_noiseless_ds
    grids = _probe_grids(ds, sysid, int(ds.split_indices("train")[0]))
    est = sysid.estimate(grids)
    assert sysid.param_lo[0] <= est[0] <= sysid.param_hi[0]
    assert sysid.param_lo[1] <= est[1] <= sysid.param_hi[1]


def test_sysid_train_rope_lookup_consistency(small_rope_noiseless_ds, sysid):
    ds = small_rope_noiseless_ds
    cell = int(ds.split_indices("train")[0])
    goal = dsm.sample_goals(ds, cell, 1, seed=31)[0]
    grids = _probe_grids(ds, sysid, cell)
    action = baselines.sysid_action(ds, sysid, grids, goal)
    assert action == dsm.brute_force_optimal(ds, cell, goal)[0]


def test_sysid_needs_enough_train_cells(small_rope_ds):
    ds = small_rope_ds
    saved = ds.splits.copy()
    try:
        ds.splits = np.full(ds.n_params, dsm.SPLIT_CODE["test_extrap"],
                            dtype=np.uint8)
        ds.splits[5] = dsm.SPLIT_CODE["train"]
        with pytest.raises(ValueError, match="4"):
            baselines.sysid_fit(ds)
    finally:
        ds.splits = saved


def test_sysid_gt_exact_cell_and_determinism(small_rope_ds):
    ds = small_rope_ds
    cell = 5
    goal = dsm.sample_goals(ds, cell, 1, seed=7)[0]
    a1 = baselines.sysid_gt(ds, ds.params_of(cell), goal)
    a2 = baselines.sysid_gt(ds, ds.params_of(cell), goal)
    assert a1 == a2 == dsm.brute_force_optimal(ds, cell, goal)[0]


def test_sysid_gt_not_worse_than_sysid(small_rope_noiseless_ds, sysid):
    """Paired comparison over 25 goals on a noiseless test rope."""
    ds = small_rope_noiseless_ds
    cell = int(ds.split_indices("test_interp")[0])
    goals = dsm.sample_goals(ds, cell, 25, seed=5)
    world = WorldVariant.training()
    env = Env("rope", ds.params_of(cell), world, ds.grid_spec)
    grids = _probe_grids(ds, sysid, cell, from_dataset=False)
    d_gt, d_id = [], []
    for goal in goals:
        a_gt = baselines.sysid_gt(ds, ds.params_of(cell), goal)
        a_id = baselines.sysid_action(ds, sysid, grids, goal)
        t_gt = env.execute(ds.action_norm(a_gt), 0)
        t_id = env.execute(ds.action_norm(a_id), 0)
        d_gt.append(min_distance(t_gt, goal))
        d_id.append(min_distance(t_id, goal))
    assert np.mean(d_gt) <= np.mean(d_id) + 1e-9


def test_optsim_coincides_with_sysid_gt(small_rope_ds):
    ds = small_rope_ds
    goal = dsm.sample_goals(ds, 5, 1, seed=3)[0]
    assert baselines.optsim(ds, ds.params_of(5), goal) == \
        baselines.sysid_gt(ds, ds.params_of(5), goal)


def test_optsim_perfect_in_training_world(small_rope_noiseless_ds):
    ds = small_rope_noiseless_ds
    cell = 5
    goals, prov = dsm.sample_goals(ds, cell, 3, seed=9,
                                   return_provenance=True)
    env = Env("rope", ds.params_of(cell), WorldVariant.training(),
              ds.grid_spec)
    for goal, (a, r, _) in zip(goals, prov):
        action = baselines.optsim(ds, ds.params_of(cell), goal)
        d = min_distance(env.execute(ds.action_norm(action), 0), goal)
        assert d <= dsm.repeat_noise_radius(ds, cell, a, r) + 1e-9


# ---------------------------------------------------------------------------
# iterHeuristic
# ---------------------------------------------------------------------------


def _traj_of(points):
    pts = np.asarray(points, dtype=np.float32)
    t = np.arange(len(pts), dtype=np.float32)[:, None]
    return Trajectory(tracks=(np.hstack([t, pts]),))


def test_heuristic_zero_step_at_goal():
    traj = _traj_of([(0.5, -0.5), (1.0, -1.0)])
    goal = Goal.rope(0.75, -0.75)
    a = np.array([0.5, 0.4, 0.3])
    out = baselines.heuristic_step(traj, goal, a)
    assert np.allclose(out, a)


def test_heuristic_increases_when_short():
    # trajectory crosses the origin-goal segment: swing falls short
    traj = _traj_of([(-1.0, 0.5), (1.0, 0.5)])
    goal = Goal.rope(0.0, 2.0)
    a = np.array([0.5, 0.5, 0.5])
    out = baselines.heuristic_step(traj, goal, a)
    assert out[0] > a[0]
    home = np.array([1.0, 1.0])  # home joints sit at the box maximum
    exc_old = np.abs(a[1:] - home)
    exc_new = np.abs(out[1:] - home)
    assert np.all(exc_new > exc_old)


def test_heuristic_decreases_on_overshoot():
    traj = _traj_of([(-1.0, 3.0), (1.0, 3.0)])
    goal = Goal.rope(0.0, 2.0)
    a = np.array([0.5, 0.5, 0.5])
    out = baselines.heuristic_step(traj, goal, a)
    assert out[0] < a[0]


def test_heuristic_terminates_on_ray_miss():
    traj = _traj_of([(-1.0, -1.0), (-1.0, -2.0)])
    goal = Goal.rope(1.0, 2.0)
    out = baselines.heuristic_step(traj, goal, np.array([0.5, 0.5, 0.5]))
    assert out is None


# ---------------------------------------------------------------------------
# iterLinear
# ---------------------------------------------------------------------------


def _linear_plant(a_norm):
    """Synthetic trajectory whose resampled polyline is linear in a."""
    start = np.array([a_norm[0], a_norm[1] - 1.0])
    end = start + np.array([1.0 + a_norm[2], 0.5 * a_norm[0]])
    pts = np.linspace(start, end, 20)
    return _traj_of(pts)


def test_iterlinear_realizable_plant():
    rng = rng_stream(3, "il")
    history = []
    for _ in range(6):
        a = rng.random(3)
        history.append((a, _linear_plant(a)))
    weights = baselines.iterlinear_fit(history)
    a_new = rng.random(3)
    pred = baselines.iterlinear_predict(weights, a_new)
    true = baselines.resample_polyline(_linear_plant(a_new),
                                       baselines.ITERLINEAR_K)
    assert np.max(np.abs(pred - true)) < 1e-3


def test_iterlinear_single_history_well_defined():
    history = [(np.array([0.5, 0.5, 0.5]), _linear_plant(np.array([0.5,
                                                                   0.5,
                                                                   0.5])))]
    goal = Goal.rope(1.0, -0.5)
    cfg = IRPConfig(n_samples=16)
    out = baselines.iterlinear_step(history, goal, 0.3, cfg,
                                    rng_stream(1, "c"))
    assert out.shape == (3,)
    assert np.all(out >= 0.0) and np.all(out <= 1.0)


# ---------------------------------------------------------------------------
# DeltaReg
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def deltareg(small_rope_ds):
    index = KnnIndex.build(small_rope_ds)
    return baselines.DeltaRegController(small_rope_ds, index, k=1, gain=1.0)


def test_deltareg_table_identity(small_rope_ds, deltareg):
    ds = small_rope_ds
    cell = int(ds.split_indices("train")[0])
    a_idx = 62
    obs = rasterize(ds.record(cell, a_idx, 0), ds.grid_spec)
    goal = dsm.sample_goals(ds, cell, 1, seed=13)[0]
    opt_idx, _ = dsm.brute_force_optimal(ds, cell, goal)
    out = deltareg.step(obs, goal, ds.action_norm(a_idx))
    assert np.allclose(out, ds.action_norm(opt_idx), atol=1e-12)


def test_deltareg_mean_of_modes():
    d1 = np.array([0.3, 0.0, 0.0])
    d2 = np.array([-0.29, 0.01, 0.0])
    avg = baselines.DeltaRegController.average(np.stack([d1, d2]))
    assert np.linalg.norm(avg) < min(np.linalg.norm(d1), np.linalg.norm(d2))


def test_deltareg_respects_box(small_rope_ds, deltareg):
    ds = small_rope_ds
    obs = rasterize(ds.record(5, 100, 0), ds.grid_spec)
    goal = dsm.sample_goals(ds, 5, 1, seed=2)[0]
    out = deltareg.step(obs, goal, np.array([0.98, 0.01, 0.5]))
    assert np.all(out >= 0.0) and np.all(out <= 1.0)


def test_sysid_save_load(small_rope_noiseless_ds, sysid, tmp_path):
    ds = small_rope_noiseless_ds
    path = str(tmp_path / "sysid.irpm")
    baselines.save_sysid(sysid, ds, path)
    loaded = baselines.load_sysid(ds, str(path))
    assert loaded.probes == sysid.probes
    assert np.allclose(loaded.weights, sysid.weights)
    grids = _probe_grids(ds, sysid, int(ds.split_indices("train")[1]))
    assert np.allclose(loaded.estimate(grids), sysid.estimate(grids))
