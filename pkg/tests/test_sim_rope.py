import math

import numpy as np
import pytest

from irp.core import (
    GridSpec,
    RopeAction,
    RopeParams,
    SimulationDiverged,
    WorldVariant,
)
from irp import raster, sim_rope

BASE = RopeParams()
TRAIN = WorldVariant.training()


def test_home_pose_is_box_corner():
    j2, j3 = sim_rope.home_pose()
    assert (j2, j3) == (90.0, -110.0)
    assert -30.0 <= j2 <= 90.0
    assert -290.0 <= j3 <= -110.0


def test_static_equilibrium():
    a = RopeAction(1.0, *sim_rope.home_pose())
    track = sim_rope.execute_whip(BASE, a, TRAIN, 3).tracks[0]
    rest = track[0, 1:3]
    late = track[track[:, 0] >= 1.0][:, 1:3]
    assert np.max(np.linalg.norm(late - rest, axis=1)) < 0.01


def test_determinism_bit_identical():
    a = RopeAction(2.8, 10.0, -250.0)
    w = WorldVariant.deployment()
    t1 = sim_rope.execute_whip(BASE, a, w, 99)
    t2 = sim_rope.execute_whip(BASE, a, w, 99)
    assert np.array_equal(t1.tracks[0], t2.tracks[0])
    t3 = sim_rope.execute_whip(BASE, a, w, 100)
    assert not np.array_equal(t1.tracks[0], t3.tracks[0])


def test_track_shape_and_clock():
    a = RopeAction(2.0, 0.0, -200.0)
    traj = sim_rope.execute_whip(BASE, a, TRAIN, 1)
    traj.validate()
    track = traj.tracks[0]
    assert track.shape == (400, 3)
    assert track[0, 0] == 0.0
    assert np.allclose(np.diff(track[:, 0]), 0.01, atol=1e-6)


def test_tip_speed_bound_sweep():
    # empirical bound from a 5^3 action sweep with safety factor 3
    r_total = sim_rope.ARM_LINK1 + TRAIN.embodiment_link + BASE.length
    for v in np.linspace(1.0, 3.14, 5):
        for j2 in np.linspace(-30.0, 90.0, 5):
            for j3 in np.linspace(-290.0, -110.0, 5):
                track = sim_rope.execute_whip(
                    BASE, RopeAction(v, j2, j3), TRAIN, 7).tracks[0]
                assert np.isfinite(track).all()
                speeds = np.linalg.norm(
                    np.diff(track[:, 1:3].astype(np.float64), axis=0),
                    axis=1) * 100.0
                assert speeds.max() <= v * r_total * \
                    sim_rope.SPEED_SAFETY_FACTOR


def test_energy_non_increasing_when_undamped():
    p = RopeParams(joint_damping=0.0)
    a = RopeAction(2.07, 30.0, -200.0)
    times, pos, vel = sim_rope.simulate_full(p, a, TRAIN, 3)
    energy = sim_rope.mechanical_energy(p, pos, vel)

    def trap_total(delta_deg, vmax, acc=sim_rope.JOINT_ACCEL):
        dist = abs(math.radians(delta_deg))
        ta = vmax / acc
        da = 0.5 * acc * ta * ta
        if 2 * da >= dist:
            return 2 * math.sqrt(dist / acc)
        return 2 * ta + (dist - 2 * da) / vmax

    t_stop = max(trap_total(90.0 - 30.0, a.v), trap_total(-110.0 + 200.0, a.v))
    window = energy[times > t_stop]
    rises = np.clip(np.diff(window), 0.0, None).sum()
    assert rises <= 0.01 * np.abs(window).max()


def test_link_constraint_violation():
    for action in (RopeAction(3.14, -30.0, -290.0),
                   RopeAction(1.5, 40.0, -150.0)):
        _, pos, _ = sim_rope.simulate_full(BASE, action, TRAIN, 5)
        assert sim_rope.link_violation(BASE, pos) < 1e-3


def test_monotone_apex_in_speed():
    apexes = []
    for v in np.linspace(1.0, 3.14, 9):
        track = sim_rope.execute_whip(
            BASE, RopeAction(v, -30.0, -245.0), TRAIN, 7).tracks[0]
        apexes.append(track[:, 2].max())
    assert all(apexes[i + 1] >= apexes[i] - 1e-9 for i in range(8))


def test_deployment_gap_exceeds_one_cell():
    spec = GridSpec()
    a = RopeAction(3.14, -30.0, -290.0)
    t_train = sim_rope.execute_whip(BASE, a, WorldVariant.training(), 5)
    t_dep = sim_rope.execute_whip(
        BASE, a, WorldVariant.deployment(init_noise_sd=0.0), 5)
    gap = raster.chamfer(raster.rasterize(t_train, spec),
                         raster.rasterize(t_dep, spec))
    assert gap > spec.cell_size


def test_out_of_box_action_rejected():
    with pytest.raises(ValueError, match="v"):
        sim_rope.execute_whip(BASE, RopeAction(5.0, 0.0, -200.0), TRAIN, 1)


def test_divergence_carries_time():
    w = WorldVariant.deployment(drag_coeff=1e12)
    with pytest.raises(SimulationDiverged) as err:
        sim_rope.execute_whip(BASE, RopeAction(3.14, -30.0, -290.0), w, 1)
    assert err.value.time > 0.0


def test_make_knotted_overrides():
    knotted = sim_rope.make_knotted(BASE)
    assert knotted.link_lengths().sum() == pytest.approx(0.75 * BASE.length)
    masses = knotted.node_masses()
    extra = masses[BASE.n_links - 2] - knotted.link_lengths()[0] * \
        BASE.lin_density
    assert extra == pytest.approx(0.2 * BASE.lin_density * BASE.length)


def test_embodiment_changes_trajectory():
    a = RopeAction(2.5, 0.0, -220.0)
    t_50 = sim_rope.execute_whip(BASE, a, TRAIN, 1)
    t_60 = sim_rope.execute_whip(BASE, a, TRAIN.with_embodiment(0.6), 1)
    assert not np.allclose(t_50.tracks[0], t_60.tracks[0])
