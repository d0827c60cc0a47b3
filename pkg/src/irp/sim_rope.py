"""Planar whip simulator: a 2-link arm swings a chain of point masses.

The arm is base-fixed at the origin in the Y-Z plane. Joint targets are
reached with a trapezoidal velocity profile whose speed is capped by the
action's `v`; the rope root is pinned to the arm tip. The chain integrates
with semi-implicit steps plus iterative inextensible-link projection.
Deployment worlds add quadratic aerodynamic drag, floor contact and an
initial-state perturbation; training worlds have none of these effects
beyond the optional perturbation.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from .core import (
    ROPE_SPACE,
    RopeAction,
    RopeParams,
    SimulationDiverged,
    Trajectory,
    WorldVariant,
    rng_stream,
)

ARM_LINK1 = 0.425        # m, upper-arm analog
HOME_J2 = 90.0           # deg, box corner; every episode starts here
HOME_J3 = -110.0         # deg
JOINT_ACCEL = 20.0       # rad/s^2, trapezoidal profile acceleration
DT = 1e-3                # s
HORIZON = 4.0            # s
RECORD_EVERY = 10        # steps -> 100 Hz
PROJ_ITERS = 3           # Newton iterations of the exact chain projection
GRAVITY = 9.81
FLOOR_FRICTION = 0.4
SPEED_SAFETY_FACTOR = 3.0

_FASTMATH = {"contract", "arcp", "reassoc"}


def home_pose() -> tuple[float, float]:
    """Fixed documented start configuration (j2, j3) in degrees."""
    return (HOME_J2, HOME_J3)


@numba.njit(inline="always", cache=True)
def _trap_pos(q0, q1, vmax, acc, t):  # pragma: no cover - jit
    """Trapezoidal-profile joint angle at time t (radians in, radians out)."""
    d = q1 - q0
    if d == 0.0:
        return q0
    s = 1.0 if d > 0.0 else -1.0
    dist = abs(d)
    ta = vmax / acc
    da = 0.5 * acc * ta * ta
    if 2.0 * da >= dist:
        ta = math.sqrt(dist / acc)
        tt = 2.0 * ta
        if t >= tt:
            return q1
        if t <= ta:
            return q0 + s * 0.5 * acc * t * t
        tr = tt - t
        return q1 - s * 0.5 * acc * tr * tr
    tc = (dist - 2.0 * da) / vmax
    tt = 2.0 * ta + tc
    if t >= tt:
        return q1
    if t <= ta:
        return q0 + s * 0.5 * acc * t * t
    if t <= ta + tc:
        return q0 + s * (da + vmax * (t - ta))
    tr = tt - t
    return q1 - s * 0.5 * acc * tr * tr


@numba.njit(cache=True, fastmath=_FASTMATH)
def _whip_kernel(r1, r2, q2a, q2b, q3a, q3b, vmax, acc,
                 link_len, masses, joint_damping,
                 drag_coeff, floor_on, floor_z,
                 x, v, dt, n_steps, rec_every,
                 tip_out, full_pos, full_vel, record_full,
                 proj_iters):  # pragma: no cover - jit
    n = link_len.shape[0]  # free nodes; x has n+1 rows (row 0 = root)
    total_len = 0.0
    for k in range(n):
        total_len += link_len[k]
    inv_m = np.empty(n + 1)
    inv_m[0] = 0.0
    for i in range(n):
        inv_m[i + 1] = 1.0 / masses[i]

    # pairwise damping factor per link: exponential decay of relative velocity
    damp_f = np.empty(n)
    mu_red = np.empty(n)
    for k in range(n):
        c = joint_damping / (link_len[k] * link_len[k])
        wa = inv_m[k]
        wb = inv_m[k + 1]
        mu = 1.0 / (wa + wb)
        mu_red[k] = mu
        damp_f[k] = 1.0 - math.exp(-c * dt / mu)

    contact = np.zeros(n + 1, dtype=numba.uint8)
    px = np.zeros((n + 1, 2))
    uy = np.zeros(n)
    uz = np.zeros(n)
    cviol = np.zeros(n)
    diag = np.zeros(n)
    upper = np.zeros(n)
    cp = np.zeros(n)
    dp = np.zeros(n)
    lam = np.zeros(n)
    rec_i = 1
    tip_out[0, 0] = 0.0
    tip_out[0, 1] = x[n, 0]
    tip_out[0, 2] = x[n, 1]
    if record_full:
        for i in range(n + 1):
            full_pos[0, i, 0] = x[i, 0]
            full_pos[0, i, 1] = x[i, 1]
            full_vel[0, i, 0] = v[i, 0]
            full_vel[0, i, 1] = v[i, 1]

    for step in range(1, n_steps + 1):
        t = step * dt
        th1 = _trap_pos(q2a, q2b, vmax, acc, t)
        th2 = th1 + _trap_pos(q3a, q3b, vmax, acc, t)
        rooty = r1 * math.cos(th1) + r2 * math.cos(th2)
        rootz = r1 * math.sin(th1) + r2 * math.sin(th2)
        v[0, 0] = (rooty - x[0, 0]) / dt
        v[0, 1] = (rootz - x[0, 1]) / dt

        # external forces on free nodes
        for i in range(1, n + 1):
            v[i, 1] -= GRAVITY * dt
            if drag_coeff > 0.0:
                ci = drag_coeff * (link_len[i - 1] / total_len)
                sp = math.sqrt(v[i, 0] * v[i, 0] + v[i, 1] * v[i, 1])
                f = ci * sp * inv_m[i] * dt
                v[i, 0] -= f * v[i, 0]
                v[i, 1] -= f * v[i, 1]

        # inter-node damping impulses
        if joint_damping > 0.0:
            for k in range(n):
                a = k
                b = k + 1
                rvy = v[b, 0] - v[a, 0]
                rvz = v[b, 1] - v[a, 1]
                py = damp_f[k] * mu_red[k] * rvy
                pz = damp_f[k] * mu_red[k] * rvz
                v[a, 0] += py * inv_m[a]
                v[a, 1] += pz * inv_m[a]
                v[b, 0] -= py * inv_m[b]
                v[b, 1] -= pz * inv_m[b]

        # predicted positions
        for i in range(1, n + 1):
            px[i, 0] = x[i, 0] + v[i, 0] * dt
            px[i, 1] = x[i, 1] + v[i, 1] * dt
        px[0, 0] = rooty
        px[0, 1] = rootz

        # inextensibility projection: Newton iterations on the constraint
        # system; the chain Jacobian J M^-1 J^T is tridiagonal (Thomas solve)
        for _ in range(proj_iters):
            for k in range(n):
                dy = px[k + 1, 0] - px[k, 0]
                dz = px[k + 1, 1] - px[k, 1]
                dist = math.sqrt(dy * dy + dz * dz)
                if dist < 1e-12:
                    dist = 1e-12
                uy[k] = dy / dist
                uz[k] = dz / dist
                cviol[k] = dist - link_len[k]
            for k in range(n):
                diag[k] = inv_m[k] + inv_m[k + 1]
                if k + 1 < n:
                    upper[k] = -inv_m[k + 1] * (uy[k] * uy[k + 1]
                                                + uz[k] * uz[k + 1])
            # Thomas forward sweep (matrix is symmetric: lower = upper)
            cp[0] = upper[0] / diag[0]
            dp[0] = -cviol[0] / diag[0]
            for k in range(1, n):
                denom = diag[k] - upper[k - 1] * cp[k - 1]
                if k < n - 1:
                    cp[k] = upper[k] / denom
                dp[k] = (-cviol[k] - upper[k - 1] * dp[k - 1]) / denom
            lam[n - 1] = dp[n - 1]
            for k in range(n - 2, -1, -1):
                lam[k] = dp[k] - cp[k] * lam[k + 1]
            for i in range(1, n + 1):
                ddy = lam[i - 1] * uy[i - 1]
                ddz = lam[i - 1] * uz[i - 1]
                if i < n:
                    ddy -= lam[i] * uy[i]
                    ddz -= lam[i] * uz[i]
                px[i, 0] += inv_m[i] * ddy
                px[i, 1] += inv_m[i] * ddz

        if floor_on:
            for i in range(1, n + 1):
                if px[i, 1] < floor_z:
                    px[i, 1] = floor_z
                    contact[i] = 1
                else:
                    contact[i] = 0

        # velocity update from projected positions
        for i in range(1, n + 1):
            vy = (px[i, 0] - x[i, 0]) / dt
            vz = (px[i, 1] - x[i, 1]) / dt
            if floor_on and contact[i]:
                removed = -vz if vz < 0.0 else 0.0
                if vz < 0.0:
                    vz = 0.0
                slow = FLOOR_FRICTION * removed
                if vy > 0.0:
                    vy = vy - slow if vy > slow else 0.0
                else:
                    vy = vy + slow if -vy > slow else 0.0
            v[i, 0] = vy
            v[i, 1] = vz
            x[i, 0] = px[i, 0]
            x[i, 1] = px[i, 1]
        x[0, 0] = rooty
        x[0, 1] = rootz

        if step % 64 == 0:
            ok = True
            for i in range(n + 1):
                if (not math.isfinite(x[i, 0])) or (not math.isfinite(x[i, 1])) \
                        or abs(x[i, 0]) > 50.0 or abs(x[i, 1]) > 50.0:
                    ok = False
            if not ok:
                return 1, step

        if step % rec_every == 0 and rec_i < tip_out.shape[0]:
            tip_out[rec_i, 0] = t
            tip_out[rec_i, 1] = x[n, 0]
            tip_out[rec_i, 2] = x[n, 1]
            if record_full:
                for i in range(n + 1):
                    full_pos[rec_i, i, 0] = x[i, 0]
                    full_pos[rec_i, i, 1] = x[i, 1]
                    full_vel[rec_i, i, 0] = v[i, 0]
                    full_vel[rec_i, i, 1] = v[i, 1]
            rec_i += 1

    return 0, n_steps


def _arm_tip(j2_deg: float, j3_deg: float, r2: float) -> np.ndarray:
    th1 = math.radians(j2_deg)
    th2 = th1 + math.radians(j3_deg)
    return np.array([ARM_LINK1 * math.cos(th1) + r2 * math.cos(th2),
                     ARM_LINK1 * math.sin(th1) + r2 * math.sin(th2)])


def _initial_state(params: RopeParams, world: WorldVariant, seed: int):
    """Rope hanging at rest straight below the home-pose arm tip."""
    n = params.n_links
    link_len = params.link_lengths()
    root = _arm_tip(HOME_J2, HOME_J3, world.embodiment_link)
    x = np.zeros((n + 1, 2))
    x[0] = root
    drop = np.cumsum(link_len)
    x[1:, 0] = root[0]
    x[1:, 1] = root[1] - drop
    if world.init_noise_sd > 0.0:
        noise = rng_stream(seed, "init").standard_normal((n, 2))
        x[1:] += world.init_noise_sd * noise
    v = np.zeros((n + 1, 2))
    return x, v, link_len


def _simulate(params: RopeParams, action: RopeAction, world: WorldVariant,
              seed: int, record_full: bool):
    ROPE_SPACE.check(action.to_array())
    x, v, link_len = _initial_state(params, world, seed)
    masses = params.node_masses()
    n_steps = int(round(HORIZON / DT))
    n_rec = n_steps // RECORD_EVERY
    tip = np.zeros((n_rec, 3))
    if record_full:
        full_pos = np.zeros((n_rec, params.n_links + 1, 2))
        full_vel = np.zeros((n_rec, params.n_links + 1, 2))
    else:
        full_pos = np.zeros((1, 1, 2))
        full_vel = np.zeros((1, 1, 2))
    status, fail_step = _whip_kernel(
        ARM_LINK1, world.embodiment_link,
        math.radians(HOME_J2), math.radians(action.j2),
        math.radians(HOME_J3), math.radians(action.j3),
        action.v, JOINT_ACCEL,
        link_len, masses, params.joint_damping,
        world.drag_coeff, 1 if world.floor_enabled else 0, world.floor_z,
        x, v, DT, n_steps, RECORD_EVERY,
        tip, full_pos, full_vel, 1 if record_full else 0,
        PROJ_ITERS,
    )
    if status != 0:
        raise SimulationDiverged("whip simulation diverged", fail_step * DT)
    return tip, full_pos, full_vel


def execute_whip(params: RopeParams, action: RopeAction, world: WorldVariant,
                 seed: int) -> Trajectory:
    """Run the whip primitive and return the tip track sampled at 100 Hz."""
    tip, _, _ = _simulate(params, action, world, seed, record_full=False)
    return Trajectory(tracks=(tip.astype(np.float32),))


def simulate_full(params: RopeParams, action: RopeAction, world: WorldVariant,
                  seed: int):
    """Full chain state at the recording rate: (times, positions, velocities).

    positions/velocities have shape (n_rec, n_links+1, 2); row 0 of the node
    axis is the kinematic root. Used by audits and diagnostics.
    """
    tip, full_pos, full_vel = _simulate(params, action, world, seed,
                                        record_full=True)
    return tip[:, 0].copy(), full_pos, full_vel


def mechanical_energy(params: RopeParams, positions: np.ndarray,
                      velocities: np.ndarray) -> np.ndarray:
    """Total chain energy (J) per recorded sample; root is massless."""
    m = params.node_masses()
    ke = 0.5 * np.sum(m[None, :] * np.sum(velocities[:, 1:, :] ** 2, axis=2),
                      axis=1)
    pe = GRAVITY * np.sum(m[None, :] * positions[:, 1:, 1], axis=1)
    return ke + pe


def link_violation(params: RopeParams, positions: np.ndarray) -> float:
    """Worst relative deviation of any link length across samples."""
    ln = params.link_lengths()
    d = np.diff(positions, axis=1)
    dist = np.sqrt(np.sum(d * d, axis=2))
    return float(np.max(np.abs(dist - ln[None, :]) / ln[None, :]))


def make_knotted(params: RopeParams) -> RopeParams:
    """Knot emulation: 25% shorter links, 20% of rope mass lumped near the tip."""
    n = params.n_links
    short = 0.75 * params.length / n
    lumped = [0.0] * n
    lumped[n - 2] = 0.2 * params.lin_density * params.length
    return RopeParams(
        length=params.length,
        lin_density=params.lin_density,
        n_links=n,
        joint_damping=params.joint_damping,
        link_length_override=tuple([short] * n),
        lumped_masses=tuple(lumped),
    )
