"""Shared domain types, unit conventions, normalization and seeded RNG streams.

Conventions used throughout the package:
  - The world frame is the robot-base Y-Z plane: Y horizontal (meters,
    positive "forward"), Z vertical (meters, positive up), base at (0, 0).
  - Rope joint targets are degrees at the API boundary and converted to
    radians only inside the simulators.
  - Normalized actions live in [0, 1]^N_a via a per-dimension affine map
    onto the closed action box.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np


class SimulationDiverged(RuntimeError):
    """Non-finite state encountered while integrating; carries the sim time."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (t={time:.4f}s)")
        self.time = time


class TrainingDiverged(RuntimeError):
    """Non-finite loss during predictor training; carries the epoch index."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch={epoch})")
        self.epoch = epoch


# ---------------------------------------------------------------------------
# Action spaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ActionSpace:
    """Closed per-dimension box with an affine map onto [0,1]^n."""

    names: tuple[str, ...]
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    @property
    def dim(self) -> int:
        return len(self.names)

    def lo_arr(self) -> np.ndarray:
        return np.asarray(self.lo, dtype=np.float64)

    def hi_arr(self) -> np.ndarray:
        return np.asarray(self.hi, dtype=np.float64)

    def check(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != (self.dim,):
            raise ValueError(
                f"expected {self.dim} action components, got shape {values.shape}"
            )
        for name, v, lo, hi in zip(self.names, values, self.lo, self.hi):
            if not (lo <= v <= hi):
                raise ValueError(
                    f"action field '{name}'={v} outside its range [{lo}, {hi}]"
                )

    def normalize(self, values: np.ndarray) -> np.ndarray:
        self.check(values)
        lo, hi = self.lo_arr(), self.hi_arr()
        return (np.asarray(values, dtype=np.float64) - lo) / (hi - lo)

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            raise ValueError(f"expected {self.dim} components, got shape {x.shape}")
        lo, hi = self.lo_arr(), self.hi_arr()
        return lo + x * (hi - lo)


ROPE_SPACE = ActionSpace(
    names=("v", "j2", "j3"),
    lo=(1.0, -30.0, -290.0),
    hi=(3.14, 90.0, -110.0),
)

# Gripper spline box: via-point-2 (y, z), via-point-3 y, total duration.
# Start point and the end-point Z are fixed (see sim_cloth).
CLOTH_SPACE = ActionSpace(
    names=("p2y", "p2z", "p3y", "dur"),
    lo=(0.0, 0.3, 0.0, 0.9),
    hi=(0.8, 0.8, 1.0, 2.0),
)


@dataclass(frozen=True)
class RopeAction:
    """Whip primitive: joint speed cap (rad/s) and joint 2/3 targets (deg)."""

    v: float
    j2: float
    j3: float

    space = ROPE_SPACE

    def to_array(self) -> np.ndarray:
        return np.array([self.v, self.j2, self.j3], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "RopeAction":
        v, j2, j3 = np.asarray(a, dtype=np.float64)
        return cls(float(v), float(j2), float(j3))


@dataclass(frozen=True)
class ClothAction:
    """Swing primitive: spline via-points (m) and total duration (s)."""

    p2y: float
    p2z: float
    p3y: float
    dur: float

    space = CLOTH_SPACE

    def to_array(self) -> np.ndarray:
        return np.array([self.p2y, self.p2z, self.p3y, self.dur], dtype=np.float64)

    @classmethod
    def from_array(cls, a) -> "ClothAction":
        p2y, p2z, p3y, dur = np.asarray(a, dtype=np.float64)
        return cls(float(p2y), float(p2z), float(p3y), float(dur))


def normalize_action(action) -> np.ndarray:
    """Map an in-box action onto [0,1]^N_a (affine per dimension)."""
    return action.space.normalize(action.to_array())


def denormalize_action(x: np.ndarray, task: str):
    """Inverse of normalize_action for the given task ('rope'|'cloth')."""
    if task == "rope":
        return RopeAction.from_array(ROPE_SPACE.denormalize(x))
    if task == "cloth":
        return ClothAction.from_array(CLOTH_SPACE.denormalize(x))
    raise ValueError(f"unknown task '{task}'")


def action_space(task: str) -> ActionSpace:
    if task == "rope":
        return ROPE_SPACE
    if task == "cloth":
        return CLOTH_SPACE
    raise ValueError(f"unknown task '{task}'")


def apply_delta(a_norm: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Componentwise sum in normalized coordinates, clipped to [0,1]."""
    a_norm = np.asarray(a_norm, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if a_norm.shape != delta.shape:
        raise ValueError(
            f"delta dimension {delta.shape} does not match action {a_norm.shape}"
        )
    return np.clip(a_norm + delta, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Deterministic random streams
# ---------------------------------------------------------------------------


def derive_seed(seed: int, *parts) -> int:
    """Stable 64-bit seed derived from a root seed and a label path."""
    text = ":".join([str(int(seed))] + [str(p) for p in parts])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_stream(seed: int, label: str) -> np.random.Generator:
    """Counter-based generator addressed by (seed, label).

    Identical (seed, label) pairs yield identical streams on any platform;
    distinct labels give independent streams (Philox keyed by SHA-256).
    """
    digest = hashlib.sha256(f"{int(seed)}:{label}".encode("utf-8")).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# Trajectories, goals, grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Trajectory:
    """Time-stamped planar tracks, one per observed keypoint.

    Each track is a float32 array of shape (n, 3) holding (t, y, z) rows with
    strictly increasing t; all tracks share the same sample clock. Cloth
    trajectories additionally carry the 9 settled keypoint positions.
    """

    tracks: tuple[np.ndarray, ...]
    final_keypoints: np.ndarray | None = None

    @property
    def n_tracks(self) -> int:
        return len(self.tracks)

    def validate(self) -> None:
        if not self.tracks:
            raise ValueError("trajectory has no tracks")
        for tr in self.tracks:
            if tr.ndim != 2 or tr.shape[1] != 3:
                raise ValueError(f"track shape {tr.shape} is not (n, 3)")
            if tr.shape[0] >= 2 and not np.all(np.diff(tr[:, 0]) > 0):
                raise ValueError("track timestamps are not strictly increasing")
        clocks = {tr.shape[0] for tr in self.tracks}
        if len(clocks) != 1:
            raise ValueError("tracks do not share one sample clock")
        if self.final_keypoints is not None and self.final_keypoints.shape != (9, 2):
            raise ValueError("final_keypoints must have shape (9, 2)")


@dataclass(frozen=True)
class Goal:
    """Target: a single (y, z) point for rope, 9 keypoint targets for cloth."""

    points: np.ndarray  # (1, 2) or (9, 2), meters

    @classmethod
    def rope(cls, y: float, z: float) -> "Goal":
        return cls(points=np.array([[y, z]], dtype=np.float64))

    @classmethod
    def cloth(cls, keypoints) -> "Goal":
        pts = np.asarray(keypoints, dtype=np.float64).reshape(9, 2)
        return cls(points=pts)

    @property
    def is_rope(self) -> bool:
        return self.points.shape[0] == 1

    @property
    def yz(self) -> np.ndarray:
        if not self.is_rope:
            raise ValueError("not a single-point goal")
        return self.points[0]


@dataclass(frozen=True)
class GridSpec:
    """Square Y-Z raster window: cell size = 2*extent/width."""

    height: int = 256
    width: int = 256
    channels: int = 1
    extent: float = 3.0
    origin: tuple[float, float] = (0.0, 0.0)  # (y, z) window center

    @property
    def cell_size(self) -> float:
        return 2.0 * self.extent / self.width

    def cell_of(self, y: float, z: float) -> tuple[int, int]:
        """Cell (row, col) containing a world point; clips to the window."""
        oy, oz = self.origin
        col = int(math.floor((y - (oy - self.extent)) / self.cell_size))
        row = int(math.floor(((oz + self.extent) - z) / self.cell_size))
        col = min(max(col, 0), self.width - 1)
        row = min(max(row, 0), self.height - 1)
        return row, col

    def center_of(self, rows, cols):
        """World (y, z) coordinates of cell centers (vectorized)."""
        oy, oz = self.origin
        y = (oy - self.extent) + (np.asarray(cols) + 0.5) * self.cell_size
        z = (oz + self.extent) - (np.asarray(rows) + 0.5) * self.cell_size
        return y, z

    def contains(self, y: float, z: float) -> bool:
        oy, oz = self.origin
        return abs(y - oy) <= self.extent and abs(z - oz) <= self.extent


# ---------------------------------------------------------------------------
# Object and world parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RopeParams:
    """Chain-of-point-masses rope attached to the arm tip."""

    length: float = 1.0           # m
    lin_density: float = 0.013    # kg/m
    n_links: int = 25
    joint_damping: float = 5e-5   # N*m*s/rad, inter-node relative damping
    link_length_override: tuple[float, ...] | None = None  # per link, m
    lumped_masses: tuple[float, ...] | None = None         # per node, kg

    def __post_init__(self):
        if self.length <= 0 or self.lin_density <= 0:
            raise ValueError("length and lin_density must be positive")
        if self.n_links < 2:
            raise ValueError("n_links must be at least 2")
        for name in ("link_length_override", "lumped_masses"):
            ov = getattr(self, name)
            if ov is not None and len(ov) != self.n_links:
                raise ValueError(f"{name} must have exactly n_links entries")

    def link_lengths(self) -> np.ndarray:
        if self.link_length_override is not None:
            return np.asarray(self.link_length_override, dtype=np.float64)
        return np.full(self.n_links, self.length / self.n_links)

    def node_masses(self) -> np.ndarray:
        """Mass per free node (node i sits at the far end of link i)."""
        ln = self.link_lengths()
        m = self.lin_density * ln
        if self.lumped_masses is not None:
            m = m + np.asarray(self.lumped_masses, dtype=np.float64)
        return m


@dataclass(frozen=True)
class ClothParams:
    """Square particle-grid cloth; keypoints need an odd grid side."""

    size: float = 0.5          # m
    area_density: float = 0.8  # kg/m^2
    n_grid: int = 13

    def __post_init__(self):
        if self.size <= 0 or self.area_density <= 0:
            raise ValueError("size and area_density must be positive")
        if self.n_grid < 3 or self.n_grid % 2 == 0:
            raise ValueError("n_grid must be odd and >= 3")


TRAINING = "training"
DEPLOYMENT = "deployment"


@dataclass(frozen=True)
class WorldVariant:
    """Simulator variant; deployment adds effects absent during training.

    Training mode forces drag off and disables floor contact. init_noise_sd
    scales a Gaussian perturbation of the initial free-node positions and is
    legal in both modes (it models trial-to-trial repeatability).
    """

    mode: str = TRAINING
    drag_coeff: float = 0.0        # quadratic aero drag scale (deployment)
    floor_z: float = -0.8          # m (deployment)
    init_noise_sd: float = 0.0     # m
    embodiment_link: float = 0.5   # last-link length, m

    def __post_init__(self):
        if self.mode not in (TRAINING, DEPLOYMENT):
            raise ValueError(f"unknown world mode '{self.mode}'")
        if self.mode == TRAINING and self.drag_coeff != 0.0:
            raise ValueError("training mode fixes drag_coeff = 0")

    @property
    def floor_enabled(self) -> bool:
        return self.mode == DEPLOYMENT

    @classmethod
    def training(cls, init_noise_sd: float = 0.0, embodiment_link: float = 0.5):
        return cls(mode=TRAINING, init_noise_sd=init_noise_sd,
                   embodiment_link=embodiment_link)

    @classmethod
    def deployment(cls, drag_coeff: float = 0.012, floor_z: float = -0.8,
                   init_noise_sd: float = 0.005, embodiment_link: float = 0.5):
        return cls(mode=DEPLOYMENT, drag_coeff=drag_coeff, floor_z=floor_z,
                   init_noise_sd=init_noise_sd, embodiment_link=embodiment_link)

    def with_embodiment(self, link: float) -> "WorldVariant":
        return replace(self, embodiment_link=link)
