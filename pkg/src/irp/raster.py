"""Trajectory <-> occupancy-grid conversions and all distance computations.

Grids are channels x height x width float32 images over a fixed square Y-Z
window. Rasterized (observed) grids are binary {0,1}; predicted grids hold
occupancy probabilities in [0,1]. Row 0 is the top of the window (+Z), and
column 0 the left edge (-Y).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numba
import numpy as np

from .core import Goal, GridSpec, Trajectory

log = logging.getLogger(__name__)

# Grid cells with value >= this count as "on" for chamfer's on-cell sets.
ON_CELL_LEVEL = 0.5


@dataclass(frozen=True)
class OccupancyGrid:
    spec: GridSpec
    data: np.ndarray  # (channels, height, width) float32 in [0,1]

    def __post_init__(self):
        c, h, w = self.data.shape
        if (c, h, w) != (self.spec.channels, self.spec.height, self.spec.width):
            raise ValueError(
                f"data shape {self.data.shape} does not match spec "
                f"({self.spec.channels},{self.spec.height},{self.spec.width})"
            )

    @classmethod
    def zeros(cls, spec: GridSpec) -> "OccupancyGrid":
        return cls(spec, np.zeros((spec.channels, spec.height, spec.width),
                                  dtype=np.float32))


@numba.njit(cache=True)
def _mark_polyline(rows, cols, mask):  # pragma: no cover - jit
    """8-connected Bresenham segments between consecutive cells."""
    for k in range(len(rows) - 1):
        r0, c0 = rows[k], cols[k]
        r1, c1 = rows[k + 1], cols[k + 1]
        dc = abs(c1 - c0)
        sc = 1 if c0 < c1 else -1
        dr = -abs(r1 - r0)
        sr = 1 if r0 < r1 else -1
        err = dc + dr
        while True:
            mask[r0, c0] = 1
            if r0 == r1 and c0 == c1:
                break
            e2 = 2 * err
            if e2 >= dr:
                err += dr
                c0 += sc
            if e2 <= dc:
                err += dc
                r0 += sr
    if len(rows) == 1:
        mask[rows[0], cols[0]] = 1


def track_cells(track: np.ndarray, spec: GridSpec):
    """(rows, cols) of the cells covered by one track's polyline.

    Points outside the window are clipped to the window edge (counted in the
    second return value so callers can warn).
    """
    y = track[:, 1].astype(np.float64)
    z = track[:, 2].astype(np.float64)
    oy, oz = spec.origin
    n_outside = int(np.sum((np.abs(y - oy) > spec.extent)
                           | (np.abs(z - oz) > spec.extent)))
    cell = spec.cell_size
    cols = np.floor((y - (oy - spec.extent)) / cell).astype(np.int64)
    rows = np.floor(((oz + spec.extent) - z) / cell).astype(np.int64)
    np.clip(cols, 0, spec.width - 1, out=cols)
    np.clip(rows, 0, spec.height - 1, out=rows)
    if len(rows) == 0:
        return np.zeros((0, 2), dtype=np.int32), 0
    mask = np.zeros((spec.height, spec.width), dtype=np.uint8)
    _mark_polyline(rows, cols, mask)
    rr, cc = np.nonzero(mask)
    return np.stack([rr, cc], axis=1).astype(np.int32), n_outside


def rasterize(traj: Trajectory, spec: GridSpec) -> OccupancyGrid:
    """Draw each track as 1-cell-wide segments into its own channel."""
    if traj.n_tracks != spec.channels:
        raise ValueError(
            f"trajectory has {traj.n_tracks} tracks but spec has "
            f"{spec.channels} channels"
        )
    data = np.zeros((spec.channels, spec.height, spec.width), dtype=np.float32)
    clipped = 0
    for c, track in enumerate(traj.tracks):
        cells, n_outside = track_cells(track, spec)
        clipped += n_outside
        if len(cells):
            data[c, cells[:, 0], cells[:, 1]] = 1.0
    if clipped:
        log.warning("rasterize: clipped %d out-of-window points to the edge",
                    clipped)
    return OccupancyGrid(spec, data)


# ---------------------------------------------------------------------------
# Distances
# ---------------------------------------------------------------------------


def polyline_point_distance(points: np.ndarray, g: np.ndarray) -> float:
    """Exact distance from point g to the polyline through `points` (n,2)."""
    pts = np.asarray(points, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if len(pts) == 0:
        return math.inf
    if len(pts) == 1:
        return float(np.hypot(*(pts[0] - g)))
    p = pts[:-1]
    d = pts[1:] - p
    seg_len2 = np.einsum("ij,ij->i", d, d)
    seg_len2 = np.where(seg_len2 == 0.0, 1.0, seg_len2)
    t = np.clip(np.einsum("ij,ij->i", g - p, d) / seg_len2, 0.0, 1.0)
    closest = p + t[:, None] * d
    return float(np.sqrt(np.min(np.einsum("ij,ij->i", closest - g,
                                          closest - g))))


def min_distance(traj: Trajectory, g: Goal) -> float:
    """Minimum distance from any point on the tip polyline to the goal."""
    if not g.is_rope:
        raise ValueError("min_distance expects the single-point goal variant")
    if traj.n_tracks != 1:
        raise ValueError("min_distance expects a single-track trajectory")
    return polyline_point_distance(traj.tracks[0][:, 1:3], g.yz)


def grid_min_distance(grid: OccupancyGrid, g: Goal, t: float) -> float:
    """Distance from the goal to the nearest cell center with value >= t.

    Returns math.inf when no cell passes the threshold.
    """
    if not g.is_rope:
        raise ValueError("grid_min_distance expects the single-point goal")
    on = grid.data.max(axis=0) >= t
    rr, cc = np.nonzero(on)
    if len(rr) == 0:
        return math.inf
    y, z = grid.spec.center_of(rr, cc)
    gy, gz = g.yz
    return float(np.sqrt(np.min((y - gy) ** 2 + (z - gz) ** 2)))


def mean_keypoint_distance(final_keypoints: np.ndarray, g: Goal) -> float:
    """Mean of the 9 index-matched Euclidean keypoint distances."""
    final = np.asarray(final_keypoints, dtype=np.float64)
    if g.is_rope:
        raise ValueError("mean_keypoint_distance expects the 9-point goal")
    if final.shape != g.points.shape:
        raise ValueError(
            f"keypoint count mismatch: {final.shape} vs {g.points.shape}"
        )
    return float(np.mean(np.linalg.norm(final - g.points, axis=1)))


def _set_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over points of `a` of the distance to the nearest point of `b`."""
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return float(np.mean(np.sqrt(d2.min(axis=1))))


def chamfer(grid_a: OccupancyGrid, grid_b: OccupancyGrid) -> float:
    """Symmetric mean nearest-cell distance between on-cell sets (meters).

    Computed per channel and averaged over channels; math.inf if either
    side of any channel is empty.
    """
    if grid_a.spec != grid_b.spec:
        raise ValueError("chamfer requires grids with identical specs")
    cell = grid_a.spec.cell_size
    total = 0.0
    for c in range(grid_a.spec.channels):
        pa = np.argwhere(grid_a.data[c] >= ON_CELL_LEVEL).astype(np.float64)
        pb = np.argwhere(grid_b.data[c] >= ON_CELL_LEVEL).astype(np.float64)
        if len(pa) == 0 or len(pb) == 0:
            return math.inf
        total += 0.5 * (_set_distance(pa, pb) + _set_distance(pb, pa)) * cell
    return total / grid_a.spec.channels


def resample_polyline(traj: Trajectory, k: int) -> np.ndarray:
    """K points equally spaced by arc length along track 0 (endpoints kept)."""
    if traj.n_tracks == 0 or len(traj.tracks[0]) == 0:
        raise ValueError("cannot resample an empty track")
    if k < 1:
        raise ValueError("k must be >= 1")
    pts = traj.tracks[0][:, 1:3].astype(np.float64)
    if k == 1 or len(pts) == 1:
        return np.tile(pts[0], (k, 1))
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0.0:
        return np.tile(pts[0], (k, 1))
    # collapse zero-length segments so interpolation abscissae are unique
    keep = np.concatenate([[True], seg > 0.0])
    s, pts = s[keep], pts[keep]
    targets = np.linspace(0.0, s[-1], k)
    y = np.interp(targets, s, pts[:, 0])
    z = np.interp(targets, s, pts[:, 1])
    out = np.stack([y, z], axis=1)
    out[0], out[-1] = pts[0], pts[-1]
    return out


def write_pgm(grid: OccupancyGrid, path_prefix: str) -> list[str]:
    """Debug dump: one 8-bit binary PGM per channel, row-major."""
    paths = []
    for c in range(grid.spec.channels):
        path = f"{path_prefix}_c{c}.pgm"
        img = np.clip(np.round(grid.data[c] * 255.0), 0, 255).astype(np.uint8)
        with open(path, "wb") as f:
            f.write(f"P5 {grid.spec.width} {grid.spec.height} 255\n".encode())
            f.write(img.tobytes())
        paths.append(path)
    return paths
