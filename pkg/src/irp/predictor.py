"""Delta-dynamics predictors: given the observed trajectory image and a
delta action, predict the trajectory after the perturbed action.

Three interchangeable implementations share the contract
`predict(observed: OccupancyGrid, delta: np.ndarray) -> Prediction`:

  * k-NN: matches the observation against pre-rasterized training records
    by chamfer distance, then returns the stored grids at the action-grid
    points nearest to (matched action + delta), averaged cellwise.
  * MLP: a small fully-connected network on downsampled grids with the
    delta broadcast as extra inputs, trained with per-cell Bernoulli loss.
  * Ground truth: actually simulates (last executed action + delta);
    used for upper-bound and oracle runs.
"""

from __future__ import annotations

import hashlib
import math
import struct
from collections import OrderedDict
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import ndimage

from .core import (
    GridSpec,
    SimulationDiverged,
    TrainingDiverged,
    WorldVariant,
    action_space,
    apply_delta,
    derive_seed,
    rng_stream,
)
from .dataset import Dataset
from .raster import ON_CELL_LEVEL, OccupancyGrid, rasterize, track_cells

MODEL_MAGIC = b"IRPM1"
TAG_KNN = 1
TAG_MLP = 2

# chamfer-match verification budget: candidates are checked in sound
# lower-bound order, so results are exact whenever the bound-based stop
# fires first; the budget caps worst-case latency on ambiguous queries
MATCH_BUDGET = 512


@dataclass(frozen=True)
class Prediction:
    grid: OccupancyGrid
    final_keypoints: np.ndarray | None = None
    provenance: str = ""


@numba.njit(cache=True)
def _term1_scan(edt_flat, coords, seg_offsets, n_rec, n_channels,
                out, out_chan):  # pragma: no cover - jit
    """Mean obs-EDT value at stored cells (in cell units), per channel and
    averaged over channels (the stored->observed half of the chamfer)."""
    for rec in range(n_rec):
        total = 0.0
        empty = False
        for c in range(n_channels):
            seg = rec * n_channels + c
            lo = seg_offsets[seg]
            hi = seg_offsets[seg + 1]
            if hi <= lo:
                empty = True
                break
            s = 0.0
            for m in range(lo, hi):
                s += edt_flat[c, coords[m]]
            out_chan[rec, c] = s / (hi - lo)
            total += s / (hi - lo)
        if empty:
            out[rec] = np.inf
        else:
            out[rec] = total / n_channels


@numba.njit(cache=True)
def _candidate_search(order, t1_rec, t1_chan, coords, seg_offsets, pair_ids,
                      obs_pts, obs_offsets, n_channels, width, cell, k,
                      budget, out_recs, out_vals):  # pragma: no cover - jit
    """Verify candidates in lower-bound order; exact chamfer with early
    abort; keep the k best distinct (param, action) pairs."""
    best_vals = np.full(k, np.inf)
    best_recs = np.full(k, -1, dtype=np.int64)
    best_pairs = np.full(k, -1, dtype=np.int64)
    checked = 0
    for oi in range(order.shape[0]):
        rec = order[oi]
        t1m = t1_rec[rec]
        if not np.isfinite(t1m):
            break
        kth = best_vals[k - 1]
        lb = 0.5 * t1m * cell
        if np.isfinite(kth) and lb >= kth:
            break
        if checked >= budget:
            break
        checked += 1
        pair = pair_ids[rec]
        # abort threshold: beat the kth best, or improve this pair's entry
        abort_at = kth
        pair_slot = -1
        for s in range(k):
            if best_pairs[s] == pair:
                pair_slot = s
                if best_vals[s] < abort_at:
                    abort_at = best_vals[s]
                break
        # remaining channels contribute at least their t1 halves
        rest = 0.0
        for c in range(n_channels):
            rest += 0.5 * t1_chan[rec, c]
        value = 0.0
        aborted = False
        for c in range(n_channels):
            rest -= 0.5 * t1_chan[rec, c]
            lo = seg_offsets[rec * n_channels + c]
            hi = seg_offsets[rec * n_channels + c + 1]
            q0 = obs_offsets[c]
            q1 = obs_offsets[c + 1]
            m_obs = q1 - q0
            s2 = 0.0
            for qi in range(q0, q1):
                qr = obs_pts[qi, 0]
                qc = obs_pts[qi, 1]
                best_d2 = 1e30
                for m in range(lo, hi):
                    flat = coords[m]
                    dr = qr - flat // width
                    dc = qc - flat % width
                    d2 = dr * dr + dc * dc
                    if d2 < best_d2:
                        best_d2 = d2
                s2 += np.sqrt(best_d2)
                # sound lower bound on the final value given partial sum
                partial = (value
                           + 0.5 * (t1_chan[rec, c] + s2 / m_obs)
                           + rest) * cell / n_channels
                if partial >= abort_at:
                    aborted = True
                    break
            if aborted:
                break
            value += 0.5 * (t1_chan[rec, c] + s2 / m_obs)
        if aborted:
            continue
        value = value * cell / n_channels
        if pair_slot >= 0:
            if value < best_vals[pair_slot]:
                best_vals[pair_slot] = value
                best_recs[pair_slot] = rec
                mod = pair_slot
            else:
                continue
        else:
            if value >= best_vals[k - 1]:
                continue
            best_vals[k - 1] = value
            best_recs[k - 1] = rec
            best_pairs[k - 1] = pair
            mod = k - 1
        # bubble the modified entry up; order is (value, rec id)
        for s in range(mod, 0, -1):
            better = (best_vals[s] < best_vals[s - 1]
                      or (best_vals[s] == best_vals[s - 1]
                          and best_recs[s - 1] == -1))
            if not better and best_vals[s] == best_vals[s - 1] \
                    and best_recs[s - 1] >= 0 \
                    and best_recs[s] < best_recs[s - 1]:
                better = True
            if not better:
                break
            tv = best_vals[s]
            best_vals[s] = best_vals[s - 1]
            best_vals[s - 1] = tv
            tr = best_recs[s]
            best_recs[s] = best_recs[s - 1]
            best_recs[s - 1] = tr
            tp = best_pairs[s]
            best_pairs[s] = best_pairs[s - 1]
            best_pairs[s - 1] = tp
    n_found = 0
    for s in range(k):
        if best_recs[s] >= 0:
            out_recs[n_found] = best_recs[s]
            out_vals[n_found] = best_vals[s]
            n_found += 1
    return n_found


class KnnIndex:
    """Pre-rasterized training records with chamfer matching.

    Stores every valid train-split record's on-cell coordinates per channel,
    the action-grid metadata needed to snap perturbed actions, and (cloth)
    the settled keypoints. Matching finds the exact k chamfer-nearest
    records using the obs-side distance transform as a pruning lower bound.
    """

    def __init__(self, grid_spec: GridSpec, task: str, action_dims,
                 repeats: int):
        self.grid_spec = grid_spec
        self.task = task
        self.action_dims = tuple(action_dims)
        self.repeats = repeats
        self.coords = None        # flat int32 cell indices, concatenated
        self.seg_offsets = None   # (n_rec * channels + 1,)
        self.param_idx = None
        self.action_idx = None
        self.repeat = None
        self.action_norm = None   # (n_rec, N_a)
        self.final_kps = None     # (n_rec, 9, 2) or None
        self._lookup = {}         # (param_idx, action_idx, repeat) -> rec

    @classmethod
    def build(cls, ds: Dataset) -> "KnnIndex":
        if ds.splits is None or len(ds.split_indices("train")) == 0:
            raise ValueError("dataset needs a non-empty train split")
        idx = cls(ds.grid_spec, ds.task, ds.action_dims, ds.repeats)
        C = ds.grid_spec.channels
        W = ds.grid_spec.width
        coords, offsets = [], [0]
        params, actions, repeats_l, norms, kps = [], [], [], [], []
        total = 0
        for p in ds.split_indices("train"):
            for a in range(ds.n_actions):
                a_norm = ds.action_norm(a)
                for r in range(ds.repeats):
                    k = ds.flat_index(int(p), a, r)
                    if not ds.valid[k]:
                        continue
                    rec = ds.records[k]
                    for ch in range(C):
                        cells, _ = track_cells(rec.tracks[ch], ds.grid_spec)
                        flat = (cells[:, 0].astype(np.int64) * W
                                + cells[:, 1]).astype(np.int32)
                        coords.append(flat)
                        total += len(flat)
                        offsets.append(total)
                    params.append(int(p))
                    actions.append(a)
                    repeats_l.append(r)
                    norms.append(a_norm)
                    if rec.final_keypoints is not None:
                        kps.append(rec.final_keypoints.astype(np.float64))
        idx.coords = (np.concatenate(coords) if coords
                      else np.zeros(0, np.int32))
        idx.seg_offsets = np.asarray(offsets, dtype=np.int64)
        idx.param_idx = np.asarray(params, dtype=np.int32)
        idx.action_idx = np.asarray(actions, dtype=np.int32)
        idx.repeat = np.asarray(repeats_l, dtype=np.int32)
        idx.action_norm = np.asarray(norms, dtype=np.float64)
        idx.final_kps = np.asarray(kps) if kps else None
        idx._build_lookup()
        return idx

    def _build_lookup(self):
        self._lookup = {}
        for rec in range(self.n_records):
            key = (int(self.param_idx[rec]), int(self.action_idx[rec]),
                   int(self.repeat[rec]))
            self._lookup.setdefault(key, rec)
        n_actions = int(np.prod(self.action_dims))
        self.pair_ids = (self.param_idx.astype(np.int64) * n_actions
                         + self.action_idx.astype(np.int64))

    @property
    def n_records(self) -> int:
        return len(self.param_idx)

    def record_cells(self, rec: int):
        """(rows, cols) per channel of one stored record."""
        C = self.grid_spec.channels
        W = self.grid_spec.width
        out = []
        for c in range(C):
            seg = rec * C + c
            flat = self.coords[self.seg_offsets[seg]:self.seg_offsets[seg + 1]]
            out.append((flat // W, flat % W))
        return out

    def find(self, param_idx: int, action_idx: int, repeat: int):
        """Record id for a (param, action) point, tolerating missing repeats."""
        rec = self._lookup.get((param_idx, action_idx, repeat))
        if rec is not None:
            return rec
        for r in range(self.repeats):
            rec = self._lookup.get((param_idx, action_idx, r))
            if rec is not None:
                return rec
        return None

    def snap_action(self, a_norm: np.ndarray) -> int:
        multi = []
        for d, n_d in enumerate(self.action_dims):
            k = int(round(float(a_norm[d]) * (n_d - 1)))
            multi.append(min(max(k, 0), n_d - 1))
        return int(np.ravel_multi_index(tuple(multi), self.action_dims))

    # ---- matching -------------------------------------------------------

    def _obs_cells(self, grid: OccupancyGrid):
        cells = []
        for c in range(self.grid_spec.channels):
            rr, cc = np.nonzero(grid.data[c] >= ON_CELL_LEVEL)
            if len(rr) == 0:
                return None
            cells.append(np.stack([rr, cc], axis=1).astype(np.float64))
        return cells

    def match(self, grid: OccupancyGrid, k: int, exclude=None,
              budget: int = MATCH_BUDGET):
        """The k chamfer-nearest distinct (param, action) pairs for an
        observed grid; each pair is represented by its best-matching repeat.

        Candidates are verified in the order of a sound lower bound (the
        stored->observed half of the chamfer); the search stops when the
        bound exceeds the current k-th best value, so the result is exact
        whenever that happens within the verification budget. Returns
        (record_ids, chamfer_meters) sorted ascending with ties toward the
        lower record id; empty if any observed channel has no on-cells.
        """
        if grid.spec != self.grid_spec:
            raise ValueError("observed grid spec does not match the index")
        obs_cells = self._obs_cells(grid)
        if obs_cells is None or self.n_records == 0:
            return [], []
        C = self.grid_spec.channels
        cell = self.grid_spec.cell_size
        edt = np.empty((C, self.grid_spec.height * self.grid_spec.width),
                       dtype=np.float32)
        for c in range(C):
            mask = grid.data[c] >= ON_CELL_LEVEL
            edt[c] = ndimage.distance_transform_edt(~mask).ravel()
        term1 = np.empty(self.n_records)
        t1_chan = np.empty((self.n_records, C))
        _term1_scan(edt, self.coords, self.seg_offsets, self.n_records,
                    C, term1, t1_chan)
        if exclude is not None:
            term1 = np.where(exclude, np.inf, term1)
        order = np.argsort(term1, kind="stable")
        obs_pts = np.concatenate(obs_cells, axis=0)
        obs_offsets = np.zeros(C + 1, dtype=np.int64)
        for c in range(C):
            obs_offsets[c + 1] = obs_offsets[c] + len(obs_cells[c])
        out_recs = np.empty(k, dtype=np.int64)
        out_vals = np.empty(k)
        n = _candidate_search(order, term1, t1_chan, self.coords,
                              self.seg_offsets, self.pair_ids,
                              obs_pts, obs_offsets, C,
                              self.grid_spec.width, cell, k, budget,
                              out_recs, out_vals)
        return [int(r) for r in out_recs[:n]], [float(v) for v in
                                                out_vals[:n]]


def _grid_key(grid: OccupancyGrid) -> bytes:
    return hashlib.sha1(grid.data.tobytes()).digest()


class KnnPredictor:
    """Delta-dynamics via chamfer retrieval from the training sweep."""

    provenance = "knn"

    def __init__(self, index: KnnIndex, k: int):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.index = index
        self.k = k
        self._cache: OrderedDict[bytes, tuple] = OrderedDict()

    def _matches(self, observed: OccupancyGrid):
        key = _grid_key(observed)
        hit = self._cache.get(key)
        if hit is None:
            hit = self.index.match(observed, self.k)
            self._cache[key] = hit
            if len(self._cache) > 8:
                self._cache.popitem(last=False)
        return hit

    def predict(self, observed: OccupancyGrid, delta: np.ndarray) -> Prediction:
        spec = self.index.grid_spec
        recs, _ = self._matches(observed)
        data = np.zeros((spec.channels, spec.height, spec.width),
                        dtype=np.float32)
        kps_sum = np.zeros((9, 2))
        n_used = 0
        for rec in recs:
            target = apply_delta(self.index.action_norm[rec], delta)
            a2 = self.index.snap_action(target)
            rec2 = self.index.find(int(self.index.param_idx[rec]), a2,
                                   int(self.index.repeat[rec]))
            if rec2 is None:
                continue
            for c, (rr, cc) in enumerate(self.index.record_cells(rec2)):
                data[c, rr, cc] += 1.0
            if self.index.final_kps is not None:
                kps_sum += self.index.final_kps[rec2]
            n_used += 1
        final = None
        if n_used:
            data /= n_used
            if self.index.final_kps is not None:
                final = kps_sum / n_used
        return Prediction(grid=OccupancyGrid(spec, data),
                          final_keypoints=final, provenance=self.provenance)


def knn_build(ds: Dataset, k: int) -> KnnPredictor:
    """Pre-rasterize all train records and wrap them as a k-NN predictor."""
    return KnnPredictor(KnnIndex.build(ds), k)


# ---------------------------------------------------------------------------
# Small from-scratch MLP predictor
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    n_pairs: int = 4096
    lr: float = 1e-3
    weight_decay: float = 1e-6
    delta_sd: float = 0.125
    hidden: tuple[int, ...] = (256, 256)
    down: int = 32
    seed: int = 0


class MlpNet:
    """Plain fully-connected ReLU network in float64 (audit-friendly)."""

    def __init__(self, sizes: list[int], rng: np.random.Generator):
        self.sizes = sizes
        self.weights = []
        self.biases = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            scale = math.sqrt(2.0 / fan_in)
            self.weights.append(rng.standard_normal((fan_in, fan_out)) * scale)
            self.biases.append(np.zeros(fan_out))

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
        return h @ self.weights[-1] + self.biases[-1]

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray):
        """Mean per-cell binary cross entropy on logits, with backprop."""
        acts = [x]
        h = x
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.maximum(h @ w + b, 0.0)
            acts.append(h)
        logits = h @ self.weights[-1] + self.biases[-1]
        # stable BCE-with-logits
        loss = float(np.mean(np.clip(logits, 0, None) - logits * y
                             + np.log1p(np.exp(-np.abs(logits)))))
        n = logits.size
        dlogits = (1.0 / (1.0 + np.exp(-logits)) - y) / n
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.biases)
        grads_w[-1] = acts[-1].T @ dlogits
        grads_b[-1] = dlogits.sum(axis=0)
        dh = dlogits @ self.weights[-1].T
        for layer in range(len(self.weights) - 2, -1, -1):
            dh = dh * (acts[layer + 1] > 0.0)
            grads_w[layer] = acts[layer].T @ dh
            grads_b[layer] = dh.sum(axis=0)
            if layer > 0:
                dh = dh @ self.weights[layer].T
        return loss, grads_w, grads_b


def downsample(data: np.ndarray, down: int) -> np.ndarray:
    """Occupancy max-pool of a (C, H, W) grid image onto (C, down, down)."""
    c, h, w = data.shape
    if h % down or w % down:
        raise ValueError(f"grid {h}x{w} is not divisible by {down}")
    return data.reshape(c, down, h // down, down, w // down).max(axis=(2, 4))


class MlpPredictor:
    """Image-in/image-out delta dynamics on downsampled occupancy grids."""

    provenance = "mlp"

    def __init__(self, net: MlpNet, cfg: TrainConfig, grid_spec: GridSpec,
                 n_a: int):
        self.net = net
        self.cfg = cfg
        self.full_spec = grid_spec
        self.n_a = n_a
        self.out_spec = GridSpec(height=cfg.down, width=cfg.down,
                                 channels=grid_spec.channels,
                                 extent=grid_spec.extent,
                                 origin=grid_spec.origin)

    def _encode(self, observed: OccupancyGrid, delta: np.ndarray):
        small = downsample(observed.data.astype(np.float64), self.cfg.down)
        return np.concatenate([small.ravel(), np.asarray(delta, np.float64)])

    def predict(self, observed: OccupancyGrid, delta: np.ndarray) -> Prediction:
        x = self._encode(observed, delta)[None, :]
        logits = self.net.forward(x)[0]
        probs = 1.0 / (1.0 + np.exp(-logits))
        c = self.out_spec.channels
        data = probs.reshape(c, self.cfg.down, self.cfg.down).astype(np.float32)
        return Prediction(grid=OccupancyGrid(self.out_spec, data),
                          provenance=self.provenance)


def build_training_pairs(ds: Dataset, cfg: TrainConfig):
    """(input grid, snapped delta, target grid) triples per the sampling rule:
    actions uniform over the grid, deltas Gaussian (sd=cfg.delta_sd) snapped
    to the action grid, targets taken from the stored records."""
    rng = rng_stream(cfg.seed, "mlp-pairs")
    train_cells = ds.split_indices("train")
    n_a = len(ds.action_dims)
    xs, ys = [], []
    tries = 0
    while len(xs) < cfg.n_pairs and tries < cfg.n_pairs * 20:
        tries += 1
        p = int(train_cells[rng.integers(len(train_cells))])
        a = int(rng.integers(ds.n_actions))
        r = int(rng.integers(ds.repeats))
        delta = rng.normal(0.0, cfg.delta_sd, n_a)
        a_norm = ds.action_norm(a)
        a2 = ds.nearest_action_idx(np.clip(a_norm + delta, 0.0, 1.0))
        r2 = int(rng.integers(ds.repeats))
        k1 = ds.flat_index(p, a, r)
        k2 = ds.flat_index(p, a2, r2)
        if not (ds.valid[k1] and ds.valid[k2]):
            continue
        src = downsample(
            rasterize(ds.records[k1], ds.grid_spec).data.astype(np.float64),
            cfg.down)
        tgt = downsample(
            rasterize(ds.records[k2], ds.grid_spec).data.astype(np.float64),
            cfg.down)
        snapped_delta = ds.action_norm(a2) - a_norm
        xs.append(np.concatenate([src.ravel(), snapped_delta]))
        ys.append(tgt.ravel())
    return np.asarray(xs), np.asarray(ys)


def mlp_train(ds: Dataset, cfg: TrainConfig) -> MlpPredictor:
    """Train the MLP with AdamW (decoupled weight decay); deterministic."""
    xs, ys = build_training_pairs(ds, cfg)
    if len(xs) == 0:
        raise ValueError("no valid training pairs")
    n_a = len(ds.action_dims)
    c = ds.grid_spec.channels
    in_dim = c * cfg.down * cfg.down + n_a
    out_dim = c * cfg.down * cfg.down
    net = MlpNet([in_dim, *cfg.hidden, out_dim],
                 rng_stream(cfg.seed, "mlp-init"))
    order_rng = rng_stream(cfg.seed, "mlp-order")

    m_w = [np.zeros_like(w) for w in net.weights]
    v_w = [np.zeros_like(w) for w in net.weights]
    m_b = [np.zeros_like(b) for b in net.biases]
    v_b = [np.zeros_like(b) for b in net.biases]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    t = 0
    history = []
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(len(xs))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(xs), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, gw, gb = net.loss_and_grads(xs[idx], ys[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged("mlp training loss non-finite", epoch)
            epoch_loss += loss
            n_batches += 1
            t += 1
            bc1 = 1.0 - beta1 ** t
            bc2 = 1.0 - beta2 ** t
            for i in range(len(net.weights)):
                m_w[i] = beta1 * m_w[i] + (1 - beta1) * gw[i]
                v_w[i] = beta2 * v_w[i] + (1 - beta2) * gw[i] ** 2
                net.weights[i] -= cfg.lr * (
                    (m_w[i] / bc1) / (np.sqrt(v_w[i] / bc2) + eps)
                    + cfg.weight_decay * net.weights[i])
                m_b[i] = beta1 * m_b[i] + (1 - beta1) * gb[i]
                v_b[i] = beta2 * v_b[i] + (1 - beta2) * gb[i] ** 2
                net.biases[i] -= cfg.lr * (m_b[i] / bc1) / (
                    np.sqrt(v_b[i] / bc2) + eps)
        history.append(epoch_loss / max(n_batches, 1))
    pred = MlpPredictor(net, cfg, ds.grid_spec, n_a)
    pred.loss_history = history
    return pred


# ---------------------------------------------------------------------------
# Ground-truth (oracle) predictor
# ---------------------------------------------------------------------------


class GroundTruthPredictor:
    """Predicts by executing (last action + delta) in the actual simulator.

    The executed-action tracker must be updated before each prediction
    round; the control loop does this automatically for predictors exposing
    notify_executed.
    """

    provenance = "gt"

    def __init__(self, task: str, params, world: WorldVariant,
                 grid_spec: GridSpec, sim_seed: int = 0):
        self.task = task
        self.params = params
        self.world = world
        self.grid_spec = grid_spec
        self.sim_seed = sim_seed
        self._last_action = None

    def notify_executed(self, a_norm: np.ndarray) -> None:
        self._last_action = np.asarray(a_norm, dtype=np.float64).copy()

    def predict(self, observed: OccupancyGrid, delta: np.ndarray) -> Prediction:
        if self._last_action is None:
            raise ValueError("no executed action has been recorded yet")
        from . import sim_cloth, sim_rope
        from .core import denormalize_action
        a2 = apply_delta(self._last_action, delta)
        action = denormalize_action(a2, self.task)
        if self.task == "rope":
            traj = sim_rope.execute_whip(self.params, action, self.world,
                                         self.sim_seed)
        else:
            traj = sim_cloth.execute_swing(self.params, action, self.world,
                                           self.sim_seed)
        grid = rasterize(traj, self.grid_spec)
        return Prediction(grid=grid, final_keypoints=(
            None if traj.final_keypoints is None
            else traj.final_keypoints.astype(np.float64)),
            provenance=self.provenance)


def gt_build(task: str, params, world: WorldVariant, grid_spec: GridSpec,
             sim_seed: int = 0) -> GroundTruthPredictor:
    return GroundTruthPredictor(task, params, world, grid_spec, sim_seed)


# ---------------------------------------------------------------------------
# Model container ("IRPM1")
# ---------------------------------------------------------------------------


def save_model(pred, path: str) -> None:
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        if isinstance(pred, KnnPredictor):
            idx = pred.index
            f.write(struct.pack("<B", TAG_KNN))
            f.write(struct.pack("<B", 0 if idx.task == "rope" else 1))
            f.write(struct.pack("<I", pred.k))
            gs = idx.grid_spec
            f.write(struct.pack("<3I", gs.height, gs.width, gs.channels))
            f.write(struct.pack("<3d", gs.extent, gs.origin[0], gs.origin[1]))
            f.write(struct.pack("<B", len(idx.action_dims)))
            f.write(struct.pack(f"<{len(idx.action_dims)}I", *idx.action_dims))
            f.write(struct.pack("<H", idx.repeats))
            f.write(struct.pack("<Q", idx.n_records))
            f.write(struct.pack("<Q", len(idx.coords)))
            f.write(idx.coords.astype("<i4").tobytes())
            f.write(idx.seg_offsets.astype("<i8").tobytes())
            f.write(idx.param_idx.astype("<i4").tobytes())
            f.write(idx.action_idx.astype("<i4").tobytes())
            f.write(idx.repeat.astype("<i4").tobytes())
            f.write(idx.action_norm.astype("<f8").tobytes())
            has_kps = idx.final_kps is not None
            f.write(struct.pack("<B", 1 if has_kps else 0))
            if has_kps:
                f.write(idx.final_kps.astype("<f8").tobytes())
        elif isinstance(pred, MlpPredictor):
            f.write(struct.pack("<B", TAG_MLP))
            cfg = pred.cfg
            gs = pred.full_spec
            f.write(struct.pack("<3I", gs.height, gs.width, gs.channels))
            f.write(struct.pack("<3d", gs.extent, gs.origin[0], gs.origin[1]))
            f.write(struct.pack("<IdddI", cfg.down, cfg.lr, cfg.weight_decay,
                                cfg.delta_sd, pred.n_a))
            sizes = pred.net.sizes
            f.write(struct.pack("<B", len(sizes)))
            f.write(struct.pack(f"<{len(sizes)}I", *sizes))
            for w, b in zip(pred.net.weights, pred.net.biases):
                f.write(w.astype("<f8").tobytes())
                f.write(b.astype("<f8").tobytes())
        else:
            raise ValueError(f"cannot serialize predictor {type(pred)!r}")


def load_model(path: str):
    with open(path, "rb") as f:
        buf = f.read()
    from .dataset import _Cursor
    cur = _Cursor(buf)
    if bytes(cur.unpack("5s")[0]) != MODEL_MAGIC:
        raise ValueError("not a model container")
    tag = cur.unpack("B")[0]
    if tag == TAG_KNN:
        task = "rope" if cur.unpack("B")[0] == 0 else "cloth"
        k = cur.unpack("I")[0]
        h, w, c = cur.unpack("3I")
        ext, oy, oz = cur.unpack("3d")
        spec = GridSpec(height=h, width=w, channels=c, extent=ext,
                        origin=(oy, oz))
        n_a = cur.unpack("B")[0]
        action_dims = cur.unpack(f"{n_a}I")
        repeats = cur.unpack("H")[0]
        n_rec = cur.unpack("Q")[0]
        n_coords = cur.unpack("Q")[0]
        idx = KnnIndex(spec, task, action_dims, repeats)
        idx.coords = cur.array("<i4", n_coords).copy()
        idx.seg_offsets = cur.array("<i8", n_rec * c + 1).copy()
        idx.param_idx = cur.array("<i4", n_rec).copy()
        idx.action_idx = cur.array("<i4", n_rec).copy()
        idx.repeat = cur.array("<i4", n_rec).copy()
        idx.action_norm = cur.array("<f8", n_rec * n_a).reshape(
            n_rec, n_a).copy()
        if cur.unpack("B")[0]:
            idx.final_kps = cur.array("<f8", n_rec * 18).reshape(
                n_rec, 9, 2).copy()
        idx._build_lookup()
        return KnnPredictor(idx, k)
    if tag == TAG_MLP:
        h, w, c = cur.unpack("3I")
        ext, oy, oz = cur.unpack("3d")
        spec = GridSpec(height=h, width=w, channels=c, extent=ext,
                        origin=(oy, oz))
        down, lr, wd, sd, n_a = cur.unpack("IdddI")
        n_sizes = cur.unpack("B")[0]
        sizes = list(cur.unpack(f"{n_sizes}I"))
        cfg = TrainConfig(down=down, lr=lr, weight_decay=wd, delta_sd=sd)
        net = MlpNet.__new__(MlpNet)
        net.sizes = sizes
        net.weights, net.biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            net.weights.append(cur.array("<f8", fan_in * fan_out)
                               .reshape(fan_in, fan_out).copy())
            net.biases.append(cur.array("<f8", fan_out).copy())
        return MlpPredictor(net, cfg, spec, n_a)
    raise ValueError(f"unknown model tag {tag}")


def export_weights_csv(pred: MlpPredictor, path: str) -> None:
    """Audit dump: one row per weight (layer, kind, i, j, value)."""
    with open(path, "w") as f:
        f.write("layer,kind,i,j,value\n")
        for layer, (w, b) in enumerate(zip(pred.net.weights, pred.net.biases)):
            for i in range(w.shape[0]):
                for j in range(w.shape[1]):
                    f.write(f"{layer},w,{i},{j},{w[i, j]!r}\n")
            for j in range(b.shape[0]):
                f.write(f"{layer},b,0,{j},{b[j]!r}\n")
