"""Cruising-preference predictor: trajectory features, a small recurrent net, and its training loop."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from . import nn
from .world import IDLE, INVALID, OCCUPIED, GridMap

# per frame: cruise steps, completed trips | own visit share (9) | POI distance (9)
# | recent drop-offs (9) | idle supply (9) | recent pickups (9)
FRAME_DIM = 2 + 9 * 5


class TrajectoryFeatures:
    """Rolling feature frames per driver, fed one fleet snapshot per time step."""

    def __init__(self, gmap: GridMap, n_drivers: int, poi_grids=(), window: int = 6, h: int = 4):
        self.gmap = gmap
        self.n = n_drivers
        self.h = h
        self.window = window
        n = gmap.n_grids
        if len(poi_grids):
            self.poi_dist = gmap.distance[:, list(poi_grids)].min(axis=1) / (gmap.width + gmap.height)
        else:
            self.poi_dist = np.zeros(n)
        self.visits = np.zeros((n_drivers, n))
        self.cruise = np.zeros(n_drivers)
        self.trips = np.zeros(n_drivers)
        self.prev_status = None
        self.recent_drop = deque(maxlen=window)
        self.recent_pick = deque(maxlen=window)
        self.frames = [deque(maxlen=h) for _ in range(n_drivers)]

    def push(self, grids, statuses):
        grids = np.asarray(grids)
        n = self.gmap.n_grids
        idle = np.array([s == IDLE for s in statuses])
        occ = np.array([s == OCCUPIED for s in statuses])
        drop = np.zeros(n)
        pick = np.zeros(n)
        if self.prev_status is not None:
            was_occ = np.array([s == OCCUPIED for s in self.prev_status])
            np.add.at(drop, grids[was_occ & ~occ], 1.0)
            np.add.at(pick, grids[~was_occ & occ], 1.0)
            self.trips += was_occ & ~occ
        self.recent_drop.append(drop)
        self.recent_pick.append(pick)
        self.prev_status = list(statuses)
        self.visits[np.arange(self.n), grids] += 1.0
        self.cruise = np.where(idle, self.cruise + 1.0, 0.0)
        supply = np.bincount(grids[idle], minlength=n).astype(np.float64)
        drops = np.sum(self.recent_drop, axis=0)
        picks = np.sum(self.recent_pick, axis=0)
        nb = self.gmap.neighbor_table[grids]  # (drivers, 9)
        valid = nb != INVALID
        idx = np.where(valid, nb, 0)

        def per_slot(a):
            return np.where(valid, a[idx], 0.0)

        own = np.take_along_axis(self.visits, idx, axis=1)
        own = np.where(valid, own, 0.0)
        own = own / np.maximum(own.sum(axis=1, keepdims=True), 1.0)
        block = np.concatenate([
            (self.cruise / 10.0)[:, None], (self.trips / 10.0)[:, None], own,
            per_slot(self.poi_dist), per_slot(drops), per_slot(supply), per_slot(picks)], axis=1)
        for d in range(self.n):
            self.frames[d].append(block[d])
        return block

    def history(self, driver: int) -> np.ndarray:
        """(h, FRAME_DIM) with zero rows front-padded."""
        rows = list(self.frames[driver])
        out = np.zeros((self.h, FRAME_DIM))
        if rows:
            out[self.h - len(rows):] = np.asarray(rows)
        return out


class RecurrentPreferenceModel:
    """Single gated recurrent cell + linear head + softmax over the 9 slots."""

    def __init__(self, n_in: int = FRAME_DIM, hidden: int = 32, rng=None, zero=False):
        rng = np.random.default_rng(0) if rng is None else rng
        self.n_in, self.hidden = n_in, hidden

        def init(shape, fan_in):
            if zero:
                return nn.parameter(np.zeros(shape))
            b = np.sqrt(1.0 / fan_in)
            return nn.parameter(rng.uniform(-b, b, size=shape))

        self.params = {
            "Wx": init((n_in, hidden), n_in), "Wh": init((hidden, hidden), hidden), "b": init(hidden, hidden),
            "Ux": init((n_in, hidden), n_in), "Uh": init((hidden, hidden), hidden), "bz": init(hidden, hidden),
            "Wo": init((hidden, 9), hidden), "bo": init(9, hidden),
        }
        self.mean = np.zeros(n_in)
        self.std = np.ones(n_in)

    def standardize(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def logits(self, seq) -> nn.Tensor:
        """seq: (batch, h, n_in) standardized frames."""
        seq = np.asarray(seq, dtype=np.float64)
        if seq.ndim != 3 or seq.shape[2] != self.n_in:
            raise ValueError(f"expected (batch, h, {self.n_in}) frames, got {seq.shape}")
        P = self.params
        h = nn.Tensor(np.zeros((seq.shape[0], self.hidden)))
        for t in range(seq.shape[1]):
            x = nn.Tensor(seq[:, t, :])
            cand = nn.tanh(x @ P["Wx"] + h @ P["Wh"] + P["b"])
            z = nn.sigmoid(x @ P["Ux"] + h @ P["Uh"] + P["bz"])
            h = h + z * (cand - h)
        return h @ P["Wo"] + P["bo"]

    def predict(self, seq, valid) -> np.ndarray:
        seq = np.asarray(seq, dtype=np.float64)
        single = seq.ndim == 2
        if single:
            seq = seq[None]
        valid = np.atleast_2d(np.asarray(valid, bool))
        out = nn.softmax(self.logits(self.standardize(seq)).data, valid).data
        return out[0] if single else out

    def arrays(self):
        out = {f"pref/{k}": v.data for k, v in self.params.items()}
        out["pref/mean"] = self.mean
        out["pref/std"] = self.std
        return out

    @classmethod
    def from_arrays(cls, arrays):
        n_in, hidden = arrays["pref/Wx"].shape
        model = cls(n_in, hidden, zero=True)
        for k in model.params:
            model.params[k].data = arrays[f"pref/{k}"].copy()
        model.mean = arrays["pref/mean"].copy()
        model.std = arrays["pref/std"].copy()
        return model


def predict_preference(history, model: RecurrentPreferenceModel, valid=None) -> np.ndarray:
    """Preference vector from a driver's last h feature frames."""
    history = np.asarray(history, dtype=np.float64)
    if history.ndim != 2 or history.shape[0] < 1:
        raise ValueError("need at least one feature frame")
    valid = np.ones(9, bool) if valid is None else valid
    return model.predict(history, valid)


def train_preference_model(seqs, targets, valid, hidden=32, epochs=30, batch=64, lr=1e-2, seed=0,
                           model=None) -> tuple[RecurrentPreferenceModel, list[float]]:
    """Fit by soft-label cross-entropy. ``targets`` are (N, 9) distributions (one-hot for observed moves)."""
    seqs = np.asarray(seqs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    valid = np.asarray(valid, bool)
    rng = np.random.default_rng(seed)
    if model is None:
        model = RecurrentPreferenceModel(seqs.shape[2], hidden, rng=rng)
        flat = seqs.reshape(-1, seqs.shape[2])
        model.mean = flat.mean(axis=0)
        model.std = np.where(flat.std(axis=0) > 1e-8, flat.std(axis=0), 1.0)
    x = model.standardize(seqs)
    opt = nn.Adam(model.params, lr=lr)
    losses = []
    for _ in range(epochs):
        perm = rng.permutation(len(x))
        tot = 0.0
        for s in range(0, len(x), batch):
            idx = perm[s:s + batch]
            for p in model.params.values():
                p.grad = None
            logp = nn.log_softmax(model.logits(x[idx]), valid[idx])
            loss = nn.mean(nn.total(logp * (-targets[idx]), axis=1))
            loss.backward()
            opt.step()
            tot += loss.item() * len(idx)
        losses.append(tot / len(x))
    return model, losses


def training_pairs(gmap: GridMap, rows, h: int = 4, poi_grids=(), window: int = 6):
    """Build (sequence, one-hot next slot, valid mask) triples from trajectory rows.

    A sample is emitted for each driver that is idle at t and still adjacent at t+1.
    """
    by_t: dict[int, dict[int, tuple[int, str]]] = {}
    drivers = set()
    for d, t, g, s in rows:
        by_t.setdefault(t, {})[d] = (g, s)
        drivers.add(d)
    ids = sorted(drivers)
    pos = {d: i for i, d in enumerate(ids)}
    feats = TrajectoryFeatures(gmap, len(ids), poi_grids, window, h)
    seqs, targets, masks = [], [], []
    times = sorted(by_t)
    last = {}
    for t in times:
        snap = by_t[t]
        for d in ids:
            if d in snap:
                last[d] = snap[d]
        if len(last) < len(ids):
            continue
        grids = [last[d][0] for d in ids]
        status = [last[d][1] for d in ids]
        feats.push(grids, status)
        nxt = by_t.get(t + 1, {})
        for d in ids:
            if status[pos[d]] != IDLE or d not in nxt:
                continue
            g0, g1 = grids[pos[d]], nxt[d][0]
            if gmap.chebyshev(g0, g1) > 1:
                continue
            onehot = np.zeros(9)
            onehot[gmap.slot_of(g0, g1)] = 1.0
            seqs.append(feats.history(pos[d]))
            targets.append(onehot)
            masks.append(gmap.valid_slots(g0))
    return np.array(seqs).reshape(-1, h, FRAME_DIM), np.array(targets).reshape(-1, 9), np.array(masks).reshape(-1, 9)


@dataclass
class PreferenceFitReport:
    samples: int
    final_loss: float
    top1_accuracy: float
