"""Grid-city simulator: map geometry, demand, matching and the per-step clock."""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

INVALID = -1
STAY_SLOT = 4
# local 3x3 order: NW, N, NE, W, C, E, SW, S, SE (y grows southward)
SLOT_OFFSETS = [(-1, -1), (0, -1), (1, -1), (-1, 0), (0, 0), (1, 0), (-1, 1), (0, 1), (1, 1)]

IDLE, REPOSITIONING, OCCUPIED = "idle", "repositioning", "occupied"
PENDING, MATCHED, SERVED, EXPIRED = "pending", "matched", "served", "expired"


@dataclass(frozen=True)
class GridMap:
    width: int
    height: int
    cell_edge_km: float = 1.2

    def __post_init__(self):
        if self.width < 3 or self.height < 3:
            raise ValueError(f"grid map must be at least 3x3, got {self.width}x{self.height}")

    @property
    def n_grids(self) -> int:
        return self.width * self.height

    def grid_id(self, x: int, y: int) -> int:
        if not (0 <= x < self.width and 0 <= y < self.height):
            raise ValueError(f"({x}, {y}) is off the map")
        return y * self.width + x

    def coords(self, g: int) -> tuple[int, int]:
        return g % self.width, g // self.width

    @property
    def center(self) -> tuple[int, int]:
        return (self.width - 1) // 2, (self.height - 1) // 2

    @cached_property
    def _xy(self):
        g = np.arange(self.n_grids)
        return g % self.width, g // self.width

    @cached_property
    def neighbor_table(self) -> np.ndarray:
        """(n_grids, 9) global ids per local slot, INVALID off the map."""
        xs, ys = self._xy
        table = np.full((self.n_grids, 9), INVALID, dtype=np.int64)
        for k, (dx, dy) in enumerate(SLOT_OFFSETS):
            nx, ny = xs + dx, ys + dy
            ok = (nx >= 0) & (nx < self.width) & (ny >= 0) & (ny < self.height)
            table[ok, k] = ny[ok] * self.width + nx[ok]
        table.setflags(write=False)
        return table

    @cached_property
    def distance(self) -> np.ndarray:
        """Manhattan distance matrix between grid ids."""
        xs, ys = self._xy
        d = np.abs(xs[:, None] - xs[None, :]) + np.abs(ys[:, None] - ys[None, :])
        d.setflags(write=False)
        return d

    def neighborhood9(self, g: int) -> np.ndarray:
        return self.neighbor_table[g]

    def valid_slots(self, g: int) -> np.ndarray:
        return self.neighbor_table[g] != INVALID

    def manhattan(self, a: int, b: int) -> int:
        return int(self.distance[a, b])

    def chebyshev(self, a: int, b: int) -> int:
        ax, ay = self.coords(a)
        bx, by = self.coords(b)
        return max(abs(ax - bx), abs(ay - by))

    def slot_of(self, origin: int, target: int) -> int:
        ox, oy = self.coords(origin)
        tx, ty = self.coords(target)
        dx, dy = tx - ox, ty - oy
        if max(abs(dx), abs(dy)) > 1:
            raise ValueError(f"grid {target} is not adjacent to {origin}")
        return (dy + 1) * 3 + (dx + 1)

    def path(self, a: int, b: int) -> list[int]:
        """Manhattan route from a to b (x first, then y), excluding a."""
        ax, ay = self.coords(a)
        bx, by = self.coords(b)
        out = []
        step = 1 if bx > ax else -1
        for x in range(ax + step, bx + step, step) if bx != ax else ():
            out.append(self.grid_id(x, ay))
        step = 1 if by > ay else -1
        for y in range(ay + step, by + step, step) if by != ay else ():
            out.append(self.grid_id(bx, y))
        return out


def radial_grid_order(gmap: GridMap) -> list[int]:
    """Center first, then rings of growing Chebyshev radius, clockwise from due north."""
    cx, cy = gmap.center

    def key(g):
        x, y = gmap.coords(g)
        dx, dy = x - cx, y - cy
        ring = max(abs(dx), abs(dy))
        angle = math.atan2(dx, -dy) % (2 * math.pi)
        return ring, angle

    return sorted(range(gmap.n_grids), key=key)


@dataclass(frozen=True)
class GapVector:
    delta: np.ndarray  # (9,) int, 0 on invalid slots
    valid: np.ndarray  # (9,) bool

    def __post_init__(self):
        if self.delta.shape != (9,) or self.valid.shape != (9,):
            raise ValueError("gap vectors have exactly 9 slots")

    def as_list(self):
        return [int(d) if v else None for d, v in zip(self.delta, self.valid)]


def compute_gap(gmap: GridMap, grid: int, supply_forecast, demand_forecast) -> GapVector:
    """Per-slot supply minus demand over the 3x3 neighborhood of ``grid``."""
    nb = gmap.neighbor_table[grid]
    valid = nb != INVALID
    delta = np.zeros(9, dtype=np.int64)
    idx = nb[valid]
    delta[valid] = np.asarray(supply_forecast)[idx] - np.asarray(demand_forecast)[idx]
    return GapVector(delta, valid)


# --- demand -------------------------------------------------------------------

@dataclass
class RideRequest:
    id: int
    origin: int
    dest: int
    created_t: int
    fare_cents: int
    status: str = PENDING
    driver: int | None = None

    @property
    def fare(self) -> float:
        return self.fare_cents / 100.0


def fare_cents(distance: int, base: float = 2.5, per_grid: float = 1.0) -> int:
    return int(round(100 * (base + per_grid * distance)))


@dataclass
class Hotspot:
    x: int
    y: int
    peak: float
    spread: float


@dataclass
class DemandSpec:
    """Synthetic demand: background + Gaussian hotspots, scaled by a time-of-day profile."""
    base_intensity: float = 0.02
    hotspots: list = field(default_factory=list)
    profile: list = field(default_factory=lambda: [1.0])
    dest_scale: float = 3.0
    dest_hot_bias: float = 1.0
    fare_base: float = 2.5
    fare_per_grid: float = 1.0

    def validate(self):
        if self.base_intensity < 0:
            raise ValueError("base_intensity must be nonnegative")
        for h in self.hotspots:
            if h.peak < 0 or h.spread <= 0:
                raise ValueError(f"invalid hotspot {h}")
        if any(p < 0 for p in self.profile) or not self.profile:
            raise ValueError("time profile multipliers must be nonnegative")
        if self.dest_scale <= 0:
            raise ValueError("dest_scale must be positive")


def hotness_map(gmap: GridMap, spec: DemandSpec) -> np.ndarray:
    xs, ys = gmap._xy
    out = np.full(gmap.n_grids, spec.base_intensity, dtype=np.float64)
    for h in spec.hotspots:
        d2 = (xs - h.x) ** 2 + (ys - h.y) ** 2
        out += h.peak * np.exp(-d2 / (2 * h.spread ** 2))
    return out


def intensity_table(gmap: GridMap, spec: DemandSpec, steps: int) -> np.ndarray:
    """(steps, n_grids) Poisson arrival rates."""
    spec.validate()
    prof = np.asarray(spec.profile, dtype=np.float64)
    bucket = (np.arange(steps) * len(prof)) // steps
    return prof[bucket][:, None] * hotness_map(gmap, spec)[None, :]


def destination_kernel(gmap: GridMap, spec: DemandSpec) -> np.ndarray:
    hot = hotness_map(gmap, spec)
    hot = hot / hot.max() if hot.max() > 0 else hot
    w = np.exp(-gmap.distance / spec.dest_scale) * (1.0 + spec.dest_hot_bias * hot)[None, :]
    return w / w.sum(axis=1, keepdims=True)


def generate_demand(gmap: GridMap, spec: DemandSpec, steps: int, rng) -> list[RideRequest]:
    """Sample an episode's requests; ids follow (t, origin) order."""
    lam = intensity_table(gmap, spec, steps)
    counts = rng.poisson(lam)
    kernel_cdf = np.cumsum(destination_kernel(gmap, spec), axis=1)
    t_idx, g_idx = np.nonzero(counts)
    reps = counts[t_idx, g_idx]
    ts = np.repeat(t_idx, reps)
    origins = np.repeat(g_idx, reps)
    u = rng.random(len(origins))
    dests = np.array([min(int(np.searchsorted(kernel_cdf[o], x, side="right")), gmap.n_grids - 1)
                      for o, x in zip(origins, u)], dtype=np.int64)
    out = []
    for i, (t, o, d) in enumerate(zip(ts, origins, dests)):
        dist = int(gmap.distance[o, d])
        out.append(RideRequest(i, int(o), int(d), int(t), fare_cents(dist, spec.fare_base, spec.fare_per_grid)))
    return out


REQUEST_HEADER = ["request_id", "t", "origin_x", "origin_y", "dest_x", "dest_y", "fare"]
TRAJECTORY_HEADER = ["driver_id", "t", "grid_x", "grid_y", "status"]


def write_requests_csv(path, gmap: GridMap, requests):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REQUEST_HEADER)
        for r in requests:
            ox, oy = gmap.coords(r.origin)
            dx, dy = gmap.coords(r.dest)
            w.writerow([r.id, r.created_t, ox, oy, dx, dy, f"{r.fare_cents / 100:.2f}"])


def read_requests_csv(path, gmap: GridMap, fare_base=2.5, fare_per_grid=1.0) -> list[RideRequest]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(REQUEST_HEADER[:-1]) - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            o = gmap.grid_id(int(row["origin_x"]), int(row["origin_y"]))
            d = gmap.grid_id(int(row["dest_x"]), int(row["dest_y"]))
            raw = (row.get("fare") or "").strip()
            cents = int(round(100 * float(raw))) if raw else fare_cents(gmap.manhattan(o, d), fare_base, fare_per_grid)
            if cents <= 0:
                raise ValueError(f"{path}: request {row['request_id']} has non-positive fare")
            out.append(RideRequest(int(row["request_id"]), o, d, int(row["t"]), cents))
    out.sort(key=lambda r: (r.created_t, r.id))
    return out


def write_trajectories_csv(path, gmap: GridMap, rows):
    """rows: iterable of (driver_id, t, grid, status)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_HEADER)
        for d, t, g, s in rows:
            x, y = gmap.coords(g)
            w.writerow([d, t, x, y, s])


def read_trajectories_csv(path, gmap: GridMap):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != TRAJECTORY_HEADER:
            raise ValueError(f"{path}: expected header {','.join(TRAJECTORY_HEADER)}")
        return [(int(r["driver_id"]), int(r["t"]), gmap.grid_id(int(r["grid_x"]), int(r["grid_y"])), r["status"])
                for r in reader]


def _round_half_up(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5).astype(np.int64)


class DemandForecaster:
    """Next-step request counts per grid, either the generator's rounded expectation or a historical average."""

    def __init__(self, mode: str, n_grids: int, steps: int, intensity=None, history=None, bucket_steps: int = 1):
        if mode not in ("oracle", "historical"):
            raise ValueError(f"unknown forecast mode {mode!r}")
        self.mode = mode
        self.n_grids = n_grids
        self.steps = steps
        self.bucket_steps = max(1, int(bucket_steps))
        if mode == "oracle":
            if intensity is None:
                raise ValueError("oracle forecasts need generator intensities")
            self.table = _round_half_up(intensity)
        else:
            hist = [] if history is None else list(history)
            if not hist:
                log.warning("no demand history available; forecasting zero demand")
                self.table = np.zeros((steps, n_grids), dtype=np.int64)
            else:
                self.table = _round_half_up(self._bucket_means(np.stack(hist)))

    def _bucket_means(self, counts):
        # counts: (episodes, steps, n_grids)
        e, t, n = counts.shape
        b = self.bucket_steps
        buckets = np.arange(t) // b
        sums = np.zeros((buckets.max() + 1, n))
        np.add.at(sums, buckets, counts.sum(axis=0))
        widths = np.bincount(buckets).astype(np.float64)
        return (sums / (widths[:, None] * e))[buckets]

    def forecast(self, t_next: int) -> np.ndarray:
        if t_next >= self.steps:
            return np.zeros(self.n_grids, dtype=np.int64)
        return self.table[t_next]


def request_counts(requests, n_grids: int, steps: int) -> np.ndarray:
    counts = np.zeros((steps, n_grids), dtype=np.int64)
    for r in requests:
        if r.created_t < steps:
            counts[r.created_t, r.origin] += 1
    return counts


def predict_demand(history, grid: int, t_next: int, bucket_steps: int = 1, intensity=None) -> int:
    """Single-grid forecast: historical per-bucket mean over prior episodes, or rounded intensity."""
    if intensity is not None:
        return int(_round_half_up(intensity[t_next, grid]))
    hist = [] if history is None else list(history)
    if not hist:
        log.warning("no demand history available; forecasting zero demand")
        return 0
    arr = np.stack([np.asarray(h) for h in hist])
    f = DemandForecaster("historical", arr.shape[2], arr.shape[1], history=arr, bucket_steps=bucket_steps)
    return int(f.forecast(t_next)[grid])


def match_requests(gmap: GridMap, pending, idle_drivers, radius: int = 2):
    """Greedy nearest matching. ``idle_drivers`` is a list of (driver_id, grid); returns [(request, driver_id)]."""
    free = sorted(idle_drivers)
    pairs = []
    for req in sorted(pending, key=lambda r: r.id):
        best = None
        for i, (d, g) in enumerate(free):
            dist = int(gmap.distance[g, req.origin])
            if dist <= radius and (best is None or dist < best[0]):
                best = (dist, i)
        if best is None:
            continue
        d, _ = free.pop(best[1])
        pairs.append((req, d))
    return pairs
