"""Fleet state and the per-step clock: arrivals, trip progress, matching and the event log."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .behavior import PrefParams
from .world import (EXPIRED, IDLE, MATCHED, OCCUPIED, REPOSITIONING, SERVED, GridMap, RideRequest,
                    match_requests)


@dataclass
class DriverProfile:
    """Per-driver traits that persist across episodes."""
    id: int
    prefs: PrefParams
    obedience: float
    visit_prior: np.ndarray


@dataclass
class DriverState:
    id: int
    grid: int
    obedience: float
    pref_params: PrefParams
    visit_counts: np.ndarray
    status: str = IDLE
    earnings_cents: int = 0
    last_action: tuple | None = None  # ("accepted", target) | ("rejected", target)
    target: int | None = None
    route: list = field(default_factory=list)
    request: int | None = None

    @property
    def earnings(self) -> float:
        return self.earnings_cents / 100.0


def make_population(gmap: GridMap, n: int, hotness, rng, w_home=(0.5, 2.0), w_hot=(0.0, 3.0),
                    w_familiar=(0.0, 2.0), temperature=(0.5, 1.0), obedience=(0.0, 1.0),
                    visit_prior: int = 200) -> list[DriverProfile]:
    """Draw a fleet of heterogeneous drivers with a home grid and a visit history concentrated around it."""
    hot = np.asarray(hotness, dtype=np.float64)
    hot = hot / hot.max() if hot.max() > 0 else hot
    out = []
    for i in range(n):
        home = int(rng.integers(gmap.n_grids))
        params = PrefParams(home, float(rng.uniform(*w_home)), float(rng.uniform(*w_hot)),
                            float(rng.uniform(*w_familiar)), float(rng.uniform(*temperature)))
        affinity = np.exp(-params.w_home * gmap.distance[home]) + 0.2 * params.w_hot * hot
        affinity /= affinity.sum()
        prior = rng.multinomial(visit_prior, affinity).astype(np.float64) if visit_prior > 0 \
            else np.zeros(gmap.n_grids)
        out.append(DriverProfile(i, params, float(rng.uniform(*obedience)), prior))
    return out


class Simulator:
    """Discrete-time world. Time t means: requests created at t are matched at t, repositioning happens during t."""

    def __init__(self, gmap: GridMap, population, requests, start_grids, steps: int, radius: int = 2,
                 record_trajectories: bool = False):
        self.gmap = gmap
        self.steps = steps
        self.radius = radius
        self.drivers = [DriverState(p.id, int(g), p.obedience, p.prefs, p.visit_prior.copy())
                        for p, g in zip(population, start_grids)]
        self.requests = {r.id: r for r in requests}
        self.by_t: dict[int, list[RideRequest]] = {}
        for r in requests:
            if not r.created_t < steps:
                continue
            self.by_t.setdefault(r.created_t, []).append(r)
        self.t = 0
        self.events: list[tuple] = []
        self.trajectory: list[tuple] | None = [] if record_trajectories else None
        for d in self.drivers:
            d.visit_counts[d.grid] += 1
        self._arrivals_and_matching()

    @property
    def fleet(self) -> int:
        return len(self.drivers)

    @property
    def done(self) -> bool:
        return self.t >= self.steps

    def idle_by_grid(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for d in self.drivers:
            if d.status == IDLE:
                out.setdefault(d.grid, []).append(d.id)
        return out

    def status_counts(self) -> dict[str, int]:
        out = {IDLE: 0, REPOSITIONING: 0, OCCUPIED: 0}
        for d in self.drivers:
            out[d.status] += 1
        return out

    def supply_forecast(self) -> np.ndarray:
        """Idle vehicles expected in each grid at t+1 if nobody moves: idle now plus trips ending next step."""
        s = np.zeros(self.gmap.n_grids, dtype=np.int64)
        for d in self.drivers:
            if d.status == IDLE:
                s[d.grid] += 1
            elif d.status == OCCUPIED and len(d.route) == 1:
                s[d.route[0]] += 1
        return s

    def commit(self, driver_id: int, target: int, recommended: int | None = None, accepted: bool | None = None):
        """Send an idle driver toward an adjacent grid for the coming step."""
        d = self.drivers[driver_id]
        if d.status != IDLE:
            raise ValueError(f"driver {driver_id} is {d.status}, not idle")
        if self.gmap.chebyshev(d.grid, target) > 1:
            raise ValueError(f"driver {driver_id} cannot reach grid {target} in one step")
        d.status = REPOSITIONING
        d.target = target
        if recommended is None:
            d.last_action = None
            self.events.append(("cruise", self.t, d.id, d.grid, target))
        else:
            d.last_action = ("accepted" if accepted else "rejected", recommended)
            self.events.append(("recommend", self.t, d.id, d.grid, recommended, int(bool(accepted)), target))

    def advance(self):
        """Move everyone one step, then admit and match the next step's requests."""
        if self.done:
            raise RuntimeError("episode already finished")
        for d in self.drivers:
            if d.status == REPOSITIONING:
                d.grid = d.target
                d.target = None
                d.status = IDLE
            elif d.status == OCCUPIED:
                d.grid = d.route.pop(0)
                if not d.route:
                    self._complete_trip(d)
            d.visit_counts[d.grid] += 1
        self.t += 1
        if not self.done:
            self._arrivals_and_matching()

    def _complete_trip(self, d: DriverState):
        req = self.requests[d.request]
        req.status = SERVED
        d.earnings_cents += req.fare_cents
        d.status = IDLE
        d.request = None
        self.events.append(("serve", self.t + 1, req.id, d.id, req.fare_cents))

    def _arrivals_and_matching(self):
        pending = self.by_t.get(self.t, [])
        for r in pending:
            self.events.append(("request", self.t, r.id, r.origin, r.dest, r.fare_cents))
        idle = [(d.id, d.grid) for d in self.drivers if d.status == IDLE]
        for req, did in match_requests(self.gmap, pending, idle, self.radius):
            d = self.drivers[did]
            req.status = MATCHED
            req.driver = did
            d.status = OCCUPIED
            d.request = req.id
            d.last_action = None
            route = self.gmap.path(d.grid, req.origin) + self.gmap.path(req.origin, req.dest)
            d.route = route or [req.dest]
            self.events.append(("match", self.t, req.id, did))
        for r in pending:
            if r.status == "pending":
                r.status = EXPIRED
                self.events.append(("expire", self.t, r.id))
        if self.trajectory is not None:
            self.trajectory.extend((d.id, self.t, d.grid, d.status) for d in self.drivers)

    def finish(self):
        """Close the books at the horizon: trips still under way are completed and paid."""
        for d in self.drivers:
            if d.status == OCCUPIED:
                req = self.requests[d.request]
                req.status = SERVED
                d.earnings_cents += req.fare_cents
                self.events.append(("serve", self.t, req.id, d.id, req.fare_cents))
                d.grid = req.dest
                d.route = []
                d.request = None
                d.status = IDLE
            elif d.status == REPOSITIONING:
                d.grid, d.target, d.status = d.target, None, IDLE
