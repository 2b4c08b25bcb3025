import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import tiny_config
from fleetrepo.baselines import make_baseline
from fleetrepo.behavior import PrefParams
from fleetrepo.episode import Scenario, run_episode
from fleetrepo.metrics import compute_metrics
from fleetrepo.sim import DriverProfile, Simulator
from fleetrepo.world import IDLE, OCCUPIED, SERVED, GridMap, RideRequest

GMAP = GridMap(5, 5)


def sim_with(requests=(), start=(12,), steps=10):
    pop = [DriverProfile(i, PrefParams(g, 1.0, 0.0, 0.0, 1.0), 1.0, np.zeros(GMAP.n_grids))
           for i, g in enumerate(start)]
    return Simulator(GMAP, pop, list(requests), list(start), steps)


def test_reposition_to_northeast_neighbor():
    sim = sim_with()
    ne = GMAP.grid_id(3, 1)
    sim.commit(0, ne, recommended=ne, accepted=True)
    sim.advance()
    d = sim.drivers[0]
    assert d.grid == ne and d.status == IDLE and sim.t == 1


def test_occupied_driver_moves_one_grid_per_step():
    start = GMAP.grid_id(0, 2)
    dest = GMAP.grid_id(3, 2)
    sim = sim_with([RideRequest(0, start, dest, 0, 550)], start=(start,))
    d = sim.drivers[0]
    assert d.status == OCCUPIED and len(d.route) == 3
    sim.advance()
    assert d.status == OCCUPIED and len(d.route) == 2 and d.grid == GMAP.grid_id(1, 2)


def test_completed_trip_pays_the_fare():
    start = GMAP.grid_id(2, 2)
    sim = sim_with([RideRequest(0, start, GMAP.grid_id(3, 2), 0, 850)], start=(start,))
    sim.advance()
    d = sim.drivers[0]
    assert d.earnings == 8.5 and d.status == IDLE
    assert sim.requests[0].status == SERVED


def test_commit_rejects_far_or_busy_drivers():
    sim = sim_with(start=(0, 12))
    with pytest.raises(ValueError):
        sim.commit(0, 12)
    sim.commit(1, 12)
    with pytest.raises(ValueError):
        sim.commit(1, 12)


def test_unmatched_requests_expire():
    far = GMAP.grid_id(4, 4)
    sim = sim_with([RideRequest(0, far, 0, 0, 300)], start=(0,))
    assert sim.requests[0].status == "expired"
    assert ("expire", 0, 0) in sim.events


def test_horizon_flushes_trips_in_progress():
    start = GMAP.grid_id(0, 0)
    sim = sim_with([RideRequest(0, start, GMAP.grid_id(4, 4), 1, 700)], start=(start,), steps=2)
    sim.advance()
    sim.advance()
    assert sim.done and sim.drivers[0].status == OCCUPIED
    sim.finish()
    assert sim.drivers[0].earnings == 7.0


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.sampled_from(["no_reposition", "random", "reward_greedy"]))
def test_earnings_sum_to_tdi(seed, kind):
    cfg = tiny_config()
    ep = Scenario(cfg).episode(seed, "eval", 0)
    m = run_episode(ep, make_baseline(kind))
    assert sum(d.earnings_cents for d in ep.sim.drivers) == m.tdi_cents
    assert compute_metrics(ep.sim.events, kind, seed) == m
    assert m.ri <= m.tdi and 0 <= m.rrr <= 1
