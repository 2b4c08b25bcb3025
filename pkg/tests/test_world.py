import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fleetrepo.world import (INVALID, DemandForecaster, DemandSpec, GapVector, GridMap, Hotspot, RideRequest,
                             compute_gap, fare_cents, generate_demand, match_requests, predict_demand,
                             radial_grid_order, read_requests_csv, read_trajectories_csv, write_requests_csv,
                             write_trajectories_csv)


def test_radial_order_3x3():
    assert radial_grid_order(GridMap(3, 3)) == [4, 1, 2, 5, 8, 7, 6, 3, 0]


def test_radial_order_5x5_starts_at_center():
    order = radial_grid_order(GridMap(5, 5))
    assert order[0] == 12
    assert sorted(order) == list(range(25))


@pytest.mark.parametrize("w,h", [(1, 5), (2, 3), (5, 2)])
def test_small_maps_rejected(w, h):
    with pytest.raises(ValueError):
        GridMap(w, h)


@given(st.integers(3, 12), st.integers(3, 12))
def test_grid_id_bijection(w, h):
    gmap = GridMap(w, h)
    ids = [gmap.grid_id(x, y) for y in range(h) for x in range(w)]
    assert ids == list(range(w * h))
    assert all(gmap.coords(g) == (g % w, g // w) for g in ids)


@given(st.integers(3, 9), st.integers(3, 9), st.data())
def test_neighbor_table_geometry(w, h, data):
    gmap = GridMap(w, h)
    g = data.draw(st.integers(0, gmap.n_grids - 1))
    nb = gmap.neighborhood9(g)
    assert nb.shape == (9,)
    assert nb[4] == g
    for slot, target in enumerate(nb):
        if target == INVALID:
            continue
        assert gmap.chebyshev(g, int(target)) <= 1
        assert gmap.slot_of(g, int(target)) == slot


def test_corner_has_four_valid_slots():
    gmap = GridMap(3, 3)
    assert gmap.valid_slots(0).sum() == 4
    assert (gmap.neighborhood9(0) == INVALID).sum() == 5


def test_gap_definition():
    gmap = GridMap(3, 3)
    supply = np.zeros(9, dtype=np.int64)
    demand = np.zeros(9, dtype=np.int64)
    supply[4], demand[4] = 3, 5
    gap = compute_gap(gmap, 4, supply, demand)
    assert gap.delta[4] == -2
    assert compute_gap(gmap, 4, demand, demand).delta.tolist() == [0] * 9


def test_gap_vector_rejects_wrong_length():
    with pytest.raises(ValueError):
        GapVector(np.zeros(8, dtype=np.int64), np.ones(8, bool))


def test_fare_rule():
    assert fare_cents(4) == 650
    assert fare_cents(0) == 250


def test_path_is_manhattan():
    gmap = GridMap(5, 5)
    a, b = gmap.grid_id(0, 0), gmap.grid_id(2, 3)
    p = gmap.path(a, b)
    assert len(p) == gmap.manhattan(a, b)
    assert p[-1] == b
    assert gmap.path(a, a) == []


def test_zero_intensity_gives_no_requests():
    spec = DemandSpec(base_intensity=0.0, hotspots=[])
    assert generate_demand(GridMap(4, 4), spec, 20, np.random.default_rng(0)) == []


def test_demand_is_deterministic(tmp_path):
    gmap = GridMap(5, 5)
    spec = DemandSpec(0.05, [Hotspot(2, 2, 1.0, 1.0)])
    paths = []
    for k in range(2):
        reqs = generate_demand(gmap, spec, 30, np.random.default_rng(7))
        p = tmp_path / f"r{k}.csv"
        write_requests_csv(p, gmap, reqs)
        paths.append(p.read_bytes())
    assert paths[0] == paths[1]


def test_requests_csv_round_trip_and_default_fare(tmp_path):
    gmap = GridMap(4, 4)
    reqs = [RideRequest(0, 0, 5, 0, 450), RideRequest(1, 3, 3, 2, 250)]
    p = tmp_path / "r.csv"
    write_requests_csv(p, gmap, reqs)
    back = read_requests_csv(p, gmap)
    assert [(r.id, r.origin, r.dest, r.created_t, r.fare_cents) for r in back] == \
        [(0, 0, 5, 0, 450), (1, 3, 3, 2, 250)]
    p.write_text("request_id,t,origin_x,origin_y,dest_x,dest_y\n0,1,0,0,2,2\n")
    assert read_requests_csv(p, gmap)[0].fare_cents == fare_cents(4)


def test_trajectories_csv_round_trip(tmp_path):
    gmap = GridMap(3, 3)
    rows = [(0, 0, 4, "idle"), (1, 0, 8, "occupied")]
    p = tmp_path / "t.csv"
    write_trajectories_csv(p, gmap, rows)
    assert read_trajectories_csv(p, gmap) == rows


def test_forecast_examples(caplog):
    hist = [np.array([[2]]), np.array([[4]])]
    assert predict_demand(hist, 0, 0) == 3
    assert predict_demand(None, 0, 0, intensity=np.array([[2.4]])) == 2
    with caplog.at_level(logging.WARNING):
        assert predict_demand([], 0, 0) == 0
    assert "no demand history" in caplog.text


def test_forecast_beyond_horizon_is_zero():
    f = DemandForecaster("oracle", 2, 3, intensity=np.ones((3, 2)))
    assert f.forecast(3).tolist() == [0, 0]


def test_matching_radius_and_ties():
    gmap = GridMap(5, 5)
    req = RideRequest(0, gmap.grid_id(1, 1), 0, 0, 300)
    assert match_requests(gmap, [req], [(0, gmap.grid_id(0, 0))], radius=2) == [(req, 0)]
    same = gmap.grid_id(2, 1)
    assert match_requests(gmap, [req], [(7, same), (3, same)], radius=2)[0][1] == 3
    far = gmap.grid_id(4, 4)
    assert match_requests(gmap, [req], [(1, far)], radius=2) == []


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000))
def test_matching_never_reuses_drivers(seed):
    rng = np.random.default_rng(seed)
    gmap = GridMap(5, 5)
    reqs = [RideRequest(i, int(rng.integers(25)), 0, 0, 300) for i in range(int(rng.integers(0, 8)))]
    idle = [(i, int(rng.integers(25))) for i in range(int(rng.integers(0, 8)))]
    pairs = match_requests(gmap, reqs, idle, 2)
    drivers = [d for _, d in pairs]
    assert len(set(drivers)) == len(drivers)
    where = dict(idle)
    assert all(gmap.manhattan(where[d], r.origin) <= 2 for r, d in pairs)
