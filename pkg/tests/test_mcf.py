import itertools

import numpy as np
import pytest

from fleetrepo.mcf import FlowNetwork, plan_cell_flows, plan_grid_flows
from fleetrepo.world import GridMap


def hop_distances(cells):
    """All-pairs cheapest route cost over king-move hops (Floyd-Warshall)."""
    k = len(cells)
    d = np.full((k, k), np.inf)
    np.fill_diagonal(d, 0)
    for i, (xi, yi) in enumerate(cells):
        for j, (xj, yj) in enumerate(cells):
            if i != j and max(abs(xi - xj), abs(yi - yj)) == 1:
                d[i, j] = abs(xi - xj) + abs(yi - yj)
    for m in range(k):
        d = np.minimum(d, d[:, m:m + 1] + d[m:m + 1, :])
    return d


def brute_force(cells, delta):
    """Enumerate every way to send surplus units to deficit units; return (max flow, min cost at that flow)."""
    d = hop_distances(cells)
    units = [i for i, v in enumerate(delta) if v > 0 for _ in range(v)]
    holes = [j for j, v in enumerate(delta) if v < 0 for _ in range(-v)]
    best = (0, 0.0)
    for size in range(min(len(units), len(holes)), 0, -1):
        costs = []
        for src in itertools.combinations(range(len(units)), size):
            for dst in itertools.permutations(range(len(holes)), size):
                c = sum(d[units[a], holes[b]] for a, b in zip(src, dst))
                if np.isfinite(c):
                    costs.append(c)
        if costs:
            return size, min(costs)
    return best


def random_instance(rng):
    k = int(rng.integers(2, 6))
    coords = set()
    while len(coords) < k:
        coords.add((int(rng.integers(0, 3)), int(rng.integers(0, 3))))
    cells = sorted(coords)
    delta = [0] * k
    budget = int(rng.integers(1, 4))
    for _ in range(budget):
        delta[int(rng.integers(k))] += 1
    for _ in range(int(rng.integers(1, 4))):
        j = int(rng.integers(k))
        if delta[j] <= 0:
            delta[j] -= 1
    return cells, delta


def test_line_example():
    moves, flow, cost = plan_cell_flows([(0, 0), (1, 0), (2, 0)], [2, 0, -1])
    assert flow == 1 and cost == 2
    assert moves == {(0, 1): 1, (1, 2): 1}


def test_balanced_map_moves_nothing():
    moves, flow, cost = plan_grid_flows(GridMap(3, 3), np.zeros(9, dtype=int))
    assert moves == {} and flow == 0 and cost == 0


def test_solver_matches_enumeration():
    rng = np.random.default_rng(0)
    checked = 0
    while checked < 600:
        cells, delta = random_instance(rng)
        if sum(v for v in delta if v > 0) > 3 or -sum(v for v in delta if v < 0) > 3:
            continue
        _, flow, cost = plan_cell_flows(cells, delta)
        want_flow, want_cost = brute_force(cells, delta)
        assert flow == want_flow, (cells, delta)
        assert cost == pytest.approx(want_cost), (cells, delta)
        checked += 1


def test_flow_conservation():
    rng = np.random.default_rng(1)
    gmap = GridMap(4, 4)
    for _ in range(50):
        delta = rng.integers(-2, 3, size=16)
        moves, flow, _ = plan_grid_flows(gmap, delta)
        net = np.zeros(16, dtype=int)
        for (i, j), u in moves.items():
            net[i] -= u
            net[j] += u
        after = delta + net
        # surplus is never pushed below zero and deficits never overfilled
        assert np.all(after[delta > 0] >= 0)
        assert np.all(after[delta < 0] <= 0)
        assert np.all(net[delta == 0] == 0)  # pass-through cells keep what they receive moving
        assert flow == net[delta < 0].sum()


def test_network_rejects_negative_inputs():
    net = FlowNetwork(2)
    with pytest.raises(ValueError):
        net.add_arc(0, 1, -1, 0)
