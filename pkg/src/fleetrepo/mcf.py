"""Integer min-cost max-flow by successive shortest paths, and the grid repositioning network built on it."""
from __future__ import annotations

import heapq

import numpy as np


class FlowNetwork:
    def __init__(self, n: int):
        self.n = n
        self.to: list[int] = []
        self.cap: list[int] = []
        self.cost: list[int] = []
        self.adj: list[list[int]] = [[] for _ in range(n)]

    def add_arc(self, u: int, v: int, cap: int, cost: int) -> int:
        """Add u->v plus its residual twin; returns the forward arc index."""
        if cap < 0 or cost < 0:
            raise ValueError("capacities and costs must be nonnegative")
        e = len(self.to)
        for a, b, c, w in ((u, v, cap, cost), (v, u, 0, -cost)):
            self.to.append(b)
            self.cap.append(c)
            self.cost.append(w)
            self.adj[a].append(len(self.to) - 1)
        return e

    def flow_on(self, e: int) -> int:
        return self.cap[e ^ 1]

    def min_cost_max_flow(self, s: int, t: int) -> tuple[int, int]:
        """Augment along cheapest residual paths (Dijkstra on reduced costs) until t is unreachable."""
        n = self.n
        potential = [0] * n
        flow = cost = 0
        inf = float("inf")
        while True:
            dist = [inf] * n
            prev = [-1] * n
            dist[s] = 0
            heap = [(0, s)]
            while heap:
                d, u = heapq.heappop(heap)
                if d > dist[u]:
                    continue
                for e in self.adj[u]:
                    if self.cap[e] <= 0:
                        continue
                    v = self.to[e]
                    nd = d + self.cost[e] + potential[u] - potential[v]
                    if nd < dist[v]:
                        dist[v] = nd
                        prev[v] = e
                        heapq.heappush(heap, (nd, v))
            if dist[t] == inf:
                return flow, cost
            for v in range(n):
                if dist[v] < inf:
                    potential[v] += dist[v]
            push = inf
            v = t
            while v != s:
                e = prev[v]
                push = min(push, self.cap[e])
                v = self.to[e ^ 1]
            v = t
            while v != s:
                e = prev[v]
                self.cap[e] -= push
                self.cap[e ^ 1] += push
                cost += push * self.cost[e]
                v = self.to[e ^ 1]
            flow += push


def plan_cell_flows(cells, delta) -> tuple[dict, int, int]:
    """Move surplus (delta > 0) toward deficit (delta < 0) over king-move arcs between cells.

    ``cells`` are (x, y) coordinates; arc cost is the Manhattan length of the hop (1 or 2).
    Returns ({(i, j): units moved from cell i to adjacent cell j}, total flow, total cost).
    Surplus that cannot reach a deficit stays put.
    """
    delta = [int(d) for d in delta]
    k = len(cells)
    src, snk = k, k + 1
    net = FlowNetwork(k + 2)
    big = sum(d for d in delta if d > 0)
    arcs = {}
    for i, (xi, yi) in enumerate(cells):
        if delta[i] > 0:
            net.add_arc(src, i, delta[i], 0)
        elif delta[i] < 0:
            net.add_arc(i, snk, -delta[i], 0)
        for j, (xj, yj) in enumerate(cells):
            if i != j and max(abs(xi - xj), abs(yi - yj)) == 1 and big > 0:
                arcs[(i, j)] = net.add_arc(i, j, big, abs(xi - xj) + abs(yi - yj))
    flow, cost = net.min_cost_max_flow(src, snk)
    moves = {key: net.flow_on(e) for key, e in arcs.items() if net.flow_on(e) > 0}
    return moves, flow, cost


def plan_grid_flows(gmap, delta):
    cells = [gmap.coords(g) for g in range(gmap.n_grids)]
    return plan_cell_flows(cells, np.asarray(delta))
