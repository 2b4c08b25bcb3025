"""Brute-force check of whether sequential greedy play under the best order reaches the joint optimum.

Acceptance is forced, so every driver lands where recommended and the rewards are deterministic.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .rewards import RewardWeights, assignment_total, balance_reward, preference_reward, total_reward
from .world import GapVector, GridMap


@dataclass(frozen=True)
class Instance:
    gap: GapVector
    rhos: tuple


@dataclass(frozen=True)
class InstanceResult:
    joint_optimum: float
    best_order_value: float
    agree: bool


def random_instance(rng, max_drivers=3, gap_range=3) -> Instance:
    """One grid of a 3x3 map (so corners and edges occur) with up to ``max_drivers`` drivers."""
    gmap = GridMap(3, 3)
    grid = int(rng.integers(gmap.n_grids))
    valid = gmap.valid_slots(grid)
    delta = np.where(valid, rng.integers(-gap_range, gap_range + 1, size=9), 0)
    n = int(rng.integers(1, max_drivers + 1))
    rhos = []
    for _ in range(n):
        w = np.where(valid, rng.dirichlet(np.ones(9)), 0.0)
        rhos.append(w / w.sum())
    return Instance(GapVector(delta.astype(np.int64), valid), tuple(rhos))


def joint_optimum(inst: Instance, weights: RewardWeights) -> float:
    slots = np.flatnonzero(inst.gap.valid)
    return max(assignment_total(inst.gap, inst.rhos, combo, weights)
               for combo in itertools.product(slots, repeat=len(inst.rhos)))


def sequential_greedy(inst: Instance, order, weights: RewardWeights) -> float:
    """Each driver, in ``order``, takes the slot maximizing its own reward given earlier choices."""
    commit = np.zeros(9, dtype=np.int64)
    tot = 0.0
    for i in order:
        best, best_slot = -np.inf, -1
        for s in np.flatnonzero(inst.gap.valid):
            r = total_reward(weights, balance_reward(inst.gap, s, commit), preference_reward(inst.rhos[i], inst.gap.valid, s))
            if r > best:
                best, best_slot = r, s
        commit[best_slot] += 1
        tot += best
    return tot


def check_instance(inst: Instance, weights: RewardWeights, tol=1e-9) -> InstanceResult:
    joint = joint_optimum(inst, weights)
    best = max(sequential_greedy(inst, order, weights) for order in itertools.permutations(range(len(inst.rhos))))
    return InstanceResult(joint, best, abs(joint - best) <= tol)


@dataclass(frozen=True)
class DiagnosticReport:
    instances: int
    agreements: int
    max_shortfall: float
    mean_shortfall: float
    by_drivers: dict

    @property
    def fraction(self) -> float:
        return self.agreements / self.instances if self.instances else float("nan")

    def as_text(self) -> str:
        lines = [f"instances={self.instances}", f"agreements={self.agreements}",
                 f"agreement_fraction={self.fraction:.4f}", f"max_shortfall={self.max_shortfall:.6f}",
                 f"mean_shortfall={self.mean_shortfall:.6f}"]
        for n, (agree, total) in sorted(self.by_drivers.items()):
            lines.append(f"drivers={n} agreement={agree}/{total}")
        return "\n".join(lines) + "\n"


def order_optimality_diagnostic(n_instances=1000, seed=0, weights: RewardWeights = RewardWeights(), max_drivers=3):
    rng = np.random.default_rng(seed)
    agree = 0
    shortfalls = []
    by_n: dict[int, list[int]] = {}
    for _ in range(n_instances):
        inst = random_instance(rng, max_drivers)
        res = check_instance(inst, weights)
        n = len(inst.rhos)
        by_n.setdefault(n, [0, 0])
        by_n[n][1] += 1
        if res.agree:
            agree += 1
            by_n[n][0] += 1
        shortfalls.append(res.joint_optimum - res.best_order_value)
    sf = np.array(shortfalls) if shortfalls else np.zeros(1)
    return DiagnosticReport(n_instances, agree, float(sf.max()), float(sf.mean()),
                            {n: tuple(v) for n, v in by_n.items()})
