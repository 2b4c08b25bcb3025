"""Comparison policies. Each issues one recommendation per idle driver (except no_reposition)."""
from __future__ import annotations

import numpy as np

from .episode import GridTurn, Observation, Policy
from .mcf import plan_grid_flows
from .rewards import RewardWeights, balance_reward, preference_reward, total_reward
from .world import STAY_SLOT, compute_gap


def _lowest_argmax(scores, valid):
    s = np.where(valid, scores, -np.inf)
    return int(np.flatnonzero(s == s.max())[0])


def demand_greedy_slot(delta, valid) -> int:
    """Most negative gap among valid slots, lowest index on ties."""
    return _lowest_argmax(-np.asarray(delta, dtype=np.float64), valid)


def largest_remainder(fractions, total: int) -> np.ndarray:
    """Integer split of ``total`` proportional to ``fractions``; leftover units go to the largest remainders,
    lower index first on ties."""
    f = np.asarray(fractions, dtype=np.float64)
    quotas = f / f.sum() * total
    counts = np.floor(quotas + 1e-12).astype(np.int64)
    rem = quotas - counts
    left = total - int(counts.sum())
    order = np.lexsort((np.arange(len(f)), -np.round(rem, 12)))
    counts[order[:left]] += 1
    return counts


def proportional_slots(delta, valid, n: int) -> list[int]:
    deficit = np.where(valid, np.maximum(0, -np.asarray(delta)), 0).astype(np.float64)
    if deficit.sum() == 0:
        return [STAY_SLOT] * n
    counts = largest_remainder(deficit, n)
    return [s for s in range(9) for _ in range(counts[s])]


def collective_slot(delta, valid, freq) -> int:
    score = np.where(valid, np.maximum(0, -np.asarray(delta, dtype=np.float64)) * freq, 0.0)
    if not score.any():
        return STAY_SLOT
    return _lowest_argmax(score, valid)


class NoReposition(Policy):
    name = "no_reposition"

    def play_grid(self, turn: GridTurn, rng):
        for d in turn.drivers:
            turn.cruise(d, rng)


class RandomPolicy(Policy):
    name = "random"

    def play_grid(self, turn, rng):
        valid_slots = np.flatnonzero(turn.valid)
        for d in rng.permutation(turn.drivers):
            turn.recommend(int(d), int(valid_slots[rng.integers(len(valid_slots))]))


class DemandGreedy(Policy):
    name = "demand_greedy"

    def play_grid(self, turn, rng):
        slot = demand_greedy_slot(turn.gap0.delta, turn.valid)
        for d in rng.permutation(turn.drivers):
            turn.recommend(int(d), slot)


class RewardGreedy(Policy):
    name = "reward_greedy"

    def __init__(self, weights: RewardWeights = RewardWeights()):
        self.weights = weights

    def play_grid(self, turn, rng):
        for d in rng.permutation(turn.drivers):
            d = int(d)
            rho = turn.pred_rho(d)
            scores = np.full(9, -np.inf)
            for s in np.flatnonzero(turn.valid):
                scores[s] = total_reward(self.weights, balance_reward(turn.gap0, s, turn.commitments),
                                         preference_reward(rho, turn.valid, s))
            turn.recommend(d, _lowest_argmax(scores, turn.valid))


class MinCostFlow(Policy):
    name = "min_cost_flow"

    def begin_step(self, episode, obs: Observation):
        gmap = episode.gmap
        moves, _, _ = plan_grid_flows(gmap, obs.base_gap())
        self.plan: dict[int, list[int]] = {}
        for (i, j), units in sorted(moves.items()):
            self.plan.setdefault(i, []).extend([gmap.slot_of(i, j)] * units)

    def play_grid(self, turn, rng):
        slots = sorted(self.plan.get(turn.grid, []))
        for k, d in enumerate(sorted(turn.drivers)):
            turn.recommend(d, slots[k] if k < len(slots) else STAY_SLOT)


class Proportional(Policy):
    name = "proportional"

    def play_grid(self, turn, rng):
        slots = proportional_slots(turn.gap0.delta, turn.valid, len(turn.drivers))
        for d, s in zip(rng.permutation(turn.drivers), slots):
            turn.recommend(int(d), s)


class CollectivePreference(Policy):
    name = "collective_preference"

    def __init__(self, alpha: float = 1.0):
        self.alpha = alpha

    def begin_step(self, episode, obs):
        self.visits = sum(d.visit_counts for d in episode.sim.drivers) + self.alpha
        self.gmap = episode.gmap

    def play_grid(self, turn, rng):
        nb = self.gmap.neighbor_table[turn.grid]
        freq = np.where(turn.valid, self.visits[np.where(turn.valid, nb, 0)], 0.0)
        freq = freq / freq.sum()
        slot = collective_slot(turn.gap0.delta, turn.valid, freq)
        for d in rng.permutation(turn.drivers):
            turn.recommend(int(d), slot)


def make_baseline(kind: str, weights: RewardWeights = RewardWeights(), freq_alpha: float = 1.0) -> Policy:
    table = {"no_reposition": NoReposition, "random": RandomPolicy, "demand_greedy": DemandGreedy,
             "min_cost_flow": MinCostFlow, "proportional": Proportional}
    if kind == "reward_greedy":
        return RewardGreedy(weights)
    if kind == "collective_preference":
        return CollectivePreference(freq_alpha)
    if kind not in table:
        raise ValueError(f"unknown baseline {kind!r}")
    return table[kind]()


# pure helpers mirroring the policies on bare inputs, used for oracle checks

def no_reposition_slot(rho, rng) -> int:
    return int(rng.choice(9, p=np.asarray(rho)))


def random_recommendations(drivers, valid, rng):
    slots = np.flatnonzero(valid)
    return [(int(d), int(slots[rng.integers(len(slots))])) for d in rng.permutation(drivers)]


def reward_greedy_recommendations(gap, rhos: dict, weights: RewardWeights, rng):
    """Reward greedy with live gaps, assuming every recommendation is followed."""
    commit = np.zeros(9, dtype=np.int64)
    out = []
    for d in rng.permutation(sorted(rhos)):
        d = int(d)
        scores = np.full(9, -np.inf)
        for s in np.flatnonzero(gap.valid):
            scores[s] = total_reward(weights, balance_reward(gap, s, commit), preference_reward(rhos[d], gap.valid, s))
        s = _lowest_argmax(scores, gap.valid)
        commit[s] += 1
        out.append((d, s))
    return out


__all__ = ["NoReposition", "RandomPolicy", "DemandGreedy", "RewardGreedy", "MinCostFlow", "Proportional",
           "CollectivePreference", "make_baseline", "largest_remainder", "proportional_slots", "collective_slot",
           "demand_greedy_slot", "compute_gap"]
