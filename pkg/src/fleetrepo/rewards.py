"""Per-recommendation rewards: supply-demand balance plus preference satisfaction."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .behavior import rank_slots
from .world import GapVector


@dataclass(frozen=True)
class RewardWeights:
    alpha_B: float = 2.0
    alpha_P: float = 1.0
    gamma: float = 0.98
    entropy_beta: float = 0.01
    batch: int = 10

    def __post_init__(self):
        if self.alpha_B < 0 or self.alpha_P < 0:
            raise ValueError("reward weights must be nonnegative")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")


def gap_stats(gap: GapVector) -> tuple[float, float]:
    """Mean and population standard deviation over valid slots."""
    vals = gap.delta[gap.valid].astype(np.float64)
    return float(vals.mean()), float(vals.std())


def balance_reward(gap: GapVector, slot: int, commitments=None) -> float:
    """Negative standardized gap at ``slot``; statistics stay frozen at the grid's initial gap."""
    if not 0 <= slot < 9 or not gap.valid[slot]:
        raise ValueError(f"slot {slot} is not a valid neighbor")
    mu, sigma = gap_stats(gap)
    if sigma == 0:
        return 0.0
    prior = 0 if commitments is None else int(commitments[slot])
    return -((gap.delta[slot] + prior) - mu) / sigma


def preference_reward(rho, valid, slot: int) -> float:
    """(K - rank) / (K - 1) over the K valid slots; 1 when only one slot exists."""
    valid = np.asarray(valid, bool)
    if not 0 <= slot < 9 or not valid[slot]:
        raise ValueError(f"slot {slot} is not a valid neighbor")
    k = int(valid.sum())
    if k == 1:
        return 1.0
    r = int(rank_slots(rho, valid)[slot])
    return (k - r) / (k - 1)


def total_reward(weights: RewardWeights, r_b: float, r_p: float) -> float:
    return weights.alpha_B * r_b + weights.alpha_P * r_p


def assignment_total(gap: GapVector, rhos, slots, weights: RewardWeights) -> float:
    """Sum of per-driver rewards when drivers take ``slots`` in the listed order."""
    commit = np.zeros(9, dtype=np.int64)
    tot = 0.0
    for rho, s in zip(rhos, slots):
        tot += total_reward(weights, balance_reward(gap, s, commit), preference_reward(rho, gap.valid, s))
        commit[s] += 1
    return tot
