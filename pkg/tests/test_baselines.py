from collections import Counter

import numpy as np
import pytest

from conftest import tiny_config
from fleetrepo.baselines import (collective_slot, demand_greedy_slot, largest_remainder, make_baseline,
                                 no_reposition_slot, proportional_slots, random_recommendations,
                                 reward_greedy_recommendations)
from fleetrepo.behavior import rank_slots
from fleetrepo.config import POLICIES
from fleetrepo.episode import Scenario, run_episode, run_step
from fleetrepo.rewards import RewardWeights, balance_reward, preference_reward, total_reward
from fleetrepo.world import STAY_SLOT, GapVector, GridMap

ALL_VALID = np.ones(9, bool)


def test_no_reposition_samples_preference():
    rng = np.random.default_rng(0)
    assert all(no_reposition_slot(np.eye(9)[6], rng) == 6 for _ in range(100))
    counts = Counter(no_reposition_slot(np.full(9, 1 / 9), rng) for _ in range(100_000))
    assert all(abs(c / 100_000 - 1 / 9) < 0.01 for c in counts.values())


def test_random_policy_frequencies_and_edges():
    rng = np.random.default_rng(1)
    counts = Counter(s for _ in range(100_000) for _, s in random_recommendations([0], ALL_VALID, rng))
    assert all(abs(c / 100_000 - 1 / 9) < 0.01 for c in counts.values())
    corner = GridMap(3, 3).valid_slots(0)
    recs = random_recommendations(list(range(50)), corner, rng)
    assert all(corner[s] for _, s in recs)
    assert random_recommendations([5], ALL_VALID, rng)[0][0] == 5


def test_demand_greedy_examples():
    assert demand_greedy_slot([-2, 0, 0, 0, 0, 0, 0, 0, 2], ALL_VALID) == 0
    assert demand_greedy_slot([0] * 9, ALL_VALID) == 0
    valid = ALL_VALID.copy()
    valid[0] = False
    assert demand_greedy_slot([-5, -1, 0, 0, 0, 0, 0, 0, 0], valid) == 1


def test_reward_greedy_weight_zeroing():
    g = GapVector(np.array([-2, -1, 0, 0, 0, 0, 0, 0, 3]), ALL_VALID)
    rng = np.random.default_rng(0)
    rhos = {0: rng.dirichlet(np.ones(9)), 1: rng.dirichlet(np.ones(9))}
    recs = reward_greedy_recommendations(g, rhos, RewardWeights(alpha_P=0.0), np.random.default_rng(2))
    commit = np.zeros(9, int)
    for _, s in recs:
        assert s == demand_greedy_slot(g.delta + commit, ALL_VALID)
        commit[s] += 1
    recs = reward_greedy_recommendations(g, rhos, RewardWeights(alpha_B=0.0), np.random.default_rng(2))
    assert all(rank_slots(rhos[d])[s] == 1 for d, s in recs)


def test_reward_greedy_matches_enumeration():
    g = GapVector(np.array([-1, 0, 2, -2, 0, 1, 0, 0, -1]), ALL_VALID)
    rhos = {3: np.array([0.3, 0.1, 0.05, 0.05, 0.2, 0.1, 0.1, 0.05, 0.05]), 8: np.full(9, 1 / 9)}
    w = RewardWeights()
    recs = reward_greedy_recommendations(g, rhos, w, np.random.default_rng(4))
    commit = np.zeros(9, int)
    for d, s in recs:
        values = [total_reward(w, balance_reward(g, k, commit), preference_reward(rhos[d], ALL_VALID, k))
                  for k in range(9)]
        assert s == int(np.argmax(values))
        commit[s] += 1


def test_proportional_examples():
    one = [0, 0, 0, 0, 0, 0, 0, -3, 0]
    assert proportional_slots(one, ALL_VALID, 4) == [7] * 4
    assert proportional_slots([1] * 9, ALL_VALID, 3) == [STAY_SLOT] * 3
    two = [-1, 0, 0, 0, 0, 0, 0, 0, -1]
    assert proportional_slots(two, ALL_VALID, 3) == [0, 0, 8]
    assert largest_remainder([0.5, 0.5], 3).tolist() == [2, 1]


def test_largest_remainder_sums():
    rng = np.random.default_rng(0)
    for _ in range(200):
        f = rng.random(9)
        n = int(rng.integers(0, 30))
        c = largest_remainder(f, n)
        assert c.sum() == n and (c >= 0).all()
        assert np.all(np.abs(c - f / f.sum() * n) < 1 + 1e-9)


def test_collective_examples():
    delta = np.array([-1, 0, -3, 0, 0, 0, 0, 0, 0])
    assert collective_slot(delta, ALL_VALID, np.full(9, 1 / 9)) == demand_greedy_slot(delta, ALL_VALID)
    assert collective_slot(np.zeros(9), ALL_VALID, np.full(9, 1 / 9)) == STAY_SLOT
    freq = np.full(9, 0.05)
    freq[0] = 0.6
    assert collective_slot(delta, ALL_VALID, freq) == 0  # 1 * 0.6 beats 3 * 0.05


@pytest.mark.parametrize("kind", [p for p in POLICIES if p != "dual_agent"])
def test_baselines_issue_one_valid_recommendation_per_idle_driver(kind):
    cfg = tiny_config()
    sc = Scenario(cfg)
    ep = sc.episode(3, "eval", 0)
    policy = make_baseline(kind)
    per_step: dict[int, list] = {}
    idle_per_step = {}
    while not ep.sim.done:
        obs = ep.observe()
        idle_per_step[obs.t] = sorted(i for ids in obs.idle.values() for i in ids)
        run_step(ep, policy)
    for ev in ep.sim.events:
        if ev[0] in ("recommend", "cruise"):
            per_step.setdefault(ev[1], []).append(ev)
    for t, evs in per_step.items():
        assert sorted(ev[2] for ev in evs) == idle_per_step[t]
        for ev in evs:
            if ev[0] == "recommend":
                assert sc.gmap.chebyshev(ev[3], ev[4]) <= 1
            assert (ev[0] == "cruise") == (kind == "no_reposition")


@pytest.mark.parametrize("kind", ["random", "reward_greedy", "min_cost_flow", "collective_preference"])
def test_baselines_reproducible(kind):
    cfg = tiny_config()
    runs = [run_episode(Scenario(cfg).episode(5, "eval", 0), make_baseline(kind)) for _ in range(2)]
    assert runs[0] == runs[1]


def test_unknown_baseline():
    with pytest.raises(ValueError):
        make_baseline("psychic")
