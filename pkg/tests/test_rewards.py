import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fleetrepo.rewards import (RewardWeights, assignment_total, balance_reward, preference_reward, total_reward)
from fleetrepo.world import GapVector


def gap(values, valid=None):
    valid = np.ones(9, bool) if valid is None else np.asarray(valid, bool)
    return GapVector(np.asarray(values, dtype=np.int64), valid)


def test_balance_examples():
    assert balance_reward(gap([-2, 0, 0, 0, 0, 0, 0, 0, 2]), 0) == pytest.approx(2.12132, abs=1e-5)
    assert balance_reward(gap([-3, -1, 0, 0, 0, 0, 0, 0, 0]), 0) == pytest.approx(2.67370, abs=1e-5)
    assert balance_reward(gap([1] * 9), 3) == 0.0


def test_balance_oracle_by_hand():
    d = np.array([-3, -1, 0, 0, 0, 0, 0, 0, 0], dtype=float)
    mu = d.sum() / 9
    sigma = math.sqrt(((d - mu) ** 2).sum() / 9)
    assert -(d[0] - mu) / sigma == pytest.approx(2.67370, abs=1e-5)


def test_balance_counts_prior_commitments():
    g = gap([-2, 0, 0, 0, 0, 0, 0, 0, 2])
    commit = np.zeros(9, dtype=int)
    commit[0] = 2
    mu, sigma = 0.0, math.sqrt(8 / 9)
    assert balance_reward(g, 0, commit) == pytest.approx(-(0 - mu) / sigma)


def test_invalid_slot_rejected():
    valid = np.ones(9, bool)
    valid[0] = False
    with pytest.raises(ValueError):
        balance_reward(gap([0, 1, 0, 0, 0, 0, 0, 0, 0], valid), 0)
    with pytest.raises(ValueError):
        preference_reward(np.full(9, 1 / 9), valid, 0)


def test_preference_examples():
    rho = np.linspace(0.2, 0.01, 9)
    rho /= rho.sum()
    valid = np.ones(9, bool)
    assert preference_reward(rho, valid, 0) == 1.0
    assert preference_reward(rho, valid, 8) == 0.0
    assert preference_reward(rho, valid, 2) == 0.75
    only = np.zeros(9, bool)
    only[4] = True
    assert preference_reward(np.eye(9)[4], only, 4) == 1.0


def test_total_examples():
    w = RewardWeights()
    assert total_reward(w, 2.12132, 0.75) == pytest.approx(4.99264, abs=1e-5)
    assert total_reward(w, 0.0, 0.0) == 0.0
    assert total_reward(RewardWeights(alpha_B=0.0), 5.0, 0.4) == 1.0 * 0.4


def test_weights_validated():
    with pytest.raises(ValueError):
        RewardWeights(alpha_B=-1)
    with pytest.raises(ValueError):
        RewardWeights(gamma=1.0)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(-4, 4), min_size=9, max_size=9), st.data())
def test_order_invariance(values, data):
    g = gap(values)
    n = data.draw(st.integers(1, 3))
    slots = data.draw(st.lists(st.integers(0, 8), min_size=n, max_size=n))
    rng = np.random.default_rng(data.draw(st.integers(0, 2**16)))
    rhos = [rng.dirichlet(np.ones(9)) for _ in range(n)]
    w = RewardWeights()
    ref = assignment_total(g, rhos, slots, w)
    for perm in itertools.permutations(range(n)):
        assert assignment_total(g, [rhos[i] for i in perm], [slots[i] for i in perm], w) == \
            pytest.approx(ref, abs=1e-9)
