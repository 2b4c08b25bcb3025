import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import tiny_config
from fleetrepo.baselines import NoReposition
from fleetrepo.episode import Scenario, run_episode
from fleetrepo.preference import (FRAME_DIM, RecurrentPreferenceModel, TrajectoryFeatures, predict_preference,
                                  train_preference_model, training_pairs)
from fleetrepo.world import IDLE, OCCUPIED, GridMap

ALL_VALID = np.ones(9, bool)


def test_zero_parameters_give_uniform():
    model = RecurrentPreferenceModel(zero=True)
    rho = predict_preference(np.random.default_rng(0).normal(size=(4, FRAME_DIM)), model)
    assert np.allclose(rho, 1 / 9)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, FRAME_DIM), elements=st.floats(-50, 50)), st.integers(0, 8))
def test_predictions_sum_to_one(frames, grid):
    model = RecurrentPreferenceModel(hidden=8, rng=np.random.default_rng(1))
    valid = GridMap(3, 3).valid_slots(grid)
    rho = predict_preference(frames, model, valid)
    assert abs(rho.sum() - 1) < 1e-9 and (rho[~valid] == 0).all()


def test_dimension_mismatch_rejected():
    model = RecurrentPreferenceModel(hidden=4)
    with pytest.raises(ValueError):
        predict_preference(np.zeros((2, FRAME_DIM + 1)), model)
    with pytest.raises(ValueError):
        predict_preference(np.zeros((0, FRAME_DIM)), model)


def test_constant_target_is_learned():
    rng = np.random.default_rng(0)
    target = rng.dirichlet(np.ones(9))
    seqs = rng.normal(size=(256, 3, FRAME_DIM))
    model, losses = train_preference_model(seqs, np.tile(target, (256, 1)), np.ones((256, 9), bool),
                                           hidden=8, epochs=40, lr=1e-2, seed=0)
    pred = model.predict(seqs, np.ones((256, 9), bool))
    kl = (target * np.log(target / pred)).sum(axis=1)
    assert kl.max() < 0.01
    assert losses[-1] < losses[0]


def test_model_arrays_round_trip():
    model = RecurrentPreferenceModel(hidden=6, rng=np.random.default_rng(2))
    model.mean = np.arange(FRAME_DIM, dtype=float)
    again = RecurrentPreferenceModel.from_arrays(model.arrays())
    x = np.random.default_rng(3).normal(size=(2, FRAME_DIM))
    assert np.array_equal(predict_preference(x, model), predict_preference(x, again))


def test_features_track_trips_and_padding():
    gmap = GridMap(3, 3)
    feats = TrajectoryFeatures(gmap, 2, poi_grids=(4,), h=3)
    assert (feats.history(0) == 0).all()
    feats.push([0, 4], [IDLE, OCCUPIED])
    feats.push([1, 5], [IDLE, IDLE])
    h1 = feats.history(1)
    assert (h1[0] == 0).all()
    assert h1[-1][1] == pytest.approx(0.1)  # one completed trip, scaled by 1/10
    assert feats.history(0)[-1][0] == pytest.approx(0.2)  # two idle steps in a row


def test_training_pairs_from_simulated_trajectories():
    cfg = tiny_config()
    sc = Scenario(cfg)
    ep = sc.episode(0, "data", 1, record_trajectories=True)
    run_episode(ep, NoReposition())
    seqs, targets, masks = training_pairs(sc.gmap, ep.sim.trajectory, h=3)
    assert len(seqs) > 0 and seqs.shape[1:] == (3, FRAME_DIM)
    assert np.allclose(targets.sum(axis=1), 1)
    assert (masks[targets.astype(bool)]).all()
