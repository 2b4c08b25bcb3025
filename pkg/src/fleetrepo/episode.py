"""Scenario assembly and the per-step repositioning loop shared by every policy."""
from __future__ import annotations

import json
import logging
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import behavior
from .config import RunConfig
from .metrics import compute_metrics
from .nn import load_checkpoint
from .preference import RecurrentPreferenceModel, TrajectoryFeatures
from .sim import Simulator, make_population
from .world import (INVALID, DemandForecaster, GapVector, compute_gap, generate_demand, hotness_map,
                    intensity_table, radial_grid_order, read_requests_csv, request_counts)

log = logging.getLogger(__name__)

STREAMS = ("demand", "start", "policy", "acceptance", "replay", "init")
DOMAINS = {"train": 1, "eval": 2, "history": 3, "data": 4}


def stream_rng(seed: int, domain: str, index: int, name: str) -> np.random.Generator:
    """Independent generator for one named sub-stream of one episode."""
    key = (DOMAINS[domain], index, zlib.crc32(name.encode()))
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def load_acceptance_model(path) -> behavior.AcceptanceModel:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    return behavior.AcceptanceModel(data["b"], data["w_r"], data["w_m"], data["w_o"])


class Scenario:
    """Everything fixed across episodes of one configuration: map, demand law, fleet, behavior models."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.gmap = cfg.grid_map()
        self.steps = cfg.world.steps
        self.spec = cfg.demand_spec()
        self.intensity = intensity_table(self.gmap, self.spec, self.steps)
        self.hotness = hotness_map(self.gmap, self.spec)
        self.radial = radial_grid_order(self.gmap)
        d = cfg.drivers
        pop_rng = np.random.default_rng(np.random.SeedSequence(entropy=d.population_seed, spawn_key=(99,)))
        self.population = make_population(self.gmap, cfg.world.fleet, self.hotness, pop_rng, d.w_home, d.w_hot,
                                          d.w_familiar, d.temperature, d.obedience, d.visit_prior)
        if d.acceptance_model_path:
            self.acceptance = load_acceptance_model(d.acceptance_model_path)
        else:
            self.acceptance = behavior.AcceptanceModel(d.acc_b, d.acc_w_r, d.acc_w_m, d.acc_w_o)
        self.pref_model = None
        if d.predictor == "recurrent":
            arrays, _ = load_checkpoint(d.predictor_path)
            self.pref_model = RecurrentPreferenceModel.from_arrays(arrays)
        self.poi_grids = [self.gmap.grid_id(min(max(h.x, 0), self.gmap.width - 1),
                                            min(max(h.y, 0), self.gmap.height - 1)) for h in self.spec.hotspots]
        self._forecasters: dict[int, DemandForecaster] = {}
        self._csv_requests = None
        if cfg.demand.mode == "csv":
            self._csv_requests = read_requests_csv(cfg.demand.csv_path, self.gmap, self.spec.fare_base,
                                                   self.spec.fare_per_grid)

    def requests(self, rng):
        if self._csv_requests is not None:
            return [replace(r, status="pending", driver=None) for r in self._csv_requests]
        return generate_demand(self.gmap, self.spec, self.steps, rng)

    def forecaster(self, seed: int) -> DemandForecaster:
        if seed not in self._forecasters:
            self._forecasters[seed] = self._build_forecaster(seed)
        return self._forecasters[seed]

    def _build_forecaster(self, seed: int) -> DemandForecaster:
        c = self.cfg.demand
        n = self.gmap.n_grids
        if c.forecast == "oracle":
            return DemandForecaster("oracle", n, self.steps, intensity=self.intensity)
        if self._csv_requests is not None:
            hist = [request_counts(self._csv_requests, n, self.steps)]
        else:
            hist = [request_counts(generate_demand(self.gmap, self.spec, self.steps,
                                                   stream_rng(seed, "history", k, "demand")), n, self.steps)
                    for k in range(c.history_days)]
        return DemandForecaster("historical", n, self.steps, history=hist, bucket_steps=c.bucket_steps)

    def episode(self, seed: int, domain: str, index: int, record_trajectories=False) -> "Episode":
        return Episode(self, seed, domain, index, record_trajectories)


class Episode:
    """One simulated day plus the per-step observations policies consume."""

    def __init__(self, scenario: Scenario, seed: int, domain: str, index: int, record_trajectories=False):
        self.scenario = sc = scenario
        self.gmap = sc.gmap
        self.cfg = sc.cfg
        self.seed, self.domain, self.index = seed, domain, index
        self.rngs = {name: stream_rng(seed, domain, index, name) for name in STREAMS}
        requests = sc.requests(self.rngs["demand"])
        start = []
        for p in sc.population:
            w = p.visit_prior + 1.0
            start.append(int(self.rngs["start"].choice(self.gmap.n_grids, p=w / w.sum())))
        self.sim = Simulator(self.gmap, sc.population, requests, start, sc.steps, self.cfg.world.match_radius,
                             record_trajectories)
        self.forecaster = sc.forecaster(seed)
        d = self.cfg.drivers
        self.income = behavior.IncomeEstimator(requests, self.gmap.n_grids, sc.steps, d.income_window,
                                               (d.survey_min, d.survey_max))
        self.features = None
        if sc.pref_model is not None:
            self.features = TrajectoryFeatures(self.gmap, len(sc.population), sc.poi_grids, d.income_window,
                                               h=d.history_steps)
        self._obs: Observation | None = None

    def observe(self) -> "Observation":
        """Forecasts and preferences for the current step; computed once per t."""
        sim = self.sim
        if self._obs is not None and self._obs.t == sim.t:
            return self._obs
        if self.features is not None:
            self.features.push([d.grid for d in sim.drivers], [d.status for d in sim.drivers])
        idle = sim.idle_by_grid()
        true_rho, pred_rho = {}, {}
        sc = self.scenario
        alpha = self.cfg.drivers.freq_alpha
        kind = self.cfg.drivers.predictor
        ids = [i for g in idle for i in idle[g]]
        for i in ids:
            d = sim.drivers[i]
            true_rho[i] = behavior.ground_truth_preference(self.gmap, d.grid, d.pref_params, sc.hotness,
                                                           d.visit_counts)
            if kind == "frequency":
                nb = self.gmap.neighbor_table[d.grid]
                valid = nb != INVALID
                counts = np.where(valid, d.visit_counts[np.where(valid, nb, 0)], 0.0)
                pred_rho[i] = behavior.frequency_preference(counts, valid, alpha)
            elif kind == "oracle":
                pred_rho[i] = true_rho[i]
        if kind == "recurrent" and ids:
            seqs = np.stack([self.features.history(i) for i in ids])
            valid = np.stack([self.gmap.valid_slots(sim.drivers[i].grid) for i in ids])
            for i, rho in zip(ids, sc.pref_model.predict(seqs, valid)):
                pred_rho[i] = rho
        self._obs = Observation(sim.t, self.forecaster.forecast(sim.t + 1), sim.supply_forecast(), idle,
                                true_rho, pred_rho)
        return self._obs

    def initial_gap(self, grid: int, obs: "Observation | None" = None) -> GapVector:
        """Gap a grid's turn would start from if no earlier grid sent vehicles into its neighborhood."""
        obs = obs or self.observe()
        supply = obs.supply.copy()
        supply[grid] -= len(obs.idle.get(grid, ()))
        return compute_gap(self.gmap, grid, supply, obs.demand)

    def metrics(self, policy: str):
        return compute_metrics(self.sim.events, policy, self.seed, self.index)


@dataclass
class Observation:
    t: int
    demand: np.ndarray
    supply: np.ndarray
    idle: dict
    true_rho: dict
    pred_rho: dict

    def base_gap(self) -> np.ndarray:
        return self.supply - self.demand


@dataclass
class GridTurn:
    """One grid's repositioning round. Drivers are handled one at a time; each decision updates the live gap."""
    episode: Episode
    grid: int
    drivers: list
    gap0: GapVector
    supply: np.ndarray  # fleet-wide live supply forecast, shared across turns of the step
    obs: Observation
    commitments: np.ndarray = field(default_factory=lambda: np.zeros(9, dtype=np.int64))
    decided: list = field(default_factory=list)

    @property
    def valid(self) -> np.ndarray:
        return self.gap0.valid

    @property
    def live_delta(self) -> np.ndarray:
        return np.where(self.gap0.valid, self.gap0.delta + self.commitments, 0)

    def pred_rho(self, d: int) -> np.ndarray:
        return self.obs.pred_rho[d]

    def true_rho(self, d: int) -> np.ndarray:
        return self.obs.true_rho[d]

    def _place(self, d: int, slot: int, recommended=None, accepted=None):
        target = int(self.episode.gmap.neighbor_table[self.grid][slot])
        self.episode.sim.commit(d, target, recommended, accepted)
        self.commitments[slot] += 1
        self.supply[target] += 1
        self.decided.append(d)

    def recommend(self, d: int, slot: int) -> tuple[bool, int]:
        """Issue a recommendation; the simulated driver accepts or falls back. Returns (accepted, actual slot)."""
        ep = self.episode
        if not self.valid[slot]:
            raise ValueError(f"slot {slot} is off the map at grid {self.grid}")
        target = int(ep.gmap.neighbor_table[self.grid][slot])
        income = ep.income(target, ep.sim.t)
        drv = ep.sim.drivers[d]
        accepted, actual = behavior.decide_on_recommendation(slot, self.true_rho(d), self.valid, income,
                                                             drv.obedience, ep.scenario.acceptance,
                                                             ep.rngs["acceptance"])
        self._place(d, actual, target, accepted)
        return accepted, actual

    def cruise(self, d: int, rng) -> int:
        """No recommendation: the driver picks a neighbor grid by their own preference."""
        rho = self.true_rho(d)
        slot = int(rng.choice(9, p=rho))
        self._place(d, slot)
        return slot


class Policy:
    name = "policy"

    def begin_step(self, episode: Episode, obs: Observation):
        pass

    def play_grid(self, turn: GridTurn, rng):
        raise NotImplementedError

    def end_step(self, episode: Episode):
        pass

    def end_episode(self, episode: Episode):
        pass


def run_step(episode: Episode, policy: Policy):
    sim = episode.sim
    obs = episode.observe()
    supply = obs.supply.copy()
    policy.begin_step(episode, obs)
    rng = episode.rngs["policy"]
    for g in episode.scenario.radial:
        drivers = obs.idle.get(g)
        if not drivers:
            continue
        supply[g] -= len(drivers)
        turn = GridTurn(episode, g, list(drivers), compute_gap(episode.gmap, g, supply, obs.demand), supply, obs)
        policy.play_grid(turn, rng)
        if sorted(turn.decided) != sorted(drivers):
            raise RuntimeError(f"policy {policy.name} left drivers undecided in grid {g}")
    sim.advance()
    policy.end_step(episode)


def run_episode(episode: Episode, policy: Policy):
    while not episode.sim.done:
        run_step(episode, policy)
    episode.sim.finish()
    policy.end_episode(episode)
    return episode.metrics(policy.name)
