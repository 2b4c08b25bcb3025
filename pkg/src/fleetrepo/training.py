"""Training loop with resumable checkpoints, and deterministic multi-policy evaluation."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from . import nn
from .agents import DualAgentPolicy, GridTransition, VehicleTransition
from .baselines import make_baseline
from .config import RunConfig
from .episode import Scenario, run_episode, stream_rng
from .metrics import (EpisodeMetrics, format_table, normalize_and_tabulate, truncate_metrics_csv, write_metrics_csv,
                      write_table_csv)
from .rewards import RewardWeights

log = logging.getLogger(__name__)

CHECKPOINT_NAME = "checkpoint.bin"
TRAIN_METRICS = "train_metrics.csv"


# --- buffer persistence -------------------------------------------------------

def _vehicle_buffer_arrays(buf) -> dict:
    items = list(buf.items)
    n = len(items)
    out = {"buffer/vehicle/state": np.zeros((n, 18)), "buffer/vehicle/next_state": np.zeros((n, 18)),
           "buffer/vehicle/valid": np.zeros((n, 9)), "buffer/vehicle/next_valid": np.zeros((n, 9)),
           "buffer/vehicle/scalars": np.zeros((n, 3))}
    for i, tr in enumerate(items):
        out["buffer/vehicle/state"][i] = tr.state
        out["buffer/vehicle/valid"][i] = tr.valid
        if not tr.done:
            out["buffer/vehicle/next_state"][i] = tr.next_state
            out["buffer/vehicle/next_valid"][i] = tr.next_valid
        out["buffer/vehicle/scalars"][i] = (tr.action, tr.reward, float(tr.done))
    return out


def _load_vehicle_buffer(buf, arrays):
    buf.items.clear()
    for i in range(arrays["buffer/vehicle/state"].shape[0]):
        action, reward, done = arrays["buffer/vehicle/scalars"][i]
        done = bool(done)
        buf.add(VehicleTransition(arrays["buffer/vehicle/state"][i].copy(), arrays["buffer/vehicle/valid"][i] > 0,
                                  int(action), float(reward),
                                  None if done else arrays["buffer/vehicle/next_state"][i].copy(),
                                  None if done else arrays["buffer/vehicle/next_valid"][i] > 0, done))


def _grid_buffer_arrays(buf, dim, n_max) -> dict:
    items = list(buf.items)
    n = len(items)
    out = {"buffer/grid/state": np.zeros((n, dim)), "buffer/grid/order": np.full((n, n_max), -1.0),
           "buffer/grid/valid": np.zeros((n, 9)), "buffer/grid/scalars": np.zeros((n, 2))}
    for i, tr in enumerate(items):
        out["buffer/grid/state"][i] = tr.state
        out["buffer/grid/order"][i, : len(tr.order)] = tr.order
        if tr.valid_mask is not None:
            out["buffer/grid/valid"][i] = tr.valid_mask
        out["buffer/grid/scalars"][i] = (tr.n, tr.reward)
    return out


def _load_grid_buffer(buf, arrays, joint: bool):
    buf.items.clear()
    for i in range(arrays["buffer/grid/state"].shape[0]):
        n, reward = arrays["buffer/grid/scalars"][i]
        order = [int(x) for x in arrays["buffer/grid/order"][i, : int(n)]]
        buf.add(GridTransition(arrays["buffer/grid/state"][i].copy(), int(n), order, float(reward),
                               arrays["buffer/grid/valid"][i] > 0 if joint else None))


def policy_arrays(policy: DualAgentPolicy) -> dict:
    out = policy.state_arrays()
    out.update(_vehicle_buffer_arrays(policy.vehicle_buffer))
    if policy.grid is not None:
        out.update(_grid_buffer_arrays(policy.grid_buffer, policy.grid.dim, policy.grid.n_max))
    out["counters/updates"] = np.array([float(policy.updates)])
    return out


def restore_policy(policy: DualAgentPolicy, arrays: dict):
    policy.load_state_arrays(arrays)
    _load_vehicle_buffer(policy.vehicle_buffer, arrays)
    if policy.grid is not None:
        _load_grid_buffer(policy.grid_buffer, arrays, policy.cfg.order_mode == "joint")
    policy.updates = int(arrays["counters/updates"][0])


def new_dual_policy(cfg: RunConfig, training: bool) -> DualAgentPolicy:
    return DualAgentPolicy(cfg.agents, stream_rng(cfg.run.seed, "train", 0, "init"), training)


# --- training -------------------------------------------------------------------

def train(cfg: RunConfig, out_dir, resume=None, episodes: int | None = None, progress=None) -> DualAgentPolicy:
    """Run ``episodes`` training episodes (default ``cfg.run.episodes``), appending one metrics row per episode.

    With ``resume`` pointing at a checkpoint written by an earlier call with the same config, training continues
    at the next episode index and the result matches an uninterrupted run.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    total = cfg.run.episodes if episodes is None else episodes
    scenario = Scenario(cfg)
    policy = new_dual_policy(cfg, training=True)
    start = 0
    if resume:
        arrays, header = nn.load_checkpoint(resume, config_hash=cfg.hash())
        restore_policy(policy, arrays)
        start = int(header["meta"]["episode"])
        log.info("resuming at episode %d", start)
    elif cfg.run.init_checkpoint:
        arrays, _ = nn.load_checkpoint(cfg.run.init_checkpoint)
        policy.load_grid_weights(arrays)
    metrics_path = out / TRAIN_METRICS
    if start:
        truncate_metrics_csv(metrics_path, start)
    elif metrics_path.exists():
        metrics_path.unlink()
    ckpt = out / CHECKPOINT_NAME
    for k in range(start, total):
        ep = scenario.episode(cfg.run.seed, "train", k)
        m = run_episode(ep, policy)
        write_metrics_csv(metrics_path, [m], append=True)
        if progress:
            progress(k, m)
        if (k + 1) % cfg.run.checkpoint_every == 0 or k + 1 == total:
            save_policy(ckpt, policy, cfg, k + 1)
    if start >= total and not ckpt.exists():
        save_policy(ckpt, policy, cfg, total)
    return policy


def save_policy(path, policy: DualAgentPolicy, cfg: RunConfig, episode: int):
    nn.save_checkpoint(path, policy_arrays(policy), cfg.hash(),
                       {"episode": episode, "order_mode": cfg.agents.order_mode, "seed": cfg.run.seed})


def load_eval_policy(cfg: RunConfig, checkpoint) -> DualAgentPolicy:
    if not checkpoint:
        raise FileNotFoundError("dual_agent evaluation needs --checkpoint")
    if not Path(checkpoint).exists():
        raise FileNotFoundError(f"checkpoint not found: {checkpoint}")
    arrays, _ = nn.load_checkpoint(checkpoint, config_hash=cfg.hash())
    policy = new_dual_policy(cfg, training=False)
    policy.load_state_arrays(arrays)
    return policy


# --- evaluation -----------------------------------------------------------------

def make_policy(cfg: RunConfig, kind: str, checkpoint=None):
    if kind == "dual_agent":
        return load_eval_policy(cfg, checkpoint)
    a = cfg.agents
    weights = RewardWeights(a.alpha_b, a.alpha_p, a.gamma, a.entropy_beta, a.batch)
    return make_baseline(kind, weights, cfg.drivers.freq_alpha)


def evaluate_policy(cfg: RunConfig, kind: str, seeds, checkpoint=None, label=None,
                    scenario: Scenario | None = None) -> list[EpisodeMetrics]:
    """One evaluation episode per seed. ``label`` renames the policy column (used for ablation variants)."""
    scenario = scenario or Scenario(cfg)
    policy = make_policy(cfg, kind, checkpoint)
    if label:
        policy.name = label
    return [run_episode(scenario.episode(int(s), "eval", 0), policy) for s in seeds]


def evaluate(cfg: RunConfig, policies, seeds, checkpoint=None, out_dir=None):
    """Evaluate each policy (no_reposition always included) and write metrics and comparison tables."""
    kinds = ["no_reposition"] + [p for p in policies if p != "no_reposition"]
    scenario = Scenario(cfg)
    rows = []
    for kind in kinds:
        rows.extend(evaluate_policy(cfg, kind, seeds, checkpoint, scenario=scenario))
    table = normalize_and_tabulate(rows)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_metrics_csv(out / "metrics.csv", rows)
        write_table_csv(out / "table.csv", table)
        (out / "table.txt").write_text(format_table(table), encoding="utf-8")
        (out / "config_hash.txt").write_text(cfg.hash() + "\n", encoding="utf-8")
    return rows, table
