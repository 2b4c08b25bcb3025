"""End-to-end comparison: train the dual agents and their ablations, then evaluate them next to the baselines."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from .config import RunConfig
from .episode import Scenario
from .metrics import EpisodeMetrics, format_table, normalize_and_tabulate, write_metrics_csv, write_table_csv
from .nn import load_checkpoint
from .training import CHECKPOINT_NAME, evaluate_policy, train

log = logging.getLogger(__name__)

# Vehicle-Agent preference ablations reuse the order learned by the full model.
PREFERENCE_VARIANTS = {
    "rnp_snp": {"pref_state": False, "pref_reward": False},
    "rnp_sp": {"pref_state": True, "pref_reward": False},
    "rp_snp": {"pref_state": False, "pref_reward": True},
}
# Order ablations are trained from scratch.
ORDER_VARIANTS = {
    "fixed_order": {"order_mode": "fixed"},
    "random_order": {"order_mode": "random"},
    "joint_action": {"order_mode": "joint"},
}
DEFAULT_BASELINES = ("random", "demand_greedy", "reward_greedy", "min_cost_flow", "proportional",
                     "collective_preference")


@dataclass
class ExperimentResult:
    rows: list
    table: list
    timings: dict = field(default_factory=dict)

    def row(self, policy: str) -> dict:
        for r in self.table:
            if r["policy"] == policy:
                return r
        raise KeyError(policy)

    def checks(self, ablation: str = "rnp_snp") -> dict[str, bool]:
        """Directional comparisons on seed means: income gain, and acceptance over the ablation and Random."""
        dual = self.row("dual_agent")
        out = {"norm_tdi_above_100": dual["norm_tdi_mean"] > 1.0,
               "acceptance_above_random": dual["acceptance_mean"] > self.row("random")["acceptance_mean"]}
        if any(r["policy"] == ablation for r in self.table):
            out[f"acceptance_above_{ablation}"] = dual["acceptance_mean"] > self.row(ablation)["acceptance_mean"]
        return out


def variant_config(cfg: RunConfig, name: str, dual_checkpoint=None) -> RunConfig:
    if name in PREFERENCE_VARIANTS:
        if dual_checkpoint is None:
            raise ValueError(f"{name} reuses the dual agent's learned order; train that first")
        return cfg.replace(agents={**PREFERENCE_VARIANTS[name], "freeze_grid": True},
                           run={"init_checkpoint": str(dual_checkpoint)})
    if name in ORDER_VARIANTS:
        return cfg.replace(agents=ORDER_VARIANTS[name])
    raise ValueError(f"unknown variant {name!r}")


def _train_or_reuse(cfg: RunConfig, out: Path, progress=None) -> Path:
    """Train into ``out`` unless a finished checkpoint for this config is already there; resume a partial one."""
    ckpt = out / CHECKPOINT_NAME
    resume = None
    if ckpt.exists():
        _, header = load_checkpoint(ckpt)
        if header["config_hash"] == cfg.hash() and header["meta"].get("seed") == cfg.run.seed:
            resume = ckpt
    train(cfg, out, resume=resume, progress=progress)
    return ckpt


def run_experiment(cfg: RunConfig, out_dir, variants=("rnp_snp",), baselines=DEFAULT_BASELINES, seeds=None,
                   progress=None) -> ExperimentResult:
    """Train ``dual_agent`` and each variant, evaluate everything on ``seeds`` and write the comparison tables."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = list(cfg.run.eval_seeds if seeds is None else seeds)
    timings = {}
    t0 = time.perf_counter()
    dual_ckpt = _train_or_reuse(cfg, out / "dual_agent", progress)
    timings["train/dual_agent"] = time.perf_counter() - t0
    trained = {"dual_agent": (cfg, dual_ckpt)}
    for name in variants:
        t0 = time.perf_counter()
        vcfg = variant_config(cfg, name, dual_ckpt)
        trained[name] = (vcfg, _train_or_reuse(vcfg, out / name, progress))
        timings[f"train/{name}"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    scenario = Scenario(cfg)
    rows: list[EpisodeMetrics] = []
    for kind in ("no_reposition", *[b for b in baselines if b != "no_reposition"]):
        rows.extend(evaluate_policy(cfg, kind, seeds, scenario=scenario))
    for name, (vcfg, ckpt) in trained.items():
        rows.extend(evaluate_policy(vcfg, "dual_agent", seeds, ckpt, label=name, scenario=scenario))
    timings["evaluate"] = time.perf_counter() - t0
    table = normalize_and_tabulate(rows)
    write_metrics_csv(out / "metrics.csv", rows)
    write_table_csv(out / "table.csv", table)
    (out / "table.txt").write_text(format_table(table), encoding="utf-8")
    (out / "config_hash.txt").write_text(cfg.hash() + "\n", encoding="utf-8")
    return ExperimentResult(rows, table, timings)
