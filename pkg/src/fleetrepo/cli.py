"""Command-line entry points: data generation, model fitting, training, evaluation and reporting."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import behavior
from .config import POLICIES, ConfigError, RunConfig, load_config
from .baselines import NoReposition
from .episode import Scenario, run_episode, stream_rng
from .metrics import MalformedLog, format_table, normalize_and_tabulate, read_metrics_csv, write_table_csv
from .nn import CheckpointError, save_checkpoint
from .preference import train_preference_model, training_pairs
from .ordering import order_optimality_diagnostic
from .training import evaluate, train
from .world import read_trajectories_csv, write_requests_csv, write_trajectories_csv

log = logging.getLogger("fleetrepo")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig().validate()
    run = {}
    if args.seed is not None:
        run["seed"] = args.seed
    if getattr(args, "policy", None):
        run["policy"] = args.policy[0]
    return cfg.replace(run=run) if run else cfg


def _out(args, default) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args):
    cfg = _config(args)
    out = _out(args, "data")
    sc = Scenario(cfg)
    seed = cfg.run.seed
    requests = sc.requests(stream_rng(seed, "data", 0, "demand"))
    write_requests_csv(out / "requests.csv", sc.gmap, requests)
    ep = sc.episode(seed, "data", 1, record_trajectories=True)
    run_episode(ep, NoReposition())
    write_trajectories_csv(out / "trajectories.csv", sc.gmap, ep.sim.trajectory)
    records = behavior.sample_survey(args.survey_size, sc.acceptance, stream_rng(seed, "data", 2, "acceptance"))
    behavior.write_survey_csv(out / "survey.csv", records)
    print(f"requests={len(requests)} trajectory_rows={len(ep.sim.trajectory)} survey_rows={len(records)} out={out}")


def cmd_fit_acceptance(args):
    if not args.survey:
        raise ConfigError("fit-acceptance needs --survey <csv>")
    cfg = _config(args)
    model, report = behavior.fit_acceptance_model(behavior.read_survey_csv(args.survey))
    out = _out(args, "model")
    payload = {"b": model.b, "w_r": model.w_r, "w_m": model.w_m, "w_o": model.w_o, "config_hash": cfg.hash(),
               "report": report.as_dict()}
    (out / "acceptance_model.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    for k, v in report.as_dict().items():
        print(f"{k}={v}")


def cmd_fit_preference(args):
    if not args.trajectories:
        raise ConfigError("fit-preference needs --trajectories <csv>")
    cfg = _config(args)
    sc = Scenario(cfg)
    rows = read_trajectories_csv(args.trajectories, sc.gmap)
    d = cfg.drivers
    seqs, targets, masks = training_pairs(sc.gmap, rows, d.history_steps, sc.poi_grids, d.income_window)
    if len(seqs) == 0:
        raise ConfigError("no idle-to-neighbor moves found in the trajectories")
    model, losses = train_preference_model(seqs, targets, masks, epochs=args.epochs, seed=cfg.run.seed)
    out = _out(args, "model")
    save_checkpoint(out / "preference.bin", model.arrays(), cfg.hash(), {"samples": int(len(seqs))})
    acc = float((model.predict(seqs, masks).argmax(axis=1) == targets.argmax(axis=1)).mean())
    print(f"samples={len(seqs)} final_loss={losses[-1]:.6f} top1_accuracy={acc:.4f}")


def cmd_train(args):
    cfg = _config(args)
    out = _out(args, "runs/train")

    def progress(k, m):
        log.info("episode %d tdi=%.2f acceptance=%s repositions=%d", k, m.tdi, m.acceptance_rate, m.repositions)

    train(cfg, out, resume=args.checkpoint, episodes=args.episodes, progress=progress)
    print(f"checkpoint={out / 'checkpoint.bin'} metrics={out / 'train_metrics.csv'}")


def cmd_evaluate(args):
    cfg = _config(args)
    out = _out(args, "runs/eval")
    policies = args.policy or [cfg.run.policy]
    seeds = args.seeds or list(cfg.run.eval_seeds)
    _, table = evaluate(cfg, policies, seeds, args.checkpoint, out)
    sys.stdout.write(format_table(table))


def cmd_diagnose(args):
    report = order_optimality_diagnostic(args.instances, seed=args.seed or 0)
    text = report.as_text()
    if args.out:
        _out(args, args.out)
        (Path(args.out) / "order_optimality.txt").write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_report(args):
    if not args.metrics:
        raise ConfigError("report needs one or more --metrics <csv>")
    rows = [m for path in args.metrics for m in read_metrics_csv(path)]
    table = normalize_and_tabulate(rows)
    if args.out:
        out = _out(args, args.out)
        write_table_csv(out / "table.csv", table)
        (out / "table.txt").write_text(format_table(table), encoding="utf-8")
    sys.stdout.write(format_table(table))


def _policy_list(text: str) -> list[str]:
    kinds = [k.strip() for k in text.split(",") if k.strip()]
    bad = [k for k in kinds if k not in POLICIES]
    if bad or not kinds:
        raise argparse.ArgumentTypeError(f"unknown policy {bad[0] if bad else text!r}")
    return kinds


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fleetrepo", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, policy=False):
        sp.add_argument("--config", help="key-value config file with [world] [demand] [drivers] [agents] [run]")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--checkpoint")
        if policy:
            sp.add_argument("--policy", type=_policy_list, help="one kind or a comma-separated list: " + ", ".join(POLICIES))
        return sp

    sp = common(sub.add_parser("gen-data", help="write synthetic requests, trajectories and survey CSVs"))
    sp.add_argument("--survey-size", type=int, default=20000)
    sp.set_defaults(func=cmd_gen_data)
    sp = common(sub.add_parser("fit-acceptance", help="fit the logistic acceptance model to a survey CSV"))
    sp.add_argument("--survey")
    sp.set_defaults(func=cmd_fit_acceptance)
    sp = common(sub.add_parser("fit-preference", help="fit the recurrent preference predictor to trajectories"))
    sp.add_argument("--trajectories")
    sp.add_argument("--epochs", type=int, default=30)
    sp.set_defaults(func=cmd_fit_preference)
    sp = common(sub.add_parser("train", help="train the dual agents; --checkpoint resumes"))
    sp.add_argument("--episodes", type=int)
    sp.set_defaults(func=cmd_train)
    sp = common(sub.add_parser("evaluate", help="evaluate a policy against no_reposition"), policy=True)
    sp.add_argument("--seeds", type=int, nargs="+")
    sp.set_defaults(func=cmd_evaluate)
    sp = common(sub.add_parser("diagnose-theorem1", help="sequential-vs-joint optimality enumeration"))
    sp.add_argument("--instances", type=int, default=1000)
    sp.set_defaults(func=cmd_diagnose)
    sp = common(sub.add_parser("report", help="aggregate metrics CSVs into a comparison table"))
    sp.add_argument("--metrics", nargs="+")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except (ConfigError, CheckpointError, MalformedLog, behavior.FitError, FileNotFoundError, ValueError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
