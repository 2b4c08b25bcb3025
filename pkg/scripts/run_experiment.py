"""Train the dual agents and ablations at desk scale, then print the comparison table.

    python scripts/run_experiment.py --out runs/desk
    python scripts/run_experiment.py --config my.cfg --variants rnp_snp rnp_sp rp_snp fixed_order --out runs/ablate

Checkpoints already present in the output directory are reused (or resumed when partial).
"""
import argparse
import logging
import sys

from fleetrepo.config import RunConfig, load_config
from fleetrepo.experiment import DEFAULT_BASELINES, ORDER_VARIANTS, PREFERENCE_VARIANTS, run_experiment
from fleetrepo.metrics import format_table


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--config")
    p.add_argument("--out", default="runs/experiment")
    p.add_argument("--episodes", type=int, help="override run.episodes")
    p.add_argument("--seeds", type=int, nargs="+", help="override run.eval_seeds")
    p.add_argument("--variants", nargs="*", default=["rnp_snp"],
                   choices=sorted(PREFERENCE_VARIANTS) + sorted(ORDER_VARIANTS))
    p.add_argument("--baselines", nargs="*", default=list(DEFAULT_BASELINES))
    p.add_argument("-v", "--verbose", action="store_true")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    cfg = load_config(args.config) if args.config else RunConfig().validate()
    if args.episodes is not None:
        cfg = cfg.replace(run={"episodes": args.episodes})

    def progress(k, m):
        logging.info("episode %d tdi=%.2f acceptance=%s repositions=%d", k, m.tdi, m.acceptance_rate, m.repositions)

    result = run_experiment(cfg, args.out, args.variants, args.baselines, args.seeds, progress)
    sys.stdout.write(format_table(result.table))
    for name, ok in result.checks().items():
        print(f"{name}: {'yes' if ok else 'no'}")
    for name, secs in result.timings.items():
        print(f"time {name}: {secs:.0f}s")


if __name__ == "__main__":
    main()
