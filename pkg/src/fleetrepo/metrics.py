"""Episode metrics from the event log, and seed-averaged comparison tables."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

METRICS_HEADER = ["episode", "policy", "seed", "tdi", "ri", "rrr", "acceptance_rate", "repositions"]


@dataclass(frozen=True)
class EpisodeMetrics:
    episode: int
    policy: str
    seed: int
    tdi: float
    ri: float
    rrr: float
    acceptance_rate: float | None
    repositions: int
    tdi_cents: int = 0
    ri_cents: int = 0

    def row(self):
        acc = "N/A" if self.acceptance_rate is None else f"{self.acceptance_rate:.6f}"
        return [self.episode, self.policy, self.seed, f"{self.tdi_cents / 100:.2f}", f"{self.ri_cents / 100:.2f}",
                f"{self.rrr:.6f}", acc, self.repositions]


class MalformedLog(ValueError):
    pass


def compute_metrics(events, policy="", seed=0, episode=0) -> EpisodeMetrics:
    """TDI, RI, RRR, acceptance rate and reposition count from a chronological event log."""
    n_requests = served = issued = accepted = repositions = 0
    tdi = ri = 0
    last_accepted: dict[int, bool] = {}
    attributed: dict[int, bool] = {}
    matched: set[int] = set()
    served_ids: set[int] = set()
    for ev in events:
        kind = ev[0]
        if kind == "request":
            n_requests += 1
        elif kind == "recommend":
            _, _, d, origin, target, acc, _actual = ev
            issued += 1
            last_accepted[d] = bool(acc)
            if acc:
                accepted += 1
                if target != origin:
                    repositions += 1
        elif kind == "cruise":
            last_accepted[ev[2]] = False
        elif kind == "match":
            _, _, rid, d = ev
            if rid in matched:
                raise MalformedLog(f"request {rid} matched twice")
            matched.add(rid)
            attributed[rid] = last_accepted.pop(d, False)
        elif kind == "serve":
            _, _, rid, d, fare = ev
            if rid not in matched or rid in served_ids:
                raise MalformedLog(f"request {rid} served without a single prior match")
            served_ids.add(rid)
            served += 1
            tdi += int(fare)
            if attributed[rid]:
                ri += int(fare)
        elif kind == "expire":
            pass
        else:
            raise MalformedLog(f"unknown event kind {kind!r}")
    return EpisodeMetrics(episode, policy, seed, tdi / 100.0, ri / 100.0,
                          served / n_requests if n_requests else 0.0,
                          accepted / issued if issued else None, repositions, tdi, ri)


def write_events(path, events):
    with open(path, "w", encoding="utf-8") as fh:
        for ev in events:
            fh.write(json.dumps(list(ev)) + "\n")


def read_events(path):
    with open(path, encoding="utf-8") as fh:
        return [tuple(json.loads(line)) for line in fh if line.strip()]


def write_metrics_csv(path, rows, append=False):
    path = Path(path)
    fresh = not append or not path.exists() or path.stat().st_size == 0
    with open(path, "a" if append else "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if fresh:
            w.writerow(METRICS_HEADER)
        for m in rows:
            w.writerow(m.row())


def read_metrics_csv(path) -> list[EpisodeMetrics]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRICS_HEADER:
            raise MalformedLog(f"{path}: expected header {','.join(METRICS_HEADER)}")
        for r in reader:
            acc = None if r["acceptance_rate"] == "N/A" else float(r["acceptance_rate"])
            tdi_c = int(round(float(r["tdi"]) * 100))
            ri_c = int(round(float(r["ri"]) * 100))
            out.append(EpisodeMetrics(int(r["episode"]), r["policy"], int(r["seed"]), tdi_c / 100, ri_c / 100,
                                      float(r["rrr"]), acc, int(r["repositions"]), tdi_c, ri_c))
    return out


def truncate_metrics_csv(path, keep_below_episode: int):
    """Drop rows at or after an episode index (used when resuming training)."""
    path = Path(path)
    if not path.exists():
        return
    rows = [m for m in read_metrics_csv(path) if m.episode < keep_below_episode]
    write_metrics_csv(path, rows)


TABLE_COLUMNS = ["policy", "seeds", "norm_tdi_mean", "norm_tdi_sd", "ri_tdi_mean", "rrr_mean",
                 "acceptance_mean", "repositions_mean"]


def _mean_sd(xs):
    xs = [x for x in xs if x is not None]
    if not xs:
        return None, None
    m = float(np.mean(xs))
    sd = float(np.std(xs, ddof=1)) if len(xs) > 1 else 0.0
    return m, sd


def normalize_and_tabulate(runs, baseline="no_reposition"):
    """Per-policy means over seeds; TDI is normalized seed by seed against the baseline policy."""
    base = {m.seed: m.tdi for m in runs if m.policy == baseline}
    if not base:
        raise ValueError(f"no {baseline} runs to normalize against")
    policies = []
    for m in runs:
        if m.policy not in policies:
            policies.append(m.policy)
    table = []
    for p in policies:
        rows = [m for m in runs if m.policy == p]
        missing = [m.seed for m in rows if m.seed not in base]
        if missing:
            raise ValueError(f"policy {p}: seeds {missing} have no {baseline} run")
        norm = [m.tdi / base[m.seed] if base[m.seed] else math.nan for m in rows]
        ntdi, ntdi_sd = _mean_sd(norm)
        ri_tdi, _ = _mean_sd([None if p == baseline else (m.ri / m.tdi if m.tdi else 0.0) for m in rows])
        rrr, _ = _mean_sd([m.rrr for m in rows])
        acc, _ = _mean_sd([m.acceptance_rate for m in rows])
        rep, _ = _mean_sd([m.repositions for m in rows])
        table.append({"policy": p, "seeds": len(rows), "norm_tdi_mean": ntdi, "norm_tdi_sd": ntdi_sd,
                      "ri_tdi_mean": ri_tdi, "rrr_mean": rrr, "acceptance_mean": acc, "repositions_mean": rep})
    return table


def _pct(x):
    return "N/A" if x is None else f"{100 * x:.2f}%"


def write_table_csv(path, table):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for r in table:
            w.writerow(["N/A" if r[c] is None else (f"{r[c]:.6f}" if isinstance(r[c], float) else r[c])
                        for c in TABLE_COLUMNS])


def format_table(table) -> str:
    head = ["Method", "Norm. TDI", "sd", "RI/TDI", "RRR", "Accept. Rate", "#Repos."]
    body = [[r["policy"], _pct(r["norm_tdi_mean"]), _pct(r["norm_tdi_sd"]), _pct(r["ri_tdi_mean"]),
             _pct(r["rrr_mean"]), _pct(r["acceptance_mean"]), f"{r['repositions_mean']:.1f}"] for r in table]
    widths = [max(len(str(x)) for x in col) for col in zip(head, *body)]
    lines = ["  ".join(str(x).rjust(w) if i else str(x).ljust(w) for i, (x, w) in enumerate(zip(row, widths)))
             for row in [head, *body]]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"
