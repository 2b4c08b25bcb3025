"""Simulated driver decisions: cruising preferences, acceptance of recommendations, and the survey fit."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .world import INVALID, GridMap


@dataclass(frozen=True)
class PrefParams:
    """Ground-truth taste of one simulated driver."""
    home_grid: int
    w_home: float = 1.0
    w_hot: float = 1.0
    w_familiar: float = 1.0
    temperature: float = 1.0

    def __post_init__(self):
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not all(np.isfinite([self.w_home, self.w_hot, self.w_familiar])):
            raise ValueError("preference weights must be finite")


def masked_softmax(utility, valid) -> np.ndarray:
    valid = np.asarray(valid, bool)
    if not valid.any():
        raise ValueError("no valid slot")
    u = np.where(valid, utility, -np.inf)
    u = u - u[valid].max()
    w = np.where(valid, np.exp(u), 0.0)
    return w / w.sum()


def _unit_max(x, valid):
    x = np.where(valid, np.asarray(x, dtype=np.float64), 0.0)
    m = x.max()
    return x / m if m > 0 else np.zeros_like(x)


def ground_truth_preference(gmap: GridMap, grid: int, params: PrefParams, hotness, visit_counts) -> np.ndarray:
    """Softmax over valid neighbor slots of home proximity, demand attractiveness and familiarity."""
    nb = gmap.neighbor_table[grid]
    valid = nb != INVALID
    idx = np.where(valid, nb, 0)
    proximity = -gmap.distance[idx, params.home_grid].astype(np.float64)
    hot = _unit_max(np.asarray(hotness)[idx], valid)
    fam = _unit_max(np.asarray(visit_counts)[idx], valid)
    utility = params.w_home * proximity + params.w_hot * hot + params.w_familiar * fam
    return masked_softmax(utility / params.temperature, valid)


def frequency_preference(counts, valid=None, alpha: float = 1.0) -> np.ndarray:
    """Laplace-smoothed visit frequencies over valid slots."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    counts = np.asarray(counts, dtype=np.float64)
    if np.any(counts < 0):
        raise ValueError("counts must be nonnegative")
    valid = np.ones(9, bool) if valid is None else np.asarray(valid, bool)
    num = np.where(valid, counts + alpha, 0.0)
    return num / (counts[valid].sum() + alpha * valid.sum())


def rank_slots(rho, valid=None) -> np.ndarray:
    """Rank 1 = most preferred; ties go to the lower slot index. Invalid slots get rank 0."""
    rho = np.asarray(rho, dtype=np.float64)
    valid = rho > -1 if valid is None else np.asarray(valid, bool)
    slots = np.flatnonzero(valid)
    order = slots[np.lexsort((slots, -rho[slots]))]
    ranks = np.zeros(len(rho), dtype=np.int64)
    ranks[order] = np.arange(1, len(order) + 1)
    return ranks


def top_slots(rho, valid, k=4) -> np.ndarray:
    ranks = rank_slots(rho, valid)
    n = min(k, int(np.asarray(valid, bool).sum()))
    return np.array([int(np.flatnonzero(ranks == r)[0]) for r in range(1, n + 1)])


@dataclass(frozen=True)
class AcceptanceModel:
    b: float = -1.31
    w_r: float = -0.44
    w_m: float = 0.29
    w_o: float = 2.17

    def __post_init__(self):
        if not all(np.isfinite([self.b, self.w_r, self.w_m, self.w_o])):
            raise ValueError("acceptance coefficients must be finite")

    def coef(self):
        return np.array([self.b, self.w_r, self.w_m, self.w_o])


def acceptance_probability(model: AcceptanceModel, r, m, o):
    z = model.b + model.w_r * np.asarray(r, dtype=np.float64) + model.w_m * np.asarray(m, dtype=np.float64) \
        + model.w_o * np.asarray(o, dtype=np.float64)
    p = 1.0 / (1.0 + np.exp(-z))
    return float(p) if np.ndim(p) == 0 else p


def decide_on_recommendation(slot: int, rho, valid, income: float, obedience: float,
                             model: AcceptanceModel, rng) -> tuple[bool, int]:
    """Return (accepted, slot the driver actually heads to)."""
    valid = np.asarray(valid, bool)
    if not valid[slot]:
        raise ValueError(f"slot {slot} is not on the map")
    rank = int(rank_slots(rho, valid)[slot])
    p = acceptance_probability(model, rank, income, obedience)
    if rng.random() < p:
        return True, slot
    fallback = top_slots(rho, valid, 4)
    return False, int(fallback[rng.integers(len(fallback))])


# --- income on the survey's scale ---------------------------------------------

def income_on_scale(mean_fare: float, lo: float, hi: float, scale=(6.0, 16.0)) -> float:
    if hi <= lo:
        return scale[0]
    frac = min(max((mean_fare - lo) / (hi - lo), 0.0), 1.0)
    return scale[0] + frac * (scale[1] - scale[0])


class IncomeEstimator:
    """Mean fare of requests that recently originated in a grid, mapped onto the survey income range.

    ``lo``/``hi`` are the min and max single-request fares of the episode.
    """

    def __init__(self, requests, n_grids: int, steps: int, window: int = 6, scale=(6.0, 16.0)):
        fares = [r.fare for r in requests]
        self.lo = min(fares) if fares else 0.0
        self.hi = max(fares) if fares else 0.0
        self.window = max(1, window)
        self.scale = scale
        self.sums = np.zeros((steps + 1, n_grids))
        self.counts = np.zeros((steps + 1, n_grids))
        for r in requests:
            if r.created_t < steps:
                self.sums[r.created_t + 1, r.origin] += r.fare
                self.counts[r.created_t + 1, r.origin] += 1
        self.sums = np.cumsum(self.sums, axis=0)
        self.counts = np.cumsum(self.counts, axis=0)

    def mean_fare(self, grid: int, t: int) -> float:
        """Mean fare over requests created in [t - window + 1, t]."""
        hi = min(t + 1, self.sums.shape[0] - 1)
        lo = max(0, hi - self.window)
        n = self.counts[hi, grid] - self.counts[lo, grid]
        return float((self.sums[hi, grid] - self.sums[lo, grid]) / n) if n > 0 else 0.0

    def __call__(self, grid: int, t: int) -> float:
        return income_on_scale(self.mean_fare(grid, t), self.lo, self.hi, self.scale)


# --- survey data and the logistic fit -----------------------------------------

SURVEY_HEADER = ["rank", "income", "obedience", "accepted"]


@dataclass(frozen=True)
class SurveyRecord:
    rank: int
    income: float
    obedience: float
    accepted: int


def sample_survey(n: int, model: AcceptanceModel, rng, incomes=None):
    """Synthetic survey: uniform rank, one of 7 incomes in [6, 16], uniform obedience."""
    incomes = np.linspace(6.0, 16.0, 7) if incomes is None else np.asarray(incomes)
    r = rng.integers(1, 10, size=n)
    m = incomes[rng.integers(len(incomes), size=n)]
    o = rng.random(n)
    y = (rng.random(n) < acceptance_probability(model, r, m, o)).astype(np.int64)
    return [SurveyRecord(int(a), float(b), float(c), int(d)) for a, b, c, d in zip(r, m, o, y)]


def write_survey_csv(path, records):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SURVEY_HEADER)
        for rec in records:
            w.writerow([rec.rank, repr(rec.income), repr(rec.obedience), rec.accepted])


def read_survey_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SURVEY_HEADER:
            raise ValueError(f"{path}: expected header {','.join(SURVEY_HEADER)}")
        out = []
        for row in reader:
            rec = SurveyRecord(int(row["rank"]), float(row["income"]), float(row["obedience"]), int(row["accepted"]))
            if not (1 <= rec.rank <= 9 and 0.0 <= rec.obedience <= 1.0 and rec.accepted in (0, 1)):
                raise ValueError(f"{path}: out-of-range survey record {row}")
            out.append(rec)
    return out


class FitError(RuntimeError):
    pass


@dataclass(frozen=True)
class FitReport:
    b: float
    w_r: float
    w_m: float
    w_o: float
    se_b: float
    se_r: float
    se_m: float
    se_o: float
    accuracy: float
    auc: float
    iterations: int
    n: int

    def model(self) -> AcceptanceModel:
        return AcceptanceModel(self.b, self.w_r, self.w_m, self.w_o)

    def as_dict(self):
        return asdict(self)


def roc_auc(y, score) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    y = np.asarray(y)
    n1 = int(y.sum())
    n0 = len(y) - n1
    if n1 == 0 or n0 == 0:
        return float("nan")
    ranks = rankdata(score)
    return float((ranks[y == 1].sum() - n1 * (n1 + 1) / 2) / (n1 * n0))


def fit_acceptance_model(records, tol=1e-8, max_iter=100) -> tuple[AcceptanceModel, FitReport]:
    """Maximum-likelihood logistic fit of accept ~ rank + income + obedience by IRLS."""
    if len(records) < 50:
        raise FitError(f"need at least 50 survey records, got {len(records)}")
    X = np.array([[1.0, r.rank, r.income, r.obedience] for r in records])
    y = np.array([r.accepted for r in records], dtype=np.float64)
    if y.min() == y.max():
        raise FitError("complete separation: every record has the same response")
    beta = np.zeros(4)
    for it in range(1, max_iter + 1):
        eta = X @ beta
        p = 1.0 / (1.0 + np.exp(-eta))
        w = p * (1.0 - p)
        if w.min() < 1e-12 or np.abs(beta).max() > 50:
            raise FitError("separation: fitted probabilities reached 0 or 1")
        H = X.T @ (X * w[:, None])
        step = np.linalg.solve(H, X.T @ (y - p))
        beta = beta + step
        if np.abs(step).max() < tol:
            break
    else:
        raise FitError(f"IRLS did not converge within {max_iter} iterations")
    p = 1.0 / (1.0 + np.exp(-(X @ beta)))
    cov = np.linalg.inv(X.T @ (X * (p * (1 - p))[:, None]))
    se = np.sqrt(np.diag(cov))
    report = FitReport(*map(float, beta), *map(float, se),
                       accuracy=float(((p >= 0.5) == (y == 1)).mean()), auc=roc_auc(y, p),
                       iterations=it, n=len(records))
    return report.model(), report
