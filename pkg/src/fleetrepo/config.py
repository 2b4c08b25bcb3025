"""Run configuration: dataclass sections read from and written to INI-style text."""
from __future__ import annotations

import configparser
import dataclasses
import io
from dataclasses import dataclass, field
from pathlib import Path

from .nn import digest
from .world import DemandSpec, GridMap, Hotspot

POLICIES = ("no_reposition", "random", "demand_greedy", "reward_greedy", "min_cost_flow",
            "proportional", "collective_preference", "dual_agent")


class ConfigError(ValueError):
    pass


@dataclass
class WorldConfig:
    width: int = 9
    height: int = 9
    cell_edge_km: float = 1.2
    steps: int = 144
    step_minutes: int = 10
    fleet: int = 50
    match_radius: int = 2


@dataclass
class DemandConfig:
    mode: str = "synthetic"
    csv_path: str = ""
    base_intensity: float = 0.01
    # "x:y:peak:spread" entries separated by ';'
    hotspots: str = "2:2:1.0:0.9;6:3:1.3:0.9;4:6:1.0:0.9"
    # time-of-day multipliers, spread evenly across the horizon
    profile: tuple = (0.3, 0.2, 0.2, 0.3, 0.6, 1.0, 1.2, 1.0, 0.9, 1.0, 1.1, 1.2)
    dest_scale: float = 3.0
    dest_hot_bias: float = 1.0
    fare_base: float = 2.5
    fare_per_grid: float = 1.0
    forecast: str = "historical"
    history_days: int = 7
    bucket_steps: int = 3


@dataclass
class DriverConfig:
    population_seed: int = 0
    w_home: tuple = (0.5, 2.0)
    w_hot: tuple = (0.0, 3.0)
    w_familiar: tuple = (0.0, 2.0)
    temperature: tuple = (0.5, 1.0)
    obedience: tuple = (0.0, 1.0)
    visit_prior: int = 200
    predictor: str = "frequency"
    predictor_path: str = ""
    freq_alpha: float = 1.0
    history_steps: int = 4
    income_window: int = 6
    survey_min: float = 6.0
    survey_max: float = 16.0
    acc_b: float = -1.31
    acc_w_r: float = -0.44
    acc_w_m: float = 0.29
    acc_w_o: float = 2.17
    acceptance_model_path: str = ""


@dataclass
class AgentConfig:
    n_max: int = 20
    hidden: int = 64
    lr: float = 1e-4
    alpha_b: float = 2.0
    alpha_p: float = 1.0
    gamma: float = 0.98
    entropy_beta: float = 0.01
    batch: int = 10
    buffer_capacity: int = 10000
    order_mode: str = "learned"
    order_temperature: float = 0.1
    pref_state: bool = True
    pref_reward: bool = True
    freeze_grid: bool = False
    freeze_vehicle: bool = False
    input_norm: bool = True
    gap_norm: bool = False


@dataclass
class RunSection:
    seed: int = 0
    policy: str = "dual_agent"
    episodes: int = 200
    checkpoint_every: int = 10
    eval_seeds: tuple = (1, 2, 3, 4, 5)
    init_checkpoint: str = ""


@dataclass
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    demand: DemandConfig = field(default_factory=DemandConfig)
    drivers: DriverConfig = field(default_factory=DriverConfig)
    agents: AgentConfig = field(default_factory=AgentConfig)
    run: RunSection = field(default_factory=RunSection)

    SECTIONS = ("world", "demand", "drivers", "agents", "run")
    # sections that change what a trained network means; [run] is excluded
    HASHED = ("world", "demand", "drivers", "agents")

    def validate(self):
        w, a, dm, dr = self.world, self.agents, self.demand, self.drivers
        if w.width < 3 or w.height < 3:
            raise ConfigError("world.width/world.height must be at least 3")
        if w.fleet < 1:
            raise ConfigError("world.fleet must be at least 1")
        if w.steps < 1 or w.match_radius < 0:
            raise ConfigError("world.steps must be >= 1 and world.match_radius >= 0")
        if not 0 < a.gamma < 1:
            raise ConfigError("agents.gamma must lie in (0, 1)")
        if a.alpha_b < 0 or a.alpha_p < 0:
            raise ConfigError("agents.alpha_b and agents.alpha_p must be nonnegative")
        if a.n_max < 1 or a.batch < 1 or a.buffer_capacity < a.batch:
            raise ConfigError("agents.n_max, agents.batch must be >= 1 and buffer_capacity >= batch")
        if a.order_mode not in ("learned", "fixed", "random", "joint"):
            raise ConfigError(f"agents.order_mode: unknown mode {a.order_mode!r}")
        if a.order_temperature <= 0 or a.lr <= 0:
            raise ConfigError("agents.order_temperature and agents.lr must be positive")
        if dm.mode not in ("synthetic", "csv"):
            raise ConfigError(f"demand.mode: unknown mode {dm.mode!r}")
        if dm.forecast not in ("oracle", "historical"):
            raise ConfigError(f"demand.forecast: unknown mode {dm.forecast!r}")
        if dm.mode == "csv" and dm.forecast == "oracle":
            raise ConfigError("demand.forecast=oracle needs synthetic demand")
        if dr.predictor not in ("frequency", "recurrent", "oracle"):
            raise ConfigError(f"drivers.predictor: unknown kind {dr.predictor!r}")
        if dr.predictor == "recurrent" and not dr.predictor_path:
            raise ConfigError("drivers.predictor_path is required for the recurrent predictor")
        if self.run.policy not in POLICIES:
            raise ConfigError(f"run.policy: unknown policy {self.run.policy!r}")
        for lo, hi, name in (dr.w_home + ("w_home",), dr.w_hot + ("w_hot",), dr.w_familiar + ("w_familiar",),
                             dr.temperature + ("temperature",), dr.obedience + ("obedience",)):
            if lo > hi:
                raise ConfigError(f"drivers.{name}: lower bound exceeds upper bound")
        if dr.temperature[0] <= 0:
            raise ConfigError("drivers.temperature must be positive")
        if not (0 <= dr.obedience[0] and dr.obedience[1] <= 1):
            raise ConfigError("drivers.obedience must lie in [0, 1]")
        for p in (dm.csv_path if dm.mode == "csv" else "", dr.predictor_path, dr.acceptance_model_path,
                  self.run.init_checkpoint):
            if p and not Path(p).exists():
                raise ConfigError(f"referenced file does not exist: {p}")
        try:
            self.demand_spec().validate()
        except ValueError as exc:
            raise ConfigError(f"demand: {exc}") from None
        return self

    def grid_map(self) -> GridMap:
        return GridMap(self.world.width, self.world.height, self.world.cell_edge_km)

    def demand_spec(self) -> DemandSpec:
        d = self.demand
        return DemandSpec(d.base_intensity, parse_hotspots(d.hotspots), list(d.profile), d.dest_scale,
                          d.dest_hot_bias, d.fare_base, d.fare_per_grid)

    def to_text(self, sections=None) -> str:
        cp = configparser.ConfigParser()
        for name in sections or self.SECTIONS:
            sec = getattr(self, name)
            cp[name] = {f.name: _format(getattr(sec, f.name)) for f in dataclasses.fields(sec)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    def hash(self) -> str:
        return digest(self.to_text(self.HASHED))

    def replace(self, **sections):
        """Copy with per-section overrides, e.g. ``cfg.replace(agents={"lr": 1e-3})``."""
        out = {}
        for name in self.SECTIONS:
            sec = getattr(self, name)
            out[name] = dataclasses.replace(sec, **sections.get(name, {}))
        return RunConfig(**out)


def parse_hotspots(text: str) -> list[Hotspot]:
    out = []
    for chunk in filter(None, (c.strip() for c in text.split(";"))):
        try:
            x, y, peak, spread = chunk.split(":")
            out.append(Hotspot(int(x), int(y), float(peak), float(spread)))
        except ValueError:
            raise ConfigError(f"demand.hotspots: cannot parse {chunk!r} (want x:y:peak:spread)") from None
    return out


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse(text: str, default, key: str):
    try:
        if isinstance(default, bool):
            low = text.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(text)
            return low in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [s.strip() for s in text.split(",") if s.strip()]
            kind = type(default[0]) if default else float
            return tuple(kind(s) if kind is not float else float(s) for s in items)
        return text.strip()
    except ValueError:
        raise ConfigError(f"{key}: cannot parse value {text!r}") from None


def parse_config(text: str) -> RunConfig:
    cp = configparser.ConfigParser()
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}".splitlines()[0]) from None
    cfg = RunConfig()
    for name in cp.sections():
        if name not in RunConfig.SECTIONS:
            raise ConfigError(f"unknown config section [{name}]")
        sec = getattr(cfg, name)
        known = {f.name: f for f in dataclasses.fields(sec)}
        for key, raw in cp[name].items():
            if key not in known:
                raise ConfigError(f"unknown config key {name}.{key}")
            setattr(sec, key, _parse(raw, getattr(sec, key), f"{name}.{key}"))
    return cfg


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text(encoding="utf-8")).validate()
