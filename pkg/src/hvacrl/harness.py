"""Training and evaluation protocol, ablation suites and result files."""
from __future__ import annotations

import csv
import dataclasses
import functools
import hashlib
import io
import json
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dqn import DQNAgent
from .env import GROUPS, RewardParams, make_env
from .errors import ConfigError, IoFailure
from .tabular import QLearningAgent
from .weather import load_weather, split

AGENTS = ("fixed", "random", "qlearning", "dqn")
DEFAULT_GROUPS = {"qlearning": ("Env",), "dqn": GROUPS, "fixed": GROUPS, "random": GROUPS}
OBS_ABLATION_SETS = {
    "qlearning": (("Env",), ("Env", "Energy")),
    "dqn": (("Env",), ("Env", "Energy"), ("Env", "Energy", "Action"), GROUPS),
}
REWARD_WEIGHTS = (0.25, 0.5, 0.75)
TILE_WIDTHS = ((5.0, 10.0), (2.0, 4.0))

CSV_COLUMNS = ("config_hash", "agent", "building", "omega", "groups", "temp_width", "seed",
               "energy_kwh", "violation_pct")

# (description) per config field, used for the generated schema and CLI help
FIELD_DOCS = {
    "building": "building model: warehouse | datacenter",
    "weather": "weather source: synthetic:hot | synthetic:cool | path to an EPW file",
    "weather_seed": "seed of the synthetic weather generator (independent of the experiment seed)",
    "weather_hours": "length of a synthetic weather series in hours",
    "agent": "controller: fixed | random | qlearning | dqn",
    "episodes": "training passes over the training weather segment",
    "seed": "experiment seed; agent and environment streams are derived from it",
    "split_fraction": "chronological share of weather hours used for training",
    "dt": "control timestep in seconds",
    "reward": "reward parameters: omega, lambda_p, lambda_t, t_min, t_max, penalty",
    "groups": "observation groups seen by the agent (null picks the agent default)",
    "temp_width": "temperature tile width in degC (qlearning)",
    "humidity_width": "humidity tile width in % RH (qlearning)",
    "agent_params": "extra estimator parameters passed to the agent constructor",
    "fixed_action": "action index used by the fixed agent",
    "building_overrides": "per-zone parameter overrides, {zone: {param: value}} or {interzone: {a-b: W/K}}",
    "output_dir": "output root for results (HVACRL_OUT or ./runs when empty)",
}


@dataclass(frozen=True)
class ExperimentConfig:
    building: str = "warehouse"
    weather: str = "synthetic:hot"
    weather_seed: int = 0
    weather_hours: int = 8760
    agent: str = "qlearning"
    episodes: int = 50
    seed: int = 0
    split_fraction: float = 0.8
    dt: float = 900.0
    reward: RewardParams = field(default_factory=RewardParams)
    groups: tuple | None = None
    temp_width: float = 5.0
    humidity_width: float = 10.0
    agent_params: dict = field(default_factory=dict)
    fixed_action: int = 7
    building_overrides: dict = field(default_factory=dict)
    output_dir: str = ""

    def __post_init__(self):
        if self.agent not in AGENTS:
            raise ConfigError(f"agent must be one of {AGENTS}, got {self.agent!r}")
        if isinstance(self.episodes, bool) or not isinstance(self.episodes, int) or self.episodes < 1:
            raise ConfigError(f"episodes must be an integer >= 1, got {self.episodes!r}")
        if isinstance(self.fixed_action, bool) or self.fixed_action not in range(10):
            raise ConfigError(f"fixed_action must be an integer in [0, 9], got {self.fixed_action!r}")
        if not 0.0 < self.split_fraction < 1.0:
            raise ConfigError(f"split_fraction must lie in (0, 1), got {self.split_fraction}")
        if self.temp_width <= 0 or self.humidity_width <= 0:
            raise ConfigError("tile widths must be > 0")
        if isinstance(self.reward, dict):
            object.__setattr__(self, "reward", _strict(RewardParams, self.reward, "reward"))
        if self.groups is not None:
            groups = tuple(self.groups)
            if "Env" not in groups or set(groups) - set(GROUPS):
                raise ConfigError(f"groups must include Env and come from {GROUPS}, got {groups}")
            object.__setattr__(self, "groups", tuple(g for g in GROUPS if g in groups))

    @property
    def observation_groups(self):
        return self.groups if self.groups is not None else DEFAULT_GROUPS[self.agent]

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["groups"] = list(self.groups) if self.groups is not None else None
        return d

    def snapshot(self):
        """Config as stored in results: output location stripped, groups resolved."""
        d = self.to_dict()
        d.pop("output_dir")
        d["groups"] = list(self.observation_groups)
        return d

    def config_hash(self):
        blob = json.dumps(self.snapshot(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @classmethod
    def from_dict(cls, d):
        return _strict(cls, d, "config")


def _strict(cls, d, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown {where} key(s): {sorted(unknown)}")
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def config_schema():
    """Every config field with its default and meaning."""
    defaults = ExperimentConfig().to_dict()
    fields = {}
    for name, doc in FIELD_DOCS.items():
        fields[name] = {"default": defaults[name], "description": doc}
    return {"title": "hvacrl experiment config", "unknown_keys": "rejected", "fields": fields}


@dataclass(frozen=True)
class Metrics:
    energy_kwh: float
    violation_pct: float
    mean_eval_reward: float
    episode_returns: tuple = ()

    def __post_init__(self):
        if self.energy_kwh < 0:
            raise ConfigError("energy_kwh must be >= 0")
        if not 0.0 <= self.violation_pct <= 100.0:
            raise ConfigError("violation_pct must lie in [0, 100]")

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["episode_returns"] = list(self.episode_returns)
        return d


@dataclass(frozen=True)
class ResultRecord:
    config: dict
    metrics: Metrics
    seed: int
    code_version: str = __version__
    extras: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0

    @property
    def config_hash(self):
        return ExperimentConfig.from_dict(self.config).config_hash()

    @property
    def run_name(self):
        return f"{self.config['agent']}-{self.config['building']}-{self.config_hash}"

    def to_dict(self):
        """Deterministic content; wall-clock is written separately."""
        return {"run": self.run_name, "config_hash": self.config_hash, "config": self.config,
                "metrics": self.metrics.to_dict(), "seed": self.seed,
                "code_version": self.code_version, "extras": self.extras}


def energy_kwh(powers, dt):
    return float(np.sum(powers) * dt / 3.6e6)


def violation_pct(violating_steps, total_steps):
    return 100.0 * violating_steps / total_steps


def derive_seeds(seed):
    """Independent integer seeds for (agent, training env, evaluation env)."""
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(int(c.generate_state(1)[0]) for c in children)


@functools.lru_cache(maxsize=8)
def _weather(source, seed, hours, fraction):
    return split(load_weather(source, seed=seed, hours=hours), fraction)


def weather_split(cfg):
    return _weather(cfg.weather, cfg.weather_seed, cfg.weather_hours, cfg.split_fraction)


def make_train_env(cfg):
    _, env_seed, _ = derive_seeds(cfg.seed)
    return make_env(cfg.building, weather_split(cfg).train, cfg.reward, cfg.dt, env_seed,
                    cfg.building_overrides or None)


def make_eval_env(cfg):
    _, _, env_seed = derive_seeds(cfg.seed)
    return make_env(cfg.building, weather_split(cfg).eval, cfg.reward, cfg.dt, env_seed,
                    cfg.building_overrides or None)


class FixedAgent:
    def __init__(self, action=7):
        self.action = action

    def act(self, obs):
        return self.action


class RandomAgent:
    def __init__(self, n_actions=10, random_state=None):
        self.rng = np.random.default_rng(random_state)
        self.n_actions = n_actions

    def act(self, obs):
        return int(self.rng.integers(self.n_actions))


def make_agent(cfg):
    agent_seed, _, _ = derive_seeds(cfg.seed)
    groups = cfg.observation_groups
    if cfg.agent == "qlearning":
        agent = QLearningAgent(episodes=cfg.episodes, groups=groups, temp_width=cfg.temp_width,
                               humidity_width=cfg.humidity_width, random_state=agent_seed)
    elif cfg.agent == "dqn":
        agent = DQNAgent(episodes=cfg.episodes, groups=groups, random_state=agent_seed)
    elif cfg.agent == "fixed":
        return FixedAgent(cfg.fixed_action)
    else:
        return RandomAgent(random_state=agent_seed)
    if cfg.agent_params:
        try:
            agent.set_params(**cfg.agent_params)
        except ValueError as exc:
            raise ConfigError(f"invalid agent_params: {exc}") from exc
    return agent


def artifact_suffix(agent_name):
    return {"qlearning": ".qtable.csv", "dqn": ".dqn.bin"}[agent_name]


def train(cfg, artifact_path=None):
    """Fit the configured learning agent on the training weather segment."""
    if cfg.agent not in ("qlearning", "dqn"):
        raise ConfigError(f"only qlearning and dqn agents are trained, got {cfg.agent!r}")
    agent = make_agent(cfg)
    agent.fit(make_train_env(cfg))
    if artifact_path is not None:
        agent.save(artifact_path)
    return agent, list(agent.episode_returns_)


def load_agent(path, cfg):
    spec = make_eval_env(cfg).observation_spec
    if cfg.agent == "qlearning":
        return QLearningAgent.load(path, spec)
    if cfg.agent == "dqn":
        return DQNAgent.load(path, spec)
    raise ConfigError(f"agent {cfg.agent!r} has no artifact")


def evaluate(agent, cfg, episode_returns=()):
    """One greedy pass over the evaluation weather segment."""
    env = make_eval_env(cfg)
    obs = env.reset()
    powers = np.empty(env.episode_length)
    violating = 0
    total_reward = 0.0
    for t in range(env.episode_length):
        result = env.step(agent.act(obs))
        powers[t] = result.info["p_total"]
        violating += any(result.info["violations"])
        total_reward += result.reward
        obs = result.observation
    return Metrics(energy_kwh(powers, env.dt), violation_pct(violating, env.episode_length),
                   total_reward / env.episode_length, tuple(episode_returns))


def run_fixed_baseline(cfg):
    return evaluate(FixedAgent(cfg.fixed_action), cfg)


def run(cfg, artifact_dir=None):
    """Execute one config end to end and return its :class:`ResultRecord`."""
    start = time.perf_counter()
    extras = {"observation_groups": list(cfg.observation_groups)}
    if cfg.agent in ("qlearning", "dqn"):
        path = None
        if artifact_dir is not None:
            Path(artifact_dir).mkdir(parents=True, exist_ok=True)
            path = Path(artifact_dir) / (f"{cfg.agent}-{cfg.building}-{cfg.config_hash()}"
                                         + artifact_suffix(cfg.agent))
        agent, returns = train(cfg, path)
        metrics = evaluate(agent, cfg, returns)
        if cfg.agent == "qlearning":
            extras["n_states"] = int(agent.n_states_)
            extras["q_entries"] = len(agent.q_table_)
    else:
        metrics = evaluate(make_agent(cfg), cfg)
    return ResultRecord(cfg.snapshot(), metrics, cfg.seed, extras=extras,
                        wall_clock_s=time.perf_counter() - start)


def _run_packed(args):
    cfg, artifact_dir = args
    return run(cfg, artifact_dir)


def run_many(configs, jobs=1, artifact_dir=None):
    """Run configs in order, optionally over a process pool; results keep the input order."""
    configs = list(configs)
    if jobs <= 1 or len(configs) <= 1:
        return [run(c, artifact_dir) for c in configs]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_packed, [(c, artifact_dir) for c in configs]))


def _seeds(cfg, seeds):
    return tuple(seeds) if seeds else (cfg.seed,)


def observation_configs(cfg, seeds=None):
    agent = cfg.agent if cfg.agent in OBS_ABLATION_SETS else "dqn"
    return [cfg.replace(agent=agent, groups=g, seed=s)
            for g in OBS_ABLATION_SETS[agent] for s in _seeds(cfg, seeds)]


def reward_configs(cfg, seeds=None):
    return [cfg.replace(agent="dqn", reward=dataclasses.replace(cfg.reward, omega=w), seed=s)
            for w in REWARD_WEIGHTS for s in _seeds(cfg, seeds)]


def tile_configs(cfg, seeds=None):
    return [cfg.replace(agent="qlearning", groups=("Env",), temp_width=tw, humidity_width=hw, seed=s)
            for tw, hw in TILE_WIDTHS for s in _seeds(cfg, seeds)]


def ablate_observations(cfg, seeds=None, jobs=1, artifact_dir=None):
    """Grow the observation from Env alone; qlearning stops at the pair its table can hold."""
    return run_many(observation_configs(cfg, seeds), jobs, artifact_dir)


def ablate_reward_weights(cfg, seeds=None, jobs=1, artifact_dir=None):
    """DQN at omega = 0.25, 0.5, 0.75."""
    return run_many(reward_configs(cfg, seeds), jobs, artifact_dir)


def ablate_tile_density(cfg, seeds=None, jobs=1, artifact_dir=None):
    """Q-Learning on Env at 5 and 2 degC tiles (humidity 10 and 4 %)."""
    return run_many(tile_configs(cfg, seeds), jobs, artifact_dir)


SUITES = {"obs": ablate_observations, "reward": ablate_reward_weights, "tiles": ablate_tile_density}


def csv_row(record):
    c = record.config
    return {"config_hash": record.config_hash, "agent": c["agent"], "building": c["building"],
            "omega": repr(c["reward"]["omega"]), "groups": "+".join(c["groups"]),
            "temp_width": repr(c["temp_width"]), "seed": str(record.seed),
            "energy_kwh": repr(record.metrics.energy_kwh),
            "violation_pct": repr(record.metrics.violation_pct)}


def _write(path, text):
    try:
        path.write_text(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_results(records, directory):
    """Write results.csv, results.json, timing.json and one curve CSV per run."""
    directory = Path(directory)
    try:
        (directory / "curves").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {directory}: {exc}") from exc
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for rec in records:
        writer.writerow(csv_row(rec))
    _write(directory / "results.csv", buf.getvalue())
    _write(directory / "results.json",
           json.dumps([r.to_dict() for r in records], sort_keys=True, indent=2) + "\n")
    _write(directory / "timing.json",
           json.dumps({r.run_name: r.wall_clock_s for r in records}, sort_keys=True, indent=2) + "\n")
    for rec in records:
        lines = ["episode,mean_reward"]
        lines += [f"{i},{v!r}" for i, v in enumerate(rec.metrics.episode_returns)]
        _write(directory / "curves" / f"{rec.run_name}.csv", "\n".join(lines) + "\n")
    return directory


def read_records(path):
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise IoFailure(f"cannot read results from {path}: {exc}") from exc
    return [ResultRecord(d["config"], Metrics(**{**d["metrics"],
                                                  "episode_returns": tuple(d["metrics"]["episode_returns"])}),
                         d["seed"], d["code_version"], d["extras"]) for d in data]


REPORT_KEYS = ("agent", "building", "omega", "groups", "temp_width")


def aggregate(rows):
    """Median energy and violation per (agent, building, omega, groups, temp_width)."""
    groups = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in REPORT_KEYS), []).append(row)
    table = []
    for key in sorted(groups):
        members = groups[key]
        table.append({**dict(zip(REPORT_KEYS, key)),
                      "n_seeds": len(members),
                      "energy_kwh": statistics.median(float(r["energy_kwh"]) for r in members),
                      "violation_pct": statistics.median(float(r["violation_pct"]) for r in members)})
    return table


def median_metrics(records):
    """``(median energy_kwh, median violation_pct)`` over records."""
    return (statistics.median(r.metrics.energy_kwh for r in records),
            statistics.median(r.metrics.violation_pct for r in records))
