"""Tabular Q-Learning over a uniform tiling of the observation vector."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_generator, check_observations
from .env import ObservationFilter
from .errors import ConfigError, IoFailure, MemoryCapExceeded, SpecMismatch, StateSpaceTooLarge

DEFAULT_TEMP_WIDTH = 5.0
DEFAULT_HUMIDITY_WIDTH = 10.0
DEFAULT_MEMORY_CAP = 10**11

# Tiling ranges by variable kind. Zone-temperature edges fall on 18 degC at
# 2 degC tiles and on 27 degC at 5 degC tiles.
OUTDOOR_T_RANGE = (0.0, 40.0)
ZONE_T_RANGE = (12.0, 32.0)
OUTDOOR_H_RANGE = (10.0, 100.0)
ZONE_H_RANGE = (20.0, 80.0)
SETPOINT_WIDTH = 5.0
POWER_WIDTH = 20e3


@dataclass(frozen=True)
class TileCodingSpec:
    """Per-variable ``(lo, hi, width)`` bands; one tiling."""

    names: tuple
    lo: tuple
    hi: tuple
    width: tuple

    def __post_init__(self):
        for attr in ("names", "lo", "hi", "width"):
            object.__setattr__(self, attr, tuple(getattr(self, attr)))
        n = len(self.names)
        if not (len(self.lo) == len(self.hi) == len(self.width) == n):
            raise ConfigError("tile spec fields differ in length")
        for name, lo, hi, w in zip(self.names, self.lo, self.hi, self.width):
            if not lo < hi:
                raise ConfigError(f"tile range of {name} must satisfy lo < hi")
            if not w > 0:
                raise ConfigError(f"tile width of {name} must be > 0")
        counts = tuple(max(1, math.ceil((hi - lo) / w)) for lo, hi, w in zip(self.lo, self.hi, self.width))
        object.__setattr__(self, "bin_counts", counts)
        radix = []
        stride = 1
        for c in reversed(counts):
            radix.append(stride)
            stride *= c
        object.__setattr__(self, "strides", tuple(reversed(radix)))
        object.__setattr__(self, "n_states", stride)
        object.__setattr__(self, "_lo", np.array(self.lo, dtype=float))
        object.__setattr__(self, "_hi_eps", np.nextafter(np.array(self.hi, dtype=float), -np.inf))
        object.__setattr__(self, "_width", np.array(self.width, dtype=float))
        object.__setattr__(self, "_max_bin", np.array(counts) - 1)
        object.__setattr__(self, "_strides", np.array(self.strides, dtype=np.int64))

    def __len__(self):
        return len(self.names)

    def to_dict(self):
        return {"names": list(self.names), "lo": list(self.lo), "hi": list(self.hi), "width": list(self.width)}

    @classmethod
    def from_dict(cls, d):
        return cls(d["names"], d["lo"], d["hi"], d["width"])


def default_tile_spec(obs_spec, temp_width=DEFAULT_TEMP_WIDTH, humidity_width=DEFAULT_HUMIDITY_WIDTH):
    """Tiling for an :class:`~hvacrl.env.ObservationSpec`.

    Temperatures and humidities are tiled at the given widths. Wind and solar
    variables and the datacenter comfort proxies get a single tile each, so
    only the core thermal variables shape the state. Setpoints use 5 degC
    bands, electric power 20 kW bands, occupancy two bands.
    """
    names, lo, hi, width = [], [], [], []
    for v in obs_spec.variables:
        if v.kind == "temperature":
            rng = OUTDOOR_T_RANGE if v.name == "T_out" else ZONE_T_RANGE
            w = temp_width
        elif v.kind == "humidity":
            rng = OUTDOOR_H_RANGE if v.name == "H_out" else ZONE_H_RANGE
            w = humidity_width
        elif v.kind == "setpoint":
            rng, w = (v.lo, v.hi), SETPOINT_WIDTH
        elif v.kind == "power":
            rng, w = (v.lo, v.hi), POWER_WIDTH
        elif v.kind == "count":
            rng, w = (v.lo, v.hi), (v.hi - v.lo) / 2
        else:
            rng, w = (v.lo, v.hi), v.hi - v.lo
        names.append(v.name)
        lo.append(float(rng[0]))
        hi.append(float(rng[1]))
        width.append(float(w))
    return TileCodingSpec(names, lo, hi, width)


def encode(obs, spec):
    """Flat mixed-radix tile index of one observation (or an array of them)."""
    x = np.asarray(obs, dtype=float)
    if x.shape[-1] != len(spec):
        raise SpecMismatch(f"observation has {x.shape[-1]} variables, tile spec covers {len(spec)}")
    bins = bin_indices(x, spec)
    flat = bins @ spec._strides
    if flat.ndim == 0:
        return int(flat)
    return flat


def bin_indices(x, spec):
    clipped = np.minimum(np.maximum(x, spec._lo), spec._hi_eps)
    bins = np.floor((clipped - spec._lo) / spec._width).astype(np.int64)
    return np.minimum(bins, spec._max_bin)


def unflatten(flat, spec):
    out = []
    for stride, count in zip(spec.strides, spec.bin_counts):
        out.append((flat // stride) % count)
    return tuple(out)


def bin_centers(flat, spec):
    """Representative observation (band centres, clipped into range) for a flat index."""
    bins = np.array(unflatten(flat, spec), dtype=float)
    centers = spec._lo + (bins + 0.5) * spec._width
    return np.minimum(centers, spec._hi_eps)


def state_space_guard(spec, n_actions, cap):
    """Raise :class:`StateSpaceTooLarge` if a dense table would exceed ``cap`` entries."""
    size = spec.n_states * int(n_actions)
    if size > cap:
        raise StateSpaceTooLarge(
            f"{spec.n_states} tile states x {n_actions} actions = {size} entries exceeds cap {cap}"
        )
    return size


class TileCoder(TransformerMixin, BaseEstimator):
    """Maps observations to flat tile indices."""

    def __init__(self, spec=None):
        self.spec = spec

    def fit(self, X=None, y=None):
        if self.spec is None:
            raise ConfigError("TileCoder needs a TileCodingSpec")
        self.n_features_in_ = len(self.spec)
        self.n_states_ = self.spec.n_states
        return self

    def transform(self, X):
        check_is_fitted(self)
        return np.atleast_1d(encode(X, self.spec))


class QTable:
    """Sparse Q-function: one row of action values per visited tile state, zero elsewhere."""

    def __init__(self, n_actions=10, memory_cap=DEFAULT_MEMORY_CAP):
        self.n_actions = int(n_actions)
        self.memory_cap = memory_cap
        self.rows = {}
        self._zeros = [0.0] * self.n_actions

    def __len__(self):
        """Stored entries (rows times actions)."""
        return len(self.rows) * self.n_actions

    def row(self, s):
        return self.rows.get(s, self._zeros)

    def get(self, s, a):
        return self.row(s)[a]

    def set(self, s, a, value):
        if not math.isfinite(value):
            raise ConfigError(f"Q-value must be finite, got {value}")
        row = self.rows.get(s)
        if row is None:
            if len(self) + self.n_actions > self.memory_cap:
                raise MemoryCapExceeded(f"Q-table would exceed {self.memory_cap} entries")
            row = self.rows[s] = [0.0] * self.n_actions
        row[a] = value

    def max(self, s):
        return max(self.row(s))

    def greedy(self, s):
        row = self.row(s)
        return row.index(max(row))

    def items(self):
        for s in sorted(self.rows):
            for a, v in enumerate(self.rows[s]):
                yield s, a, v


def select_action(q, s, eps, rng):
    """Epsilon-greedy action; greedy ties go to the lowest index."""
    if not 0.0 <= eps <= 1.0:
        raise ConfigError(f"eps must lie in [0, 1], got {eps}")
    if rng.random() < eps:
        return int(rng.integers(q.n_actions))
    return q.greedy(s)


@dataclass(frozen=True)
class QLearningConfig:
    alpha: float = 1e-4
    gamma: float = 0.99
    eps_init: float = 1.0
    eps_rate: float = 0.12
    eps_final: float = 0.1
    eps_schedule: str = "linear"
    memory_cap: int = DEFAULT_MEMORY_CAP

    def __post_init__(self):
        # alpha = 0 is accepted as the degenerate no-learning case
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        for name in ("eps_init", "eps_rate", "eps_final"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.eps_final > self.eps_init:
            raise ConfigError("eps_final must not exceed eps_init")
        if self.eps_schedule not in ("linear", "exponential"):
            raise ConfigError(f"eps_schedule must be 'linear' or 'exponential', got {self.eps_schedule!r}")


def update(q, s, a, r, s_next, cfg, terminal=False):
    """One Q-Learning backup of ``Q(s, a)`` toward ``r + gamma * max_a' Q(s', a')``."""
    if not math.isfinite(r):
        raise ConfigError(f"reward must be finite, got {r}")
    target = r if terminal else r + cfg.gamma * q.max(s_next)
    old = q.get(s, a)
    new = old + cfg.alpha * (target - old)
    if new != old or s in q.rows:
        q.set(s, a, new)


def anneal_eps(episode, cfg):
    """Exploration rate for the given 0-based episode number."""
    if episode < 0:
        raise ConfigError("episode must be >= 0")
    if cfg.eps_schedule == "exponential":
        return max(cfg.eps_final, cfg.eps_init * (1.0 - cfg.eps_rate) ** episode)
    return max(cfg.eps_final, cfg.eps_init - cfg.eps_rate * episode)


class QLearningAgent(BaseEstimator):
    """Epsilon-greedy tabular Q-Learning on tile-coded observations.

    ``fit`` takes an :class:`~hvacrl.env.HVACEnv` and runs ``episodes``
    passes over its weather; ``predict`` maps full observation vectors to
    greedy actions.

    Parameters
    ----------
    alpha, gamma : float
        Learning rate and discount.
    eps_init, eps_rate, eps_final : float
        Per-episode exploration schedule.
    groups : tuple of str
        Observation groups fed to the tiling (``Env`` must be present).
    temp_width, humidity_width : float
        Tile widths in degC and % RH.
    memory_cap : int
        Largest admissible dense table (states x actions).
    """

    def __init__(self, alpha=1e-4, gamma=0.99, eps_init=1.0, eps_rate=0.12, eps_final=0.1,
                 eps_schedule="linear", episodes=50, groups=("Env",), temp_width=DEFAULT_TEMP_WIDTH,
                 humidity_width=DEFAULT_HUMIDITY_WIDTH, memory_cap=DEFAULT_MEMORY_CAP, random_state=None):
        self.alpha = alpha
        self.gamma = gamma
        self.eps_init = eps_init
        self.eps_rate = eps_rate
        self.eps_final = eps_final
        self.eps_schedule = eps_schedule
        self.episodes = episodes
        self.groups = groups
        self.temp_width = temp_width
        self.humidity_width = humidity_width
        self.memory_cap = memory_cap
        self.random_state = random_state

    def _config(self):
        return QLearningConfig(self.alpha, self.gamma, self.eps_init, self.eps_rate, self.eps_final,
                               self.eps_schedule, self.memory_cap)

    def _setup(self, obs_spec, n_actions):
        self.config_ = self._config()
        self.filter_ = ObservationFilter(obs_spec, tuple(self.groups)).fit()
        self.tile_spec_ = default_tile_spec(self.filter_.spec_, self.temp_width, self.humidity_width)
        self.n_states_ = state_space_guard(self.tile_spec_, n_actions, self.memory_cap) // n_actions
        self.q_table_ = QTable(n_actions, self.memory_cap)
        self.n_features_in_ = len(obs_spec)

    def fit(self, env, y=None):
        if self.episodes < 1:
            raise ConfigError(f"episodes must be >= 1, got {self.episodes}")
        rng = check_generator(self.random_state)
        self._setup(env.observation_spec, env.n_actions)
        cfg, q, spec, mask = self.config_, self.q_table_, self.tile_spec_, self.filter_.mask_
        self.episode_returns_ = []
        for episode in range(self.episodes):
            eps = anneal_eps(episode, cfg)
            obs = env.reset()
            s = encode(obs[mask], spec)
            total = 0.0
            while not env.done:
                a = select_action(q, s, eps, rng)
                result = env.step(a)
                s_next = encode(result.observation[mask], spec)
                update(q, s, a, result.reward, s_next, cfg)
                total += result.reward
                s = s_next
            self.episode_returns_.append(total / env.episode_length)
        return self

    def encode(self, X):
        check_is_fitted(self, "q_table_")
        X = np.asarray(X, dtype=float)
        return encode(self.filter_.transform(X), self.tile_spec_)

    def act(self, obs, eps=0.0, rng=None):
        s = self.encode(obs)
        if eps == 0.0:
            return self.q_table_.greedy(s)
        return select_action(self.q_table_, s, eps, check_generator(rng))

    def predict(self, X):
        check_is_fitted(self, "q_table_")
        X = check_observations(X, self.n_features_in_)
        states = np.atleast_1d(self.encode(X))
        return np.array([self.q_table_.greedy(int(s)) for s in states])

    def save(self, path):
        """Text artifact: a JSON header line, then ``flat_index,action,value`` rows."""
        check_is_fitted(self, "q_table_")
        header = {"tile_spec": self.tile_spec_.to_dict(), "n_actions": self.q_table_.n_actions,
                  "groups": list(self.groups), "params": self.get_params()}
        header["params"]["groups"] = list(self.groups)
        try:
            with open(path, "w") as fh:
                fh.write("# " + json.dumps(header, sort_keys=True) + "\n")
                fh.write("flat_index,action,value\n")
                for s, a, v in self.q_table_.items():
                    fh.write(f"{s},{a},{v!r}\n")
        except OSError as exc:
            raise IoFailure(f"cannot write Q-table to {path}: {exc}") from exc

    @classmethod
    def load(cls, path, obs_spec):
        try:
            lines = Path(path).read_text().splitlines()
        except OSError as exc:
            raise IoFailure(f"cannot read Q-table {path}: {exc}") from exc
        if not lines or not lines[0].startswith("# "):
            raise ConfigError(f"{path} is not a Q-table artifact")
        header = json.loads(lines[0][2:])
        params = header["params"]
        params["groups"] = tuple(params["groups"])
        agent = cls(**params)
        agent._setup(obs_spec, header["n_actions"])
        if agent.tile_spec_.to_dict() != header["tile_spec"]:
            raise SpecMismatch("stored tile spec does not match the observation spec")
        for line in lines[2:]:
            s, a, v = line.split(",")
            agent.q_table_.set(int(s), int(a), float(v))
        return agent
