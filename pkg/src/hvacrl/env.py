"""Setpoint-control MDP over the thermal simulator.

Observations follow the warehouse (19 variables) and datacenter (25
variables) layouts, actions index a fixed table of ten setpoint
combinations, and the reward trades electric power against comfort-band
violations.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import thermal
from .errors import (
    ActionOutOfRange,
    ConfigError,
    EmptyWeather,
    EnvGroupMissing,
    EpisodeFinished,
)
from .weather import sample_values

GROUPS = ("Env", "Energy", "Action", "Aux")
DEFAULT_DT = 900.0
INITIAL_ACTION = 5


@dataclass(frozen=True)
class ActionTable:
    entries: tuple

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if len(self.entries) != 10:
            raise ConfigError(f"an action table has exactly 10 entries, got {len(self.entries)}")

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, a):
        return decode_action(self, a)


def _cmd(*pairs):
    return thermal.SetpointCommand([p[0] for p in pairs], [p[1] for p in pairs])


# (office hs, office cs, fine-storage hs, fine-storage cs, bulk-storage hs)
WAREHOUSE_SETPOINTS = (
    (15, 30, 15, 30, 15),
    (16, 29, 16, 29, 16),
    (17, 28, 17, 28, 17),
    (18, 27, 18, 27, 18),
    (19, 26, 19, 26, 19),
    (20, 25, 20, 25, 20),
    (21, 24, 21, 24, 21),
    (22, 23, 22, 23, 22),
    (22, 22, 22, 22, 23),
    (21, 21, 21, 21, 24),
)
# (west hs, west cs, east hs, east cs)
DATACENTER_SETPOINTS = (
    (15, 30, 15, 30),
    (16, 29, 16, 29),
    (17, 28, 17, 28),
    (18, 27, 18, 27),
    (19, 26, 19, 26),
    (20, 25, 20, 25),
    (21, 24, 21, 24),
    (22, 23, 22, 23),
    (22, 22, 22, 22),
    (21, 21, 21, 21),
)

WAREHOUSE_ACTIONS = ActionTable(
    tuple(_cmd((o_h, o_c), (f_h, f_c), (b_h, None)) for o_h, o_c, f_h, f_c, b_h in WAREHOUSE_SETPOINTS)
)
DATACENTER_ACTIONS = ActionTable(
    tuple(_cmd((w_h, w_c), (e_h, e_c)) for w_h, w_c, e_h, e_c in DATACENTER_SETPOINTS)
)


def decode_action(table, a):
    """Setpoint command for action index ``a``."""
    if isinstance(a, (bool, np.bool_)) or not isinstance(a, (int, np.integer)):
        raise ActionOutOfRange(f"action must be an integer, got {a!r}")
    if not 0 <= a < len(table.entries):
        raise ActionOutOfRange(f"action {a} outside [0, {len(table.entries) - 1}]")
    return table.entries[int(a)]


class Variable(NamedTuple):
    name: str
    unit: str
    group: str
    lo: float
    hi: float
    kind: str  # temperature | humidity | wind_speed | wind_direction | radiation | setpoint | power | count | clothing | percent


@dataclass(frozen=True)
class ObservationSpec:
    variables: tuple

    def __post_init__(self):
        variables = tuple(Variable(*v) for v in self.variables)
        object.__setattr__(self, "variables", variables)
        names = [v.name for v in variables]
        if len(set(names)) != len(names):
            raise ConfigError("observation variable names must be unique")
        for v in variables:
            if v.group not in GROUPS:
                raise ConfigError(f"unknown group {v.group!r} for {v.name}")
            if not v.lo < v.hi:
                raise ConfigError(f"normalization range of {v.name} must satisfy lo < hi")

    def __len__(self):
        return len(self.variables)

    @property
    def names(self):
        return [v.name for v in self.variables]

    @property
    def lo(self):
        return np.array([v.lo for v in self.variables])

    @property
    def hi(self):
        return np.array([v.hi for v in self.variables])

    def index(self, name):
        return self.names.index(name)

    def mask(self, groups):
        return np.array([v.group in groups for v in self.variables])

    def subset(self, groups):
        return ObservationSpec(tuple(v for v in self.variables if v.group in groups))


_OUTDOOR = (
    Variable("T_out", "C", "Env", -20.0, 50.0, "temperature"),
    Variable("H_out", "%", "Env", 0.0, 100.0, "humidity"),
    Variable("V_out", "m/s", "Env", 0.0, 20.0, "wind_speed"),
    Variable("W_out", "deg", "Env", 0.0, 360.0, "wind_direction"),
    Variable("S_diffuse", "W/m2", "Env", 0.0, 500.0, "radiation"),
    Variable("S_direct", "W/m2", "Env", 0.0, 1100.0, "radiation"),
)
_ZONE_T = (5.0, 45.0)
_SETPOINT = (15.0, 30.0)


def _power_range(model):
    p_max = 0.0
    for z in model.zones:
        p_max += max(z.heat_capacity / z.cop_heat, z.cool_capacity / z.cop_cool) + thermal.FAN_POWER
    return (0.0, p_max)


def warehouse_spec(model):
    people = max(getattr(model.occupancy_schedule[0], "people", 1), 1)
    return ObservationSpec(
        _OUTDOOR
        + (
            Variable("T_office_hs", "C", "Action", *_SETPOINT, "setpoint"),
            Variable("T_office_cs", "C", "Action", *_SETPOINT, "setpoint"),
            Variable("T_office", "C", "Env", *_ZONE_T, "temperature"),
            Variable("H_office", "%", "Env", 0.0, 100.0, "humidity"),
            Variable("C_office", "people", "Aux", 0.0, float(people), "count"),
            Variable("T_fs_hs", "C", "Action", *_SETPOINT, "setpoint"),
            Variable("T_fs_cs", "C", "Action", *_SETPOINT, "setpoint"),
            Variable("T_fs", "C", "Env", *_ZONE_T, "temperature"),
            Variable("H_fs", "%", "Env", 0.0, 100.0, "humidity"),
            Variable("T_bs_hs", "C", "Action", *_SETPOINT, "setpoint"),
            Variable("T_bs", "C", "Env", *_ZONE_T, "temperature"),
            Variable("H_bs", "%", "Env", 0.0, 100.0, "humidity"),
            Variable("P_total", "W", "Energy", *_power_range(model), "power"),
        )
    )


def datacenter_spec(model):
    variables = list(_OUTDOOR)
    for i, tag in enumerate(("wz", "ez")):
        sched = model.occupancy_schedule[i]
        people = max(getattr(sched, "people", 1), 1)
        variables += [
            Variable(f"T_{tag}_hs", "C", "Action", *_SETPOINT, "setpoint"),
            Variable(f"T_{tag}_cs", "C", "Action", *_SETPOINT, "setpoint"),
            Variable(f"T_{tag}", "C", "Env", *_ZONE_T, "temperature"),
            Variable(f"T_{tag}_cmr", "C", "Aux", *_ZONE_T, "temperature"),
            Variable(f"H_{tag}", "%", "Env", 0.0, 100.0, "humidity"),
            Variable(f"T_{tag}_ccv", "clo", "Aux", 0.0, 2.0, "clothing"),
            Variable(f"T_{tag}_cfm", "%", "Aux", 0.0, 100.0, "percent"),
            Variable(f"C_{tag}", "people", "Aux", 0.0, float(people), "count"),
            Variable(f"T_{tag}_pa", "C", "Aux", *_ZONE_T, "temperature"),
        ]
    variables.append(Variable("P_total", "W", "Energy", *_power_range(model), "power"))
    return ObservationSpec(tuple(variables))


@dataclass(frozen=True)
class RewardParams:
    """Weights of the energy/comfort reward.

    ``penalty="literal"`` charges ``|T - t_max| + |T - t_min|`` for a zone
    outside the comfort band; ``penalty="distance"`` charges only the
    distance to the nearest band edge.
    """

    omega: float = 0.5
    lambda_p: float = 1e-4
    lambda_t: float = 1.0
    t_min: float = 18.0
    t_max: float = 27.0
    penalty: str = "literal"

    def __post_init__(self):
        if not 0.0 <= self.omega <= 1.0:
            raise ConfigError(f"omega must lie in [0, 1], got {self.omega}")
        if not self.t_min < self.t_max:
            raise ConfigError("t_min must be below t_max")
        if self.lambda_p <= 0 or self.lambda_t <= 0:
            raise ConfigError("lambda_p and lambda_t must be > 0")
        if self.penalty not in ("literal", "distance"):
            raise ConfigError(f"penalty must be 'literal' or 'distance', got {self.penalty!r}")


def comfort_violation(temp, params):
    if params.t_min <= temp <= params.t_max:
        return 0.0
    if params.penalty == "distance":
        return params.t_min - temp if temp < params.t_min else temp - params.t_max
    return abs(temp - params.t_max) + abs(temp - params.t_min)


def reward(p_total, zone_temps, params):
    """Nonpositive step reward for electric power ``p_total`` (W) and the zone temperatures."""
    violation = sum(comfort_violation(t, params) for t in zone_temps)
    return -params.omega * params.lambda_p * p_total - (1.0 - params.omega) * params.lambda_t * violation


@dataclass(frozen=True)
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict = field(default_factory=dict)


class HVACEnv:
    """Discrete-action setpoint environment.

    One episode is a single pass over ``weather`` with stride ``dt``;
    :meth:`reset` draws fresh initial zone temperatures from the
    environment's own seeded generator.
    """

    def __init__(self, building, model, actions, spec, weather, reward_params, dt=DEFAULT_DT, seed=0):
        if weather is None or len(weather) < 2:
            raise EmptyWeather("the environment needs a weather series with at least 2 hours")
        if not dt > 0:
            raise ConfigError(f"dt must be > 0, got {dt}")
        self.building = building
        self.model = model
        self.action_table = actions
        self.observation_spec = spec
        self.weather = weather
        self.reward_params = reward_params
        self.dt = float(dt)
        self.seed = seed
        self.episode_length = int(math.floor(3600.0 * (len(weather) - 1) / self.dt))
        if self.episode_length < 1:
            raise EmptyWeather("the weather series is shorter than one step")
        self._rng = np.random.default_rng(seed)
        self._layout = self._compile_layout()
        self.reset()

    @property
    def n_actions(self):
        return len(self.action_table)

    @property
    def n_zones(self):
        return self.model.n_zones

    def reset(self):
        n = self.model.n_zones
        temps = self._rng.uniform(18.0, 24.0, n)
        h_out = float(self.weather.h_out[0])
        self.state = thermal.BuildingState(temps, [h_out] * n)
        self.steps = 0
        self.last_action = INITIAL_ACTION
        self.last_power = 0.0
        self._cmd = self.action_table.entries[INITIAL_ACTION]
        self._outdoor = sample_values(self.weather, 0.0)
        return self.observe()

    @property
    def done(self):
        return self.steps >= self.episode_length

    def hour_of_week(self):
        return (self.weather.start_hour + int(self.state.sim_time // 3600)) % 168

    def _compile_layout(self):
        # (source, index) for each observation slot
        layout = []
        names = self.observation_spec.names
        zone_tags = ZONE_TAGS[self.building]
        for name in names:
            if name in _OUTDOOR_INDEX:
                layout.append(("out", _OUTDOOR_INDEX[name]))
            elif name == "P_total":
                layout.append(("power", 0))
            else:
                kind, tag, suffix = _parse_zone_var(name)
                z = zone_tags.index(tag)
                layout.append((kind + suffix, z))
        return layout

    def observe(self):
        """Observation vector in :attr:`observation_spec` order."""
        temps = self.state.zone_temps
        rh = self.state.zone_rh
        occ = self.model.occupancy(self.hour_of_week())
        cmd = self._cmd
        out = np.empty(len(self._layout))
        for i, (src, z) in enumerate(self._layout):
            if src == "out":
                v = self._outdoor[z]
            elif src == "power":
                v = self.last_power
            elif src in ("T", "T_cmr", "T_pa"):
                v = temps[z]
            elif src == "H":
                v = rh[z]
            elif src == "T_hs":
                v = cmd.heating[z]
            elif src == "T_cs":
                v = cmd.cooling[z]
            elif src == "C":
                v = occ[z]
            elif src == "T_ccv":
                v = 0.5
            elif src == "T_cfm":
                v = min(max(100.0 * abs(temps[z] - 23.0) / 10.0, 0.0), 100.0)
            else:  # pragma: no cover - layout is compiled from known names
                raise ConfigError(f"unknown observation source {src}")
            out[i] = v
        return out

    def step(self, a):
        if self.done:
            raise EpisodeFinished(f"episode finished after {self.episode_length} steps; call reset()")
        cmd = decode_action(self.action_table, a)
        outdoor = sample_values(self.weather, self.state.sim_time)
        record = _Outdoor(outdoor[0], outdoor[1])
        self.state, p_total = thermal.step(
            self.model, self.state, record, cmd, self.dt, hour_offset=self.weather.start_hour
        )
        self.steps += 1
        self.last_action = int(a)
        self.last_power = p_total
        self._cmd = cmd
        t_next = min(self.state.sim_time, 3600.0 * (len(self.weather) - 1))
        self._outdoor = sample_values(self.weather, t_next)
        r = reward(p_total, self.state.zone_temps, self.reward_params)
        p = self.reward_params
        violations = tuple(not (p.t_min <= t <= p.t_max) for t in self.state.zone_temps)
        info = {"p_total": p_total, "violations": violations, "sim_time": self.state.sim_time}
        return StepResult(self.observe(), r, self.done, info)


class _Outdoor(NamedTuple):
    t_out: float
    h_out: float


_OUTDOOR_INDEX = {v.name: i for i, v in enumerate(_OUTDOOR)}
ZONE_TAGS = {"warehouse": ("office", "fs", "bs"), "datacenter": ("wz", "ez")}


def _parse_zone_var(name):
    # "T_office_hs" -> ("T", "office", "_hs"); "C_wz" -> ("C", "wz", "")
    kind, rest = name.split("_", 1)
    tag, _, suffix = rest.partition("_")
    return kind, tag, ("_" + suffix) if suffix else ""


def make_env(building, weather, reward_params=None, dt=DEFAULT_DT, seed=0, building_overrides=None):
    """Build a reset :class:`HVACEnv` for ``"warehouse"`` or ``"datacenter"``."""
    if weather is None or len(weather) == 0:
        raise EmptyWeather("weather series is empty")
    reward_params = reward_params or RewardParams()
    if building == "warehouse":
        model = thermal.warehouse_model(building_overrides)
        spec = warehouse_spec(model)
        actions = WAREHOUSE_ACTIONS
    elif building == "datacenter":
        model = thermal.datacenter_model(building_overrides)
        spec = datacenter_spec(model)
        actions = DATACENTER_ACTIONS
    else:
        raise ConfigError(f"unknown building {building!r}; expected 'warehouse' or 'datacenter'")
    return HVACEnv(building, model, actions, spec, weather, reward_params, dt=dt, seed=seed)


def _check_groups(groups):
    groups = set(groups)
    if not groups:
        raise EnvGroupMissing("at least the Env group is required")
    unknown = groups - set(GROUPS)
    if unknown:
        raise ConfigError(f"unknown observation group(s): {sorted(unknown)}")
    if "Env" not in groups:
        raise EnvGroupMissing("observation groups must include Env")
    return groups


def filter_observation(obs, spec, groups):
    """Keep the variables whose group is in ``groups``; returns ``(sub_obs, sub_spec)``."""
    groups = _check_groups(groups)
    mask = spec.mask(groups)
    obs = np.asarray(obs)
    return obs[..., mask], spec.subset(groups)


class ObservationFilter(TransformerMixin, BaseEstimator):
    """Column selector by observation group, usable inside scikit-learn pipelines."""

    def __init__(self, spec=None, groups=("Env",)):
        self.spec = spec
        self.groups = groups

    def fit(self, X=None, y=None):
        if self.spec is None:
            raise ConfigError("ObservationFilter needs an ObservationSpec")
        groups = _check_groups(self.groups)
        self.mask_ = self.spec.mask(groups)
        self.spec_ = self.spec.subset(groups)
        self.n_features_in_ = len(self.spec)
        return self

    def transform(self, X):
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.n_features_in_:
            raise ConfigError(f"expected {self.n_features_in_} features, got {X.shape[-1]}")
        return X[..., self.mask_]
