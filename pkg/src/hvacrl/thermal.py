"""Multi-zone lumped-capacitance building with a proportional setpoint thermostat.

Each zone is a single thermal node::

    C_z dT_z/dt = U_z (T_out - T_z) + sum_j K_zj (T_j - T_z) + q_z + g_z(t)

Conduction (the linear part) is integrated with the trapezoidal rule; the
saturated thermostat output q_z and the internal gains g_z are held at their
sub-step-start values. Sub-steps are 60 s.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .errors import ConfigError, NonPositiveDt, ZoneCountMismatch

SUBSTEP = 60.0
FAN_POWER = 50.0  # W per zone while its HVAC delivers nonzero thermal power
RH_TIME_CONSTANT = 3 * 3600.0

# Floor-area scaling for default parameters
CAPACITANCE_PER_M2 = 200e3  # J/K per m2
CONDUCTANCE_PER_M2 = 1.0  # W/K per m2


@dataclass(frozen=True)
class ZoneParams:
    name: str
    capacitance: float
    envelope_conductance: float
    heat_capacity: float
    cool_capacity: float
    cop_heat: float
    cop_cool: float
    internal_gain_base: float
    occupant_gain: float
    controller_gain: float

    def __post_init__(self):
        if self.capacitance <= 0:
            raise ConfigError(f"{self.name}: capacitance must be > 0")
        if self.envelope_conductance < 0:
            raise ConfigError(f"{self.name}: envelope_conductance must be >= 0")
        if self.heat_capacity < 0 or self.cool_capacity < 0:
            raise ConfigError(f"{self.name}: capacities must be >= 0")
        if self.cop_heat <= 0 or self.cop_cool <= 0:
            raise ConfigError(f"{self.name}: COPs must be > 0")
        if self.controller_gain <= 0:
            raise ConfigError(f"{self.name}: controller_gain must be > 0")

    @property
    def has_cooling(self):
        return self.cool_capacity > 0


def no_occupancy(hour_of_week):
    return 0


@dataclass(frozen=True)
class WeekdaySchedule:
    """``people`` present Monday-Friday from ``start`` (inclusive) to ``end`` (exclusive) o'clock.

    Hour 0 of the week is Monday 00:00.
    """

    people: int
    start: int = 8
    end: int = 18

    def __call__(self, hour_of_week):
        day, hour = divmod(int(hour_of_week) % 168, 24)
        if day < 5 and self.start <= hour < self.end:
            return self.people
        return 0


@dataclass(frozen=True, eq=False)
class BuildingModel:
    zones: tuple
    interzone_conductance: np.ndarray
    occupancy_schedule: tuple
    _cache: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        zones = tuple(self.zones)
        object.__setattr__(self, "zones", zones)
        n = len(zones)
        if n == 0:
            raise ConfigError("a building needs at least one zone")
        k = np.array(self.interzone_conductance, dtype=float)
        if k.shape != (n, n):
            raise ConfigError(f"interzone matrix shape {k.shape} does not match {n} zones")
        if not np.allclose(k, k.T, rtol=0, atol=0):
            raise ConfigError("interzone matrix must be symmetric")
        if np.any(np.diag(k) != 0):
            raise ConfigError("interzone matrix must have a zero diagonal")
        if np.any(k < 0):
            raise ConfigError("interzone conductances must be nonnegative")
        k.setflags(write=False)
        object.__setattr__(self, "interzone_conductance", k)
        sched = tuple(self.occupancy_schedule)
        if len(sched) != n:
            raise ConfigError("one occupancy schedule per zone is required")
        object.__setattr__(self, "occupancy_schedule", sched)

        object.__setattr__(self, "capacitance", np.array([z.capacitance for z in zones]))
        object.__setattr__(self, "envelope", np.array([z.envelope_conductance for z in zones]))
        object.__setattr__(self, "controller_gain", np.array([z.controller_gain for z in zones]))
        object.__setattr__(self, "heat_capacity", np.array([z.heat_capacity for z in zones]))
        object.__setattr__(self, "cool_capacity", np.array([z.cool_capacity for z in zones]))
        object.__setattr__(self, "cop_heat", np.array([z.cop_heat for z in zones]))
        object.__setattr__(self, "cop_cool", np.array([z.cop_cool for z in zones]))
        object.__setattr__(self, "has_cooling", np.array([z.has_cooling for z in zones]))
        object.__setattr__(self, "inv_cop_heat", 1.0 / self.cop_heat)
        object.__setattr__(self, "inv_cop_cool", 1.0 / self.cop_cool)

    @property
    def n_zones(self):
        return len(self.zones)

    @property
    def zone_names(self):
        return [z.name for z in self.zones]

    def occupancy(self, hour_of_week):
        return np.array([s(hour_of_week) for s in self.occupancy_schedule], dtype=float)

    def gains(self, hour_of_week):
        key = ("gains", hour_of_week)
        if key not in self._cache:
            occ = self.occupancy(hour_of_week)
            self._cache[key] = np.array(
                [z.internal_gain_base + z.occupant_gain * o for z, o in zip(self.zones, occ)]
            )
        return self._cache[key]

    def propagators(self, h):
        """Trapezoidal-rule matrices ``(M, N)`` with ``T_new = M T + N b`` for sub-step ``h``."""
        key = float(h)
        if key not in self._cache:
            k = self.interzone_conductance
            a = np.diag(self.envelope + k.sum(axis=1)) - k
            c = np.diag(self.capacitance / h)
            lhs_inv = np.linalg.inv(c + a / 2)
            self._cache[key] = (lhs_inv @ (c - a / 2), lhs_inv)
        return self._cache[key]

    def with_zone(self, index, **changes):
        zones = list(self.zones)
        zones[index] = replace(zones[index], **changes)
        return BuildingModel(zones, self.interzone_conductance, self.occupancy_schedule)


@dataclass(frozen=True)
class BuildingState:
    zone_temps: tuple
    zone_rh: tuple
    energy_meter: float = 0.0
    sim_time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "zone_temps", tuple(np.asarray(self.zone_temps, dtype=float).tolist()))
        object.__setattr__(self, "zone_rh", tuple(np.asarray(self.zone_rh, dtype=float).tolist()))
        if len(self.zone_temps) != len(self.zone_rh):
            raise ConfigError("zone_temps and zone_rh differ in length")
        if any(not 0.0 <= h <= 100.0 for h in self.zone_rh):
            raise ConfigError("zone relative humidity outside [0, 100]")


@dataclass(frozen=True)
class SetpointCommand:
    """Per-zone heating setpoints and cooling setpoints (``None`` for heat-only zones)."""

    heating: tuple
    cooling: tuple

    def __post_init__(self):
        heating = tuple(float(h) for h in self.heating)
        cooling = tuple(None if c is None else float(c) for c in self.cooling)
        if len(heating) != len(cooling):
            raise ConfigError("heating and cooling setpoint lists differ in length")
        for h, c in zip(heating, cooling):
            if c is not None and h > c:
                raise ConfigError(f"heating setpoint {h} above cooling setpoint {c}")
        object.__setattr__(self, "heating", heating)
        object.__setattr__(self, "cooling", cooling)
        object.__setattr__(self, "_heat_arr", np.array(heating))
        object.__setattr__(self, "_cool_arr", np.array([math.inf if c is None else c for c in cooling]))

    def __len__(self):
        return len(self.heating)


@dataclass(frozen=True)
class StepReport:
    """Per-step diagnostics: average thermal power per zone over the step (W, heating > 0)."""

    heating: np.ndarray
    cooling: np.ndarray


def thermostat(model, temps, heat_sp, cool_sp):
    """Saturated proportional thermostat output ``(q_heat, q_cool)``, both nonnegative, in W."""
    gain = model.controller_gain
    q_heat = np.minimum(np.maximum(gain * (heat_sp - temps), 0.0), model.heat_capacity)
    q_cool = np.minimum(np.maximum(gain * (temps - cool_sp), 0.0), model.cool_capacity)
    return q_heat, q_cool


def step(model, state, weather, cmd, dt, hour_offset=0, report=False):
    """Advance the building by ``dt`` seconds under constant weather and setpoints.

    Returns ``(new_state, p_total)`` where ``p_total`` is the mean electric
    HVAC power over the step in W. ``hour_offset`` is the absolute hour of
    ``sim_time == 0``; it places the step on the weekly occupancy calendar.
    With ``report=True`` a :class:`StepReport` is appended to the result.
    """
    n = model.n_zones
    if not dt > 0:
        raise NonPositiveDt(f"dt must be > 0, got {dt}")
    if len(cmd) != n or len(state.zone_temps) != n:
        raise ZoneCountMismatch(f"model has {n} zones, command has {len(cmd)}, state has {len(state.zone_temps)}")

    # heat-only zones have zero cooling capacity, so their cooling setpoint is inert
    heat_sp = cmd._heat_arr
    cool_sp = cmd._cool_arr
    hour_of_week = (hour_offset + int(state.sim_time // 3600)) % 168
    drive = model.envelope * weather.t_out + model.gains(hour_of_week)

    temps = np.array(state.zone_temps)
    heat_j = np.zeros(n)
    cool_j = np.zeros(n)
    n_full = int(dt // SUBSTEP)
    tail = float(dt) - n_full * SUBSTEP
    fan_j = 0.0
    for h, count in ((SUBSTEP, n_full), (tail, 1)):
        if count == 0 or h <= 1e-9:
            continue
        m, nmat = model.propagators(h)
        active = _integrate(temps, heat_j, cool_j, heat_sp, cool_sp, nmat @ drive, m, nmat,
                            model.controller_gain, model.heat_capacity, model.cool_capacity, h, count)
        fan_j += FAN_POWER * h * active

    electric_j = float(heat_j @ model.inv_cop_heat + cool_j @ model.inv_cop_cool) + fan_j
    p_total = electric_j / dt

    decay = math.exp(-dt / RH_TIME_CONSTANT)
    rh = [weather.h_out + (r - weather.h_out) * decay for r in state.zone_rh]
    new_state = BuildingState(
        zone_temps=temps,
        zone_rh=rh,
        energy_meter=state.energy_meter + electric_j,
        sim_time=state.sim_time + dt,
    )
    if report:
        return new_state, p_total, StepReport(heat_j / dt, cool_j / dt)
    return new_state, p_total


@numba.njit(cache=True)
def _integrate(temps, heat_j, cool_j, heat_sp, cool_sp, free, m, nmat, gain, hcap, ccap, h, count):
    """Run ``count`` sub-steps of length ``h`` in place; return the number of active zone-sub-steps."""
    n = temps.size
    q = np.empty(n)
    new = np.empty(n)
    active = 0
    for _ in range(count):
        for z in range(n):
            qh = gain[z] * (heat_sp[z] - temps[z])
            qh = min(max(qh, 0.0), hcap[z])
            qc = gain[z] * (temps[z] - cool_sp[z])
            qc = min(max(qc, 0.0), ccap[z])
            q[z] = qh - qc
            heat_j[z] += qh * h
            cool_j[z] += qc * h
            if q[z] != 0.0:
                active += 1
        for i in range(n):
            acc = free[i]
            for j in range(n):
                acc += m[i, j] * temps[j] + nmat[i, j] * q[j]
            new[i] = acc
        temps[:] = new
    return active


def interzone_exchange(model, temps_old, temps_new):
    """Heat (W) flowing into each zone from each other zone over one trapezoidal sub-step.

    Entry ``[z, j]`` is the flow from ``j`` into ``z``; the matrix is antisymmetric.
    """
    t = (np.asarray(temps_old) + np.asarray(temps_new)) / 2
    k = model.interzone_conductance
    return k * (t[None, :] - t[:, None])


def _zone(name, area, heat_capacity, cool_capacity, cop_heat, cop_cool, gain_per_m2,
          occupant_gain=120.0, saturation_error=2.0):
    return ZoneParams(
        name=name,
        capacitance=CAPACITANCE_PER_M2 * area,
        envelope_conductance=CONDUCTANCE_PER_M2 * area,
        heat_capacity=heat_capacity,
        cool_capacity=cool_capacity,
        cop_heat=cop_heat,
        cop_cool=cop_cool,
        internal_gain_base=gain_per_m2 * area,
        occupant_gain=occupant_gain,
        controller_gain=max(heat_capacity, cool_capacity) / saturation_error,
    )


# Default parameter table. Areas split the reference floor areas (4598 m2 and
# 491.3 m2); capacities in W thermal; internal gains in W/m2.
WAREHOUSE_DEFAULTS = {
    "office": dict(area=232.0, heat_capacity=30e3, cool_capacity=30e3, cop_heat=3.0, cop_cool=3.0, gain_per_m2=10.0),
    "fine_storage": dict(area=1394.0, heat_capacity=80e3, cool_capacity=80e3, cop_heat=3.0, cop_cool=3.0, gain_per_m2=4.0),
    "bulk_storage": dict(area=2972.0, heat_capacity=120e3, cool_capacity=0.0, cop_heat=1.0, cop_cool=1.0, gain_per_m2=2.0),
}
WAREHOUSE_INTERZONE = {("office", "fine_storage"): 150.0, ("fine_storage", "bulk_storage"): 600.0, ("office", "bulk_storage"): 50.0}
WAREHOUSE_OFFICE_PEOPLE = 10

DATACENTER_DEFAULTS = {
    "west": dict(area=245.65, heat_capacity=10e3, cool_capacity=30e3, cop_heat=3.0, cop_cool=3.0, gain_per_m2=0.0),
    "east": dict(area=245.65, heat_capacity=10e3, cool_capacity=30e3, cop_heat=3.0, cop_cool=3.0, gain_per_m2=0.0),
}
DATACENTER_INTERZONE = {("west", "east"): 100.0}
DATACENTER_IT_GAIN = 10e3  # W per zone
DATACENTER_PEOPLE = 2


def _interzone_matrix(names, pairs):
    k = np.zeros((len(names), len(names)))
    for (a, b), value in pairs.items():
        i, j = names.index(a), names.index(b)
        k[i, j] = k[j, i] = value
    return k


def _build(defaults, pairs, schedules, overrides=None, extra_gain=None):
    overrides = overrides or {}
    unknown = set(overrides) - set(defaults) - {"interzone"}
    if unknown:
        raise ConfigError(f"unknown zone(s) in building overrides: {sorted(unknown)}")
    names = list(defaults)
    zones = []
    for name in names:
        zone = _zone(name, **defaults[name])
        if extra_gain:
            zone = replace(zone, internal_gain_base=zone.internal_gain_base + extra_gain)
        changes = overrides.get(name, {})
        bad = set(changes) - (set(ZoneParams.__dataclass_fields__) - {"name"})
        if bad:
            raise ConfigError(f"unknown parameter(s) for zone {name}: {sorted(bad)}")
        zones.append(replace(zone, **changes))
    k_pairs = dict(pairs)
    for key, value in overrides.get("interzone", {}).items():
        a, b = key.split("-")
        if a not in names or b not in names:
            raise ConfigError(f"unknown interzone pair {key!r}")
        k_pairs.pop((b, a), None)
        k_pairs[(a, b)] = float(value)
    return BuildingModel(zones, _interzone_matrix(names, k_pairs), schedules)


def warehouse_model(overrides=None):
    """Three zones: office, fine_storage, bulk_storage (heat-only)."""
    schedules = (WeekdaySchedule(WAREHOUSE_OFFICE_PEOPLE), no_occupancy, no_occupancy)
    return _build(WAREHOUSE_DEFAULTS, WAREHOUSE_INTERZONE, schedules, overrides)


def datacenter_model(overrides=None, it_gain=DATACENTER_IT_GAIN):
    """Two zones, west and east, each carrying a constant IT load of ``it_gain`` W."""
    schedules = (WeekdaySchedule(DATACENTER_PEOPLE), WeekdaySchedule(DATACENTER_PEOPLE))
    return _build(DATACENTER_DEFAULTS, DATACENTER_INTERZONE, schedules, overrides, extra_gain=it_gain)


BUILDINGS = {"warehouse": warehouse_model, "datacenter": datacenter_model}
