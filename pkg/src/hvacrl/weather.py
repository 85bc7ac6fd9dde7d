"""Hourly outdoor weather: EPW ingestion, synthetic climates, sampling and splits."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DegenerateSplit,
    HoursTooSmall,
    IoFailure,
    NonNumericField,
    RowFieldCountBelow22,
    TimeOutOfRange,
    TooFewHeaderLines,
    WeatherError,
)

EPW_HEADER_LINES = 8
EPW_MIN_FIELDS = 22

# 0-indexed EPW column -> (field, missing-value sentinel, default for a missing first row)
EPW_COLUMNS = {
    "t_out": (6, 99.9, 20.0),
    "h_out": (8, 999.0, 50.0),
    "s_direct": (14, 9999.0, 0.0),
    "s_diffuse": (15, 9999.0, 0.0),
    "w_out": (20, 999.0, 0.0),
    "v_out": (21, 999.0, 0.0),
}

FIELDS = ("t_out", "h_out", "v_out", "w_out", "s_diffuse", "s_direct")
_LINEAR_FIELDS = ("t_out", "h_out", "v_out", "s_diffuse", "s_direct")


@dataclass(frozen=True)
class WeatherRecord:
    """Outdoor conditions at one instant.

    Units: t_out degC, h_out % RH, v_out m/s, w_out degrees in [0, 360),
    s_diffuse and s_direct W/m2.
    """

    hour_index: int
    t_out: float
    h_out: float
    v_out: float
    w_out: float
    s_diffuse: float
    s_direct: float

    def __post_init__(self):
        if not 0.0 <= self.h_out <= 100.0:
            raise WeatherError(f"h_out={self.h_out} outside [0, 100]")
        if self.v_out < 0 or self.s_diffuse < 0 or self.s_direct < 0:
            raise WeatherError("wind speed and radiation must be nonnegative")
        if not 0.0 <= self.w_out < 360.0:
            raise WeatherError(f"w_out={self.w_out} outside [0, 360)")


@dataclass(frozen=True, eq=False)
class WeatherSeries:
    """Consecutive hourly records stored column-wise.

    ``start_hour`` is the absolute hour of the first record in the source
    data. It is carried through :func:`split` so that calendar-dependent
    quantities (occupancy) stay aligned after re-indexing.
    """

    t_out: np.ndarray
    h_out: np.ndarray
    v_out: np.ndarray
    w_out: np.ndarray
    s_diffuse: np.ndarray
    s_direct: np.ndarray
    location_label: str = ""
    start_hour: int = 0
    _columns: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        cols = []
        n = None
        for name in FIELDS:
            arr = np.array(getattr(self, name), dtype=float)
            if arr.ndim != 1:
                raise WeatherError(f"{name} must be one-dimensional")
            if n is None:
                n = arr.size
            elif arr.size != n:
                raise WeatherError("weather columns differ in length")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
            cols.append(arr)
        if n < 2:
            raise WeatherError(f"a weather series needs at least 2 records, got {n}")
        if np.any((self.h_out < 0) | (self.h_out > 100)):
            raise WeatherError("h_out outside [0, 100]")
        if np.any(self.v_out < 0) or np.any(self.s_diffuse < 0) or np.any(self.s_direct < 0):
            raise WeatherError("wind speed and radiation must be nonnegative")
        if np.any((self.w_out < 0) | (self.w_out >= 360)):
            raise WeatherError("w_out outside [0, 360)")
        stacked = np.stack(cols)
        stacked.setflags(write=False)
        object.__setattr__(self, "_columns", stacked)

    @classmethod
    def from_records(cls, records, location_label="", start_hour=0):
        records = list(records)
        for i, rec in enumerate(records):
            if rec.hour_index != i:
                raise WeatherError("hour_index must start at 0 and increase by 1")
        cols = {name: [getattr(r, name) for r in records] for name in FIELDS}
        return cls(**cols, location_label=location_label, start_hour=start_hour)

    def __len__(self):
        return self.t_out.size

    @property
    def hours(self):
        return len(self)

    def record(self, i):
        return WeatherRecord(i, *(float(c[i]) for c in self._columns))

    @property
    def records(self):
        return [self.record(i) for i in range(len(self))]

    def slice(self, start, stop):
        """Records ``[start, stop)`` as a new series re-indexed from 0."""
        return WeatherSeries(
            *(c[start:stop] for c in self._columns),
            location_label=self.location_label,
            start_hour=self.start_hour + start,
        )


@dataclass(frozen=True)
class WeatherSplit:
    train: WeatherSeries
    eval: WeatherSeries
    fraction: float


def _to_float(text, row, col):
    try:
        value = float(text)
    except ValueError:
        raise NonNumericField(row, col, text) from None
    if not math.isfinite(value):
        raise NonNumericField(row, col, text)
    return value


def parse_epw(text, location_label=""):
    """Parse EPW text into a :class:`WeatherSeries`.

    Only the six mapped columns are read; the header and all other columns
    are ignored. Missing-value sentinels are replaced by the previous
    record's value (or a fixed default on the first row). Data rows are
    numbered from 1 in error messages.
    """
    if hasattr(text, "read"):
        text = text.read()
    lines = text.splitlines()
    if len(lines) < EPW_HEADER_LINES:
        raise TooFewHeaderLines(
            f"EPW input has {len(lines)} lines, expected {EPW_HEADER_LINES} header lines"
        )
    rows = [ln for ln in lines[EPW_HEADER_LINES:] if ln.strip()]
    if not rows:
        raise TooFewHeaderLines("EPW input has no data rows after the header")

    previous = {name: default for name, (_, _, default) in EPW_COLUMNS.items()}
    cols = {name: [] for name in FIELDS}
    for rownum, line in enumerate(rows, start=1):
        parts = line.split(",")
        if len(parts) < EPW_MIN_FIELDS:
            raise RowFieldCountBelow22(rownum, len(parts))
        for name, (col, sentinel, _) in EPW_COLUMNS.items():
            value = _to_float(parts[col].strip(), rownum, col)
            if value >= sentinel:
                value = previous[name]
            previous[name] = value
            cols[name].append(value)

    h_out = np.clip(cols["h_out"], 0.0, 100.0)
    w_out = np.mod(cols["w_out"], 360.0)
    return WeatherSeries(
        t_out=np.asarray(cols["t_out"]),
        h_out=h_out,
        v_out=np.maximum(cols["v_out"], 0.0),
        w_out=w_out,
        s_diffuse=np.maximum(cols["s_diffuse"], 0.0),
        s_direct=np.maximum(cols["s_direct"], 0.0),
        location_label=location_label,
    )


def read_epw(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="latin-1")
    except OSError as exc:
        raise IoFailure(f"cannot read EPW file {path}: {exc}") from exc
    return parse_epw(text, location_label=path.stem)


def _bracket(series, t):
    last = len(series) - 1
    if not 0.0 <= t <= 3600.0 * last:
        raise TimeOutOfRange(f"t={t} s outside [0, {3600.0 * last}] s")
    pos = t / 3600.0
    i = min(int(pos), last - 1)
    return i, pos - i


def sample_values(series, t):
    """Interpolated ``(t_out, h_out, v_out, w_out, s_diffuse, s_direct)`` at ``t`` seconds."""
    i, frac = _bracket(series, t)
    lo = series._columns[:, i]
    hi = series._columns[:, i + 1]
    vals = lo + frac * (hi - lo)
    # wind direction wraps at 360: nearest neighbour, ties to the earlier hour
    vals[3] = lo[3] if frac <= 0.5 else hi[3]
    return vals


def sample(series, t):
    """Outdoor conditions ``t`` seconds after the start of ``series``."""
    vals = sample_values(series, t)
    return WeatherRecord(int(t // 3600), *(float(v) for v in vals))


def split(series, fraction=0.8):
    """Chronological prefix/suffix split at record granularity."""
    if not 0.0 < fraction < 1.0:
        raise DegenerateSplit(f"fraction must lie in (0, 1), got {fraction}")
    n = len(series)
    n_train = int(round(fraction * n))
    if n_train < 1 or n - n_train < 1:
        raise DegenerateSplit(f"split of {n} records at {fraction} leaves an empty side")
    # a side with a single record cannot be sampled; keep both sampleable
    if n_train < 2 or n - n_train < 2:
        raise DegenerateSplit(
            f"split of {n} records at {fraction} leaves a side with fewer than 2 records"
        )
    return WeatherSplit(series.slice(0, n_train), series.slice(n_train, n), fraction)


# (mean, seasonal amplitude, diurnal amplitude) degC; RH base and swing %; wind scale m/s;
# peak direct-normal and diffuse radiation W/m2
PROFILES = {
    "hot": dict(t=(22.0, 10.0, 8.0), rh=(30.0, 15.0), wind=4.0, direct=850.0, diffuse=120.0),
    "cool": dict(t=(10.0, 7.0, 5.0), rh=(75.0, 15.0), wind=4.5, direct=550.0, diffuse=150.0),
}


def synthesize(profile, seed=0, hours=8760):
    """Deterministic synthetic hourly climate.

    Temperature is an annual plus a daily sinusoid (minimum at midnight on
    1 January) with unit-variance Gaussian noise. Relative humidity moves
    against the daily temperature swing. Solar terms are half-sines between
    06:00 and 18:00 scaled by a per-day cloudiness draw.
    """
    if profile not in PROFILES:
        raise WeatherError(f"unknown synthetic profile {profile!r}; expected one of {sorted(PROFILES)}")
    hours = int(hours)
    if hours < 2:
        raise HoursTooSmall(f"hours must be >= 2, got {hours}")
    p = PROFILES[profile]
    rng = np.random.default_rng(seed)
    h = np.arange(hours, dtype=float)
    hod = np.mod(h, 24.0)

    mean, a_season, a_day = p["t"]
    season = np.sin(2 * np.pi * h / 8760.0 - np.pi / 2)
    diurnal = np.sin(2 * np.pi * hod / 24.0 - np.pi / 2)
    t_out = mean + a_season * season + a_day * diurnal + rng.normal(0.0, 1.0, hours)

    rh_base, rh_swing = p["rh"]
    h_out = np.clip(rh_base - rh_swing * diurnal + rng.normal(0.0, 5.0, hours), 10.0, 100.0)

    v_out = p["wind"] * rng.weibull(2.0, hours)
    w_out = rng.uniform(0.0, 360.0, hours)

    daylight = np.clip(np.sin(np.pi * (hod - 6.0) / 12.0), 0.0, None)
    n_days = hours // 24 + 1
    clear = rng.uniform(0.5, 1.0, n_days)[(h // 24).astype(int)]
    seasonal_sun = 1.0 + 0.25 * season
    s_direct = p["direct"] * daylight * clear * seasonal_sun
    s_diffuse = p["diffuse"] * daylight * (1.5 - clear) * seasonal_sun

    return WeatherSeries(
        t_out=t_out,
        h_out=h_out,
        v_out=v_out,
        w_out=w_out,
        s_diffuse=s_diffuse,
        s_direct=s_direct,
        location_label=f"synthetic:{profile}",
    )


def load_weather(source, seed=0, hours=8760):
    """Resolve a weather source string: ``synthetic:hot``, ``synthetic:cool`` or an EPW path."""
    if source.startswith("synthetic:"):
        return synthesize(source.split(":", 1)[1], seed=seed, hours=hours)
    return read_epw(source)
