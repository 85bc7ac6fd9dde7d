"""Minimal EPW writer for round-trip tests (the package itself only reads EPW)."""
from __future__ import annotations

HEADER = [
    "LOCATION,Testville,ST,USA,TMY3,000000,33.45,-111.98,-7.0,337.0",
    "DESIGN CONDITIONS,0",
    "TYPICAL/EXTREME PERIODS,0",
    "GROUND TEMPERATURES,0",
    "HOLIDAYS/DAYLIGHT SAVINGS,No,0,0,0",
    "COMMENTS 1,synthetic test fixture",
    "COMMENTS 2,",
    "DATA PERIODS,1,1,Data,Sunday, 1/ 1,12/31",
]
N_FIELDS = 35


def epw_row(hour, t_out=20.0, h_out=50.0, s_direct=0.0, s_diffuse=0.0, w_out=0.0, v_out=0.0, filler="0"):
    fields = [filler] * N_FIELDS
    month_day, hh = divmod(hour, 24)
    fields[0:6] = ["1999", "1", str(1 + month_day % 28), str(hh + 1), "0", "?9?9?9?9E0?9?9?9"]
    fields[6] = repr(float(t_out))
    fields[8] = repr(float(h_out))
    fields[14] = repr(float(s_direct))
    fields[15] = repr(float(s_diffuse))
    fields[20] = repr(float(w_out))
    fields[21] = repr(float(v_out))
    return ",".join(fields)


def serialize(series):
    """EPW text holding the six mapped columns of a WeatherSeries."""
    rows = [
        epw_row(i, series.t_out[i], series.h_out[i], series.s_direct[i], series.s_diffuse[i],
                series.w_out[i], series.v_out[i])
        for i in range(len(series))
    ]
    return "\n".join(HEADER + rows) + "\n"
