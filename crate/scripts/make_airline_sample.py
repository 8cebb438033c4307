"""Generate the bundled synthetic airline sample.

Rows follow the 29-column on-time performance schema. Lateness is drawn
from a logistic model in the engineered covariates so the sample supports
a meaningful fit. A few rows carry missing fields, midnight written as
2400, and departures on the night-window boundaries.
"""

import csv
import sys

import numpy as np

COLUMNS = [
    "Year", "Month", "DayofMonth", "DayOfWeek", "DepTime", "CRSDepTime",
    "ArrTime", "CRSArrTime", "UniqueCarrier", "FlightNum", "TailNum",
    "ActualElapsedTime", "CRSElapsedTime", "AirTime", "ArrDelay", "DepDelay",
    "Origin", "Dest", "Distance", "TaxiIn", "TaxiOut", "Cancelled",
    "CancellationCode", "Diverted", "CarrierDelay", "WeatherDelay",
    "NASDelay", "SecurityDelay", "LateAircraftDelay",
]
CARRIERS = ["AA", "DL", "UA", "WN", "US", "NW", "CO"]
AIRPORTS = ["ATL", "ORD", "DFW", "LAX", "DEN", "JFK", "SFO", "PHX", "IAH", "SEA"]
COEF = np.array([-2.985, 0.104, 0.235, -0.448, -0.177])


def hhmm(minutes):
    minutes = int(minutes) % 1440
    return (minutes // 60) * 100 + minutes % 60


def main(path, n=10_000, seed=20_131_101):
    rng = np.random.default_rng(seed)
    # Departures cluster in the day with a thin overnight tail.
    dep_min = np.where(
        rng.random(n) < 0.9,
        rng.normal(13 * 60, 4 * 60, n),
        rng.uniform(0, 1440, n),
    ).round() % 1440
    dist = np.clip(rng.gamma(2.0, 350.0, n), 30, 4900).round()
    dow = rng.integers(1, 8, n)
    hour = dep_min / 60.0
    night = ((hour >= 20) | (hour < 5)).astype(float)
    weekend = (dow >= 6).astype(float)
    eta = COEF[0] + COEF[1] * hour + COEF[2] * dist / 1000 + COEF[3] * night + COEF[4] * weekend
    late = rng.random(n) < 1 / (1 + np.exp(-eta))
    delay = np.where(late, rng.integers(16, 240, n), rng.integers(-40, 16, n))
    # Boundary and edge cases at fixed positions.
    special = {17: 2400, 311: 459, 312: 500, 313: 2000, 314: 1959, 4000: 2400, 9001: 5}
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(COLUMNS)
        for i in range(n):
            dep = special.get(i, hhmm(dep_min[i]))
            crs = hhmm(dep_min[i] - rng.integers(-5, 30))
            elapsed = int(dist[i] / 7.5 + 30)
            arr = hhmm((dep // 100) * 60 + dep % 100 + elapsed)
            cancelled = i % 97 == 5
            origin, dest = rng.choice(AIRPORTS, 2, replace=False)
            row = {
                "Year": 2007, "Month": int(rng.integers(1, 13)),
                "DayofMonth": int(rng.integers(1, 29)), "DayOfWeek": int(dow[i]),
                "DepTime": dep, "CRSDepTime": crs, "ArrTime": arr,
                "CRSArrTime": hhmm((crs // 100) * 60 + crs % 100 + elapsed),
                "UniqueCarrier": CARRIERS[i % len(CARRIERS)],
                "FlightNum": int(rng.integers(1, 5000)),
                "TailNum": f"N{int(rng.integers(100, 999))}XX",
                "ActualElapsedTime": elapsed, "CRSElapsedTime": elapsed,
                "AirTime": elapsed - 20, "ArrDelay": int(delay[i]),
                "DepDelay": int(delay[i]) - int(rng.integers(0, 10)),
                "Origin": origin, "Dest": dest, "Distance": int(dist[i]),
                "TaxiIn": int(rng.integers(3, 15)), "TaxiOut": int(rng.integers(5, 30)),
                "Cancelled": int(cancelled), "CancellationCode": "A" if cancelled else "",
                "Diverted": 0, "CarrierDelay": "NA", "WeatherDelay": "NA",
                "NASDelay": "NA", "SecurityDelay": "NA", "LateAircraftDelay": "NA",
            }
            if cancelled:
                for c in ("DepTime", "ArrTime", "ArrDelay", "DepDelay", "ActualElapsedTime", "AirTime"):
                    row[c] = "NA"
            elif i % 211 == 7:
                row["ArrDelay"] = "NA"  # diverted without an arrival record
                row["Diverted"] = 1
            w.writerow([row[c] for c in COLUMNS])


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/data/airline_sample.csv")
