"""Reference implementation of the airline feature rules.

Reads a raw on-time performance CSV and writes, for every usable row, the
source line number and the five engineered columns. Rows with a missing
(empty or NA) DepTime, ArrDelay, Distance or DayOfWeek are dropped.
"""

import csv
import sys


def engineer(rec):
    fields = [rec["DepTime"], rec["ArrDelay"], rec["Distance"], rec["DayOfWeek"]]
    if any(v.strip() in ("", "NA") for v in fields):
        return None
    dep = fields[0].strip().zfill(4)
    hours, mins = int(dep[:-2]), int(dep[-2:])
    if hours == 24:
        hours = 0
    dep_hour = (hours * 60 + mins) / 60
    late = 1 if float(fields[1]) > 15 else 0
    night = 1 if (dep_hour >= 20 or dep_hour < 5) else 0
    weekend = 1 if int(fields[3]) in (6, 7) else 0
    return [late, repr(dep_hour), repr(float(fields[2]) / 1000), night, weekend]


def main(src, dst):
    with open(src, newline="") as f, open(dst, "w", newline="") as g:
        out = csv.writer(g, lineterminator="\n")
        out.writerow(["line", "Late", "DepHour", "Distance", "Night", "Weekend"])
        for line, rec in enumerate(csv.DictReader(f), start=2):
            row = engineer(rec)
            if row is not None:
                out.writerow([line] + row)


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
