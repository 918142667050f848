"""Rebuild the bundled input series in src/wavesim/data/.

The anchor values are approximate 7-day-average US figures read off public
dashboards (reported cases; completed primary series and booster doses by
age bracket). Between anchors the series is interpolated log-linearly.
"""
import datetime as dt
from pathlib import Path

import numpy as np

DATA = Path(__file__).resolve().parents[1] / "src" / "wavesim" / "data"

CASE_ANCHORS = [
    ("2021-10-25", 72e3), ("2021-11-08", 74e3), ("2021-11-22", 95e3), ("2021-11-29", 86e3),
    ("2021-12-06", 115e3), ("2021-12-13", 121e3), ("2021-12-20", 142e3), ("2021-12-24", 190e3),
    ("2021-12-27", 235e3), ("2021-12-29", 295e3), ("2021-12-31", 355e3), ("2022-01-03", 480e3),
    ("2022-01-06", 625e3), ("2022-01-10", 745e3), ("2022-01-13", 795e3), ("2022-01-15", 806e3),
    ("2022-01-18", 785e3), ("2022-01-21", 725e3), ("2022-01-24", 660e3), ("2022-01-27", 575e3),
    ("2022-01-31", 470e3), ("2022-02-03", 395e3), ("2022-02-07", 285e3), ("2022-02-10", 230e3),
    ("2022-02-14", 162e3), ("2022-02-17", 130e3), ("2022-02-21", 100e3), ("2022-02-24", 81e3),
    ("2022-02-28", 65e3), ("2022-03-05", 50e3), ("2022-03-10", 40e3),
]

# Reported cases summed over 2021-12-29..2022-02-27 (inclusive). Smoothed
# dashboard averages miss backlog dumps, so the anchor curve is rescaled to
# this total.
WAVE_TOTAL = 31e6
WAVE_WINDOW = (dt.date(2021, 12, 29), dt.date(2022, 2, 27))

# (bracket, kind, anchors as (date, doses/day))
DOSE_ANCHORS = [
    ("18+", "primary", [("2020-12-14", 0), ("2021-01-04", 30e3), ("2021-02-01", 500e3),
                         ("2021-03-01", 900e3), ("2021-04-12", 1.6e6), ("2021-05-10", 1.1e6),
                         ("2021-06-07", 600e3), ("2021-07-05", 300e3), ("2021-08-09", 320e3),
                         ("2021-09-06", 300e3), ("2021-10-04", 230e3), ("2021-11-01", 180e3),
                         ("2021-12-28", 200e3)]),
    ("12-17", "primary", [("2021-05-10", 0), ("2021-06-01", 280e3), ("2021-07-01", 120e3),
                           ("2021-08-16", 90e3), ("2021-10-01", 40e3), ("2021-12-28", 30e3)]),
    ("5-11", "primary", [("2021-11-03", 0), ("2021-11-24", 170e3), ("2021-12-15", 130e3),
                          ("2021-12-28", 100e3)]),
    ("18+", "booster", [("2021-09-22", 0), ("2021-10-01", 250e3), ("2021-11-01", 700e3),
                         ("2021-12-01", 950e3), ("2021-12-15", 1.0e6), ("2021-12-28", 800e3)]),
]


# doses -> (initial protection, half-life of the excess over the floor in weeks,
#           floor, transmission reduction)
WANING = {2: (0.65, 10.0, 0.10, 0.25), 3: (0.70, 15.0, 0.30, 0.35)}
WANING_WEEKS = 52


def interp(anchors, start, end, log=True):
    xs = np.array([(dt.date.fromisoformat(d) - start).days for d, _ in anchors], dtype=float)
    ys = np.array([v for _, v in anchors], dtype=float)
    days = np.arange((end - start).days + 1)
    if log:
        return np.exp(np.interp(days, xs, np.log(np.maximum(ys, 1.0))))
    out = np.interp(days, xs, ys, left=0.0, right=ys[-1])
    return out


def main():
    start, end = dt.date(2021, 10, 25), dt.date(2022, 3, 10)
    cases = interp(CASE_ANCHORS, start, end)
    lo, hi = ((d - start).days for d in WAVE_WINDOW)
    cases *= WAVE_TOTAL / cases[lo:hi + 1].sum()
    with open(DATA / "us_cases.csv", "w") as fh:
        fh.write("# Approximate 7-day-average reported US COVID-19 cases (national scale).\n")
        fh.write("# Reconstructed from dashboard anchor values, rescaled to 31M over the wave; see scripts/build_fixtures.py.\n")
        fh.write("date,cases\n")
        for i, c in enumerate(cases):
            fh.write(f"{start + dt.timedelta(days=i)},{c:.0f}\n")

    vstart, vend = dt.date(2020, 12, 14), dt.date(2021, 12, 28)
    table = {}
    for bracket, kind, anchors in DOSE_ANCHORS:
        table[(bracket, kind)] = interp(anchors, vstart, vend, log=False)
    with open(DATA / "us_vaccinations.csv", "w") as fh:
        fh.write("# Approximate daily US doses (7-day average, national scale): completed primary\n")
        fh.write("# series and boosters by age bracket. See scripts/build_fixtures.py.\n")
        fh.write("date,bracket,primary_doses,booster_doses\n")
        for i in range((vend - vstart).days + 1):
            day = vstart + dt.timedelta(days=i)
            for bracket in ("5-11", "12-17", "18+"):
                p = table.get((bracket, "primary"), np.zeros(i + 1))[i]
                b = table.get((bracket, "booster"), np.zeros(i + 1))[i]
                fh.write(f"{day},{bracket},{p:.0f},{b:.0f}\n")


    with open(DATA / "vaccine_waning.csv", "w") as fh:
        fh.write("# Vaccine protection against Omicron infection by doses and weeks since last dose.\n")
        fh.write("# Exponential decay toward a floor, shaped after Omicron-period mRNA\n")
        fh.write("# effectiveness estimates. See scripts/build_fixtures.py.\n")
        fh.write("doses,week_index,infection_protection,transmission_reduction\n")
        for doses, (p0, half_life, floor, trans) in WANING.items():
            for w in range(WANING_WEEKS + 1):
                p = floor + (p0 - floor) * 0.5 ** (w / half_life)
                fh.write(f"{doses},{w},{p:.4f},{trans:.2f}\n")


if __name__ == "__main__":
    main()
