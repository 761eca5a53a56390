"""Aggregation across seeds and CSV output."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Iterable, Sequence, TextIO

import numpy as np
from scipy import stats

CSV_VERSION = 1


@dataclass(frozen=True)
class MeanCI:
    mean: float
    half_width: float
    n: int

    @property
    def low(self) -> float:
        return self.mean - self.half_width

    @property
    def high(self) -> float:
        return self.mean + self.half_width

    def overlaps(self, other: "MeanCI") -> bool:
        return self.low <= other.high and other.low <= self.high


def mean_ci(values: Sequence[float], confidence: float = 0.95) -> MeanCI:
    """Student-t confidence interval of the mean; zero width for a single sample."""
    x = np.asarray([v for v in values if not math.isnan(v)], dtype=float)
    n = len(x)
    if n == 0:
        return MeanCI(float("nan"), float("nan"), 0)
    m = float(x.mean())
    if n == 1:
        return MeanCI(m, 0.0, 1)
    sem = float(x.std(ddof=1)) / math.sqrt(n)
    return MeanCI(m, float(stats.t.ppf(0.5 + confidence / 2, n - 1)) * sem, n)


SUMMARY_FIELDS = (
    "scenario", "seed", "complete", "mac", "rate", "mean_pdr", "min_pdr", "mean_delay_s",
    "radio_on", "churn", "cfp_valid_collisions", "exclusivity_violations", "end_time_s",
)


def summary_row(result, **extra) -> dict:
    sc = result.scenario
    row = {
        "scenario": sc.name,
        "seed": sc.seed,
        "complete": int(result.complete),
        "mac": sc.mac.kind,
        "rate": sc.traffic.rate,
        "mean_pdr": round(result.mean_pdr, 6),
        "min_pdr": round(min(result.pdr.values()), 6) if result.pdr else float("nan"),
        "mean_delay_s": round(result.mean_delay, 6),
        "radio_on": round(result.mean_radio_on, 6),
        "churn": len(result.churn),
        "cfp_valid_collisions": result.counters.get("cfp_valid_collisions", 0),
        "exclusivity_violations": result.exclusivity_violations,
        "end_time_s": round(result.end_time * 16e-6, 3),
    }
    row.update(extra)
    return row


def write_csv(rows: Iterable[dict], out: TextIO, fields: Sequence[str] = SUMMARY_FIELDS) -> None:
    rows = list(rows)
    extra = sorted({k for r in rows for k in r} - set(fields))
    out.write(f"# dsmesim-summary v{CSV_VERSION}\n")
    w = csv.DictWriter(out, fieldnames=list(fields) + extra, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)


def per_node_rows(result) -> list:
    rows = []
    for o in sorted(result.pdr):
        d = result.delays.get(o, [])
        rows.append({
            "node": o,
            "level": result.level[o],
            "pdr": round(result.pdr[o], 6),
            "mean_delay_s": round(float(np.mean(d)), 6) if d else "",
            "radio_on": round(result.radio_on.get(o, float("nan")), 6),
        })
    return rows


def write_per_node_csv(result, out: TextIO) -> None:
    out.write(f"# dsmesim-nodes v{CSV_VERSION}\n")
    w = csv.DictWriter(out, fieldnames=["node", "level", "pdr", "mean_delay_s", "radio_on"], lineterminator="\n")
    w.writeheader()
    for r in per_node_rows(result):
        w.writerow(r)
