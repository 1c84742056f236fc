"""Volatility-index z-scores and market dislocation labels."""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

INDEX_NAMES = ("VIX", "VIXFX", "MRI", "MOVE")
ROLLING_WINDOW = 13
DISLOCATION_MEAN = 0.5
ONE_WEEK = dt.timedelta(days=7)


class MarketDataError(ValueError):
    pass


@dataclass(frozen=True)
class IndexSeries:
    name: str
    observations: tuple[tuple[dt.date, float], ...]

    def __post_init__(self):
        dates = [d for d, _ in self.observations]
        for a, b in zip(dates, dates[1:]):
            if b <= a:
                raise MarketDataError(f"{self.name}: dates not strictly increasing at {b}")
            if (b - a).days % 7:
                raise MarketDataError(f"{self.name}: {a} -> {b} is not a whole number of weeks")
        for d, v in self.observations:
            if not math.isfinite(v):
                raise MarketDataError(f"{self.name}: non-finite value at {d}")


@dataclass(frozen=True)
class ZScore:
    week_end: dt.date
    value: float | None
    error: str | None = None

    @property
    def defined(self) -> bool:
        return self.value is not None


def read_index_csv(name: str, path: str | Path) -> IndexSeries:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    try:
        obs = sorted((dt.date.fromisoformat(r["week_end"]), float(r["value"])) for r in rows)
    except (KeyError, ValueError) as exc:
        raise MarketDataError(f"{path}: expected columns week_end,value ({exc})") from exc
    return IndexSeries(name, tuple(obs))


def zscore(series: IndexSeries, window: int = ROLLING_WINDOW) -> list[ZScore]:
    """Rolling z-score against the previous ``window`` weeks (current week excluded).

    Uses the population standard deviation. A week whose previous ``window``
    calendar weeks are not all present is skipped; a zero-variance window
    yields an error record instead of a value.
    """
    obs = series.observations
    if len(obs) <= window:
        raise MarketDataError(f"{series.name}: {len(obs)} observations, need more than {window}")
    out = []
    for t in range(window, len(obs)):
        day, value = obs[t]
        prior = obs[t - window : t]
        if day - prior[0][0] != window * ONE_WEEK:
            logger.debug("%s: gap before %s, z undefined", series.name, day)
            continue
        vals = np.array([v for _, v in prior])
        mu = vals.mean()
        sigma = vals.std()
        if sigma == 0:
            out.append(ZScore(day, None, "zero variance in rolling window"))
        else:
            out.append(ZScore(day, float((value - mu) / sigma)))
    return out


@dataclass(frozen=True)
class DislocationLabel:
    week_end: dt.date
    label: int
    flagged: bool = False


@dataclass(frozen=True)
class PanelRow:
    week_end: dt.date
    z: dict[str, float | None]

    @property
    def mean(self) -> float | None:
        vals = [self.z[n] for n in INDEX_NAMES]
        if any(v is None for v in vals):
            return None
        return float(np.mean(vals))


def zscore_panel(series: Mapping[str, IndexSeries], window: int = ROLLING_WINDOW) -> dict[dt.date, PanelRow]:
    """Week -> z-scores of the four indices, for weeks where every index has an entry."""
    missing = [n for n in INDEX_NAMES if n not in series]
    if missing:
        raise MarketDataError(f"missing index series {missing}")
    per_index = {n: {z.week_end: z.value for z in zscore(series[n], window)} for n in INDEX_NAMES}
    weeks = sorted(set.intersection(*(set(d) for d in per_index.values())))
    return {w: PanelRow(w, {n: per_index[n][w] for n in INDEX_NAMES}) for w in weeks}


def is_dislocation(zs: Sequence[float], threshold: float = DISLOCATION_MEAN) -> bool:
    return all(z > 0 for z in zs) and float(np.mean(zs)) > threshold


def label_dislocations(
    panel: Mapping[dt.date, PanelRow | Mapping[str, float | None]], threshold: float = DISLOCATION_MEAN
) -> list[DislocationLabel]:
    """Label 1 when all four z-scores are strictly positive and their mean exceeds ``threshold``."""
    out = []
    for week in sorted(panel):
        row = panel[week]
        z = row.z if isinstance(row, PanelRow) else row
        missing = [n for n in INDEX_NAMES if n not in z]
        if missing:
            raise MarketDataError(f"week {week}: missing index {missing}")
        vals = [z[n] for n in INDEX_NAMES]
        if any(v is None for v in vals):
            out.append(DislocationLabel(week, 0, flagged=True))
            continue
        out.append(DislocationLabel(week, int(is_dislocation(vals, threshold))))
    return out


def write_panel_csv(
    panel: Mapping[dt.date, PanelRow], labels: Sequence[DislocationLabel], path: str | Path
) -> None:
    by_week = {lab.week_end: lab for lab in labels}
    fmt = lambda v: "" if v is None else repr(v)  # noqa: E731
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["week_end", "z_vix", "z_vixfx", "z_mri", "z_move", "z_mean", "label"])
        for week in sorted(panel):
            row = panel[week]
            w.writerow(
                [week.isoformat()]
                + [fmt(row.z[n]) for n in INDEX_NAMES]
                + [fmt(row.mean), by_week[week].label]
            )


def read_panel_csv(path: str | Path) -> tuple[dict[dt.date, PanelRow], list[DislocationLabel]]:
    cols = dict(zip(INDEX_NAMES, ("z_vix", "z_vixfx", "z_mri", "z_move")))
    panel, labels = {}, []
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            week = dt.date.fromisoformat(r["week_end"])
            z = {n: (float(r[c]) if r[c] else None) for n, c in cols.items()}
            panel[week] = PanelRow(week, z)
            labels.append(DislocationLabel(week, int(r["label"]), flagged=any(v is None for v in z.values())))
    return panel, labels
