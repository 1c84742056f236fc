"""Weekly feature table for the dislocation regressions."""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

START_DATE = dt.date(2020, 6, 1)

MARKET_FEATURES = ("z-vols", "z-volsD")
NEWS_FEATURES = ("N-avgSent", "N-stdSent")
GRAPH_FEATURES = ("giantRatio", "clustCoeff", "eigFirst", "eigRatio", "comm", "n2v-entropy")
FEATURE_NAMES = MARKET_FEATURES + NEWS_FEATURES + GRAPH_FEATURES
CSV_HEADER = ("week_end",) + FEATURE_NAMES + ("label", "label_next")


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class WeekStats:
    """Per-week graph and news measurements feeding one feature row."""

    week_end: dt.date
    article_sentiments: tuple[float, ...]
    giant_ratio: float
    clustering: float
    eigenvector: tuple[float, ...]
    comm: int
    n2v_entropy: float


@dataclass(frozen=True)
class FeatureRow:
    week_end: dt.date
    values: dict[str, float]
    label: int
    label_next: int | None

    def __getitem__(self, name: str) -> float:
        return self.values[name]


@dataclass
class FeatureMatrix:
    rows: list[FeatureRow]
    names: tuple[str, ...] = FEATURE_NAMES
    means: dict[str, float] = field(default_factory=dict)
    stds: dict[str, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.rows)

    def array(self, names: Sequence[str] | None = None) -> np.ndarray:
        names = tuple(names or self.names)
        return np.array([[r.values[n] for n in names] for r in self.rows], dtype=float).reshape(len(self.rows), len(names))

    def labels(self, which: str = "label") -> np.ndarray:
        return np.array([getattr(r, which) for r in self.rows], dtype=int)

    def predictive(self) -> "FeatureMatrix":
        """Rows that have a next-week label."""
        return FeatureMatrix([r for r in self.rows if r.label_next is not None], self.names, self.means, self.stds)

    def unstandardize(self) -> "FeatureMatrix":
        if not self.means:
            return self
        rows = [
            FeatureRow(r.week_end, {n: r.values[n] * self.stds[n] + self.means[n] for n in self.names}, r.label, r.label_next)
            for r in self.rows
        ]
        return FeatureMatrix(rows, self.names)


def eigen_features(values: Sequence[float]) -> tuple[float, float]:
    """Largest eigenvector centrality and its ratio to the second largest."""
    if len(values) < 2:
        raise FeatureError("eigRatio needs at least two nodes")
    top = sorted(values, reverse=True)
    if top[1] <= 0:
        raise FeatureError("second eigenvector centrality is zero")
    return top[0], top[0] / top[1]


def assemble_features(
    stats: Sequence[WeekStats],
    z_means: Mapping[dt.date, float | None],
    labels: Mapping[dt.date, int],
    start_date: dt.date = START_DATE,
) -> FeatureMatrix:
    """One row per week from ``start_date`` with every feature available.

    ``z_means`` maps weeks to the mean of the four index z-scores and
    ``labels`` to dislocation labels. ``label_next`` is the label of the
    following calendar week, or None when that week is unlabelled.
    """
    rows = []
    for s in sorted(stats, key=lambda s: s.week_end):
        week = s.week_end
        if week < start_date:
            continue
        prev = week - dt.timedelta(days=7)
        nxt = week + dt.timedelta(days=7)
        z_now, z_prev = z_means.get(week), z_means.get(prev)
        if z_now is None or z_prev is None or week not in labels:
            logger.info("week %s dropped: market data missing", week)
            continue
        if len(s.article_sentiments) < 1:
            logger.info("week %s dropped: no articles", week)
            continue
        try:
            eig_first, eig_ratio = eigen_features(s.eigenvector)
        except FeatureError as exc:
            logger.info("week %s dropped: %s", week, exc)
            continue
        sent = np.asarray(s.article_sentiments, dtype=float)
        values = {
            "z-vols": z_now,
            "z-volsD": z_now - z_prev,
            "N-avgSent": float(sent.mean()),
            "N-stdSent": float(sent.std()),
            "giantRatio": s.giant_ratio,
            "clustCoeff": s.clustering,
            "eigFirst": eig_first,
            "eigRatio": eig_ratio,
            "comm": float(s.comm),
            "n2v-entropy": s.n2v_entropy,
        }
        if not all(math.isfinite(v) for v in values.values()):
            logger.info("week %s dropped: non-finite feature", week)
            continue
        rows.append(FeatureRow(week, values, int(labels[week]), labels.get(nxt)))
    if not rows:
        raise FeatureError("feature matrix is empty")
    return FeatureMatrix(rows)


def standardize(m: FeatureMatrix, names: Sequence[str] | None = None) -> FeatureMatrix:
    """Column-wise ``(x - mean) / std`` with the population std; parameters are kept."""
    names = tuple(names or m.names)
    if len(m) < 2:
        raise FeatureError("need at least two rows to standardize")
    x = m.array(names)
    means = x.mean(axis=0)
    stds = x.std(axis=0)
    for n, s, col in zip(names, stds, x.T):
        if s == 0 or np.ptp(col) == 0:
            raise FeatureError(f"feature {n!r} is constant")
    z = (x - means) / stds
    rows = [FeatureRow(r.week_end, dict(zip(names, zr.tolist())), r.label, r.label_next) for r, zr in zip(m.rows, z)]
    return FeatureMatrix(rows, names, dict(zip(names, means.tolist())), dict(zip(names, stds.tolist())))


def correlation_matrix(m: FeatureMatrix, names: Sequence[str] | None = None) -> tuple[tuple[str, ...], np.ndarray]:
    """Pearson correlations among the (by default non-market) features."""
    names = tuple(names or [n for n in m.names if n not in MARKET_FEATURES])
    if len(m) < 3:
        raise FeatureError("need at least three rows for correlations")
    return names, np.corrcoef(m.array(names), rowvar=False)


def write_features_csv(m: FeatureMatrix, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in m.rows:
            w.writerow(
                [r.week_end.isoformat()]
                + [repr(r.values[n]) for n in FEATURE_NAMES]
                + [r.label, "" if r.label_next is None else r.label_next]
            )


def read_features_csv(path: str | Path) -> FeatureMatrix:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise FeatureError(f"{path}: unexpected header {reader.fieldnames}")
        for r in reader:
            rows.append(
                FeatureRow(
                    dt.date.fromisoformat(r["week_end"]),
                    {n: float(r[n]) for n in FEATURE_NAMES},
                    int(r["label"]),
                    int(r["label_next"]) if r["label_next"] else None,
                )
            )
    if not rows:
        raise FeatureError(f"{path}: no rows")
    return FeatureMatrix(rows)


def write_correlation_csv(names: Sequence[str], corr: np.ndarray, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature"] + list(names))
        for n, row in zip(names, corr):
            w.writerow([n] + [repr(float(x)) for x in row])
