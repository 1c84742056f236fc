"""Tabular stand-ins for the figures: timelines, series and PCA coordinates."""

from __future__ import annotations

import csv
import datetime as dt
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .graph import CentralityReport, top_k

_TOKEN = re.compile(r"[a-z][a-z0-9'\-]+")
# short English stop list for term-frequency tables
STOPWORDS = frozenset(
    """a an and are as at be been but by for from has have he in is it its of on or that the their this to was
    were will with which who would after over into than also about more said says not no they we us""".split()
)


@dataclass(frozen=True)
class TimelineSeries:
    metric: str
    rows: tuple[tuple, ...]  # (week, rank, entity, value, sentiment)


def top_entities_timeline(
    reports: Sequence[CentralityReport],
    metric: str = "eigenvector",
    sentiment: Mapping[dt.date, Mapping[str, float]] | None = None,
    min_appearances: int = 5,
) -> TimelineSeries:
    """Weekly top-3 entities by ``metric``, keeping entities in at least ``min_appearances`` weekly top-3 sets."""
    weekly = []
    for r in sorted(reports, key=lambda r: r.week_end):
        values = r.eigenvector if metric == "eigenvector" else r.degree
        if not values:
            continue
        weekly.append((r.week_end, top_k(values, 3)))
    counts = Counter(v for _, top in weekly for v, _ in top)
    keep = {v for v, c in counts.items() if c >= min_appearances}
    rows = []
    for week, top in weekly:
        for rank, (v, val) in enumerate(top, 1):
            if v in keep:
                s = (sentiment or {}).get(week, {}).get(v, float("nan"))
                rows.append((week, rank, v, val, s))
    return TimelineSeries(metric, tuple(rows))


@dataclass(frozen=True)
class PCAResult:
    labels: tuple[str, ...]
    coordinates: np.ndarray
    explained_variance_ratio: np.ndarray
    components: np.ndarray
    mean: np.ndarray


def pca_coordinates(vectors: Mapping[str, np.ndarray] | np.ndarray, n_components: int = 2) -> PCAResult:
    """Project centred data on the leading eigenvectors of its covariance matrix."""
    if isinstance(vectors, Mapping):
        labels = tuple(sorted(vectors))
        x = np.vstack([np.asarray(vectors[t], dtype=float) for t in labels])
    else:
        x = np.asarray(vectors, dtype=float)
        labels = tuple(str(i) for i in range(len(x)))
    if len(x) < 3:
        raise ValueError("need at least three vectors")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = xc.T @ xc / (len(x) - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = np.clip(evals[order], 0.0, None), evecs[:, order]
    total = evals.sum()
    if total <= 0:
        raise ValueError("data has no variance")
    comps = evecs[:, :n_components]
    # deterministic orientation: largest-magnitude loading positive
    signs = np.sign(comps[np.argmax(np.abs(comps), axis=0), range(comps.shape[1])])
    comps = comps * np.where(signs == 0, 1.0, signs)
    return PCAResult(labels, xc @ comps, evals[:n_components] / total, comps, mean)


def term_frequencies(texts: Iterable[str], top: int = 20) -> list[tuple[str, int]]:
    counts = Counter(t for text in texts for t in _TOKEN.findall(text.lower()) if t not in STOPWORDS)
    return sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top]


def write_rows(path: str | Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """CSV with dates as ISO strings and floats in repr form, sorted and deduplicated."""

    def cell(v):
        if isinstance(v, dt.date):
            return v.isoformat()
        if isinstance(v, float):
            return repr(v)
        return v

    out = sorted({tuple(cell(v) for v in r) for r in rows}, key=lambda r: tuple(str(c) for c in r))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(out)


def write_timeline_csv(series: TimelineSeries, path: str | Path) -> None:
    write_rows(path, ["week", "rank", "entity", series.metric, "sentiment"], series.rows)


def write_pca_csv(result: PCAResult, path: str | Path) -> None:
    rows = [(lab, float(a), float(b)) for lab, (a, b) in zip(result.labels, result.coordinates[:, :2])]
    write_rows(path, ["label", "pc1", "pc2"], rows)
