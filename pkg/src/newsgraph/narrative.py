"""Narrative tracking: linking communities across consecutive weeks."""

from __future__ import annotations

import csv
import datetime as dt
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

ONE_WEEK = dt.timedelta(days=7)

Communities = Mapping[int, frozenset[str]]


def jaccard(a: frozenset[str] | set[str], b: frozenset[str] | set[str]) -> float:
    union = len(a | b)
    return len(a & b) / union if union else 0.0


@dataclass(frozen=True)
class JaccardMatrix:
    week_pair: tuple[dt.date | None, dt.date | None]
    row_ids: tuple[int, ...]
    col_ids: tuple[int, ...]
    matrix: np.ndarray
    overlaps: dict[tuple[int, int], frozenset[str]] = field(default_factory=dict)


def jaccard_matrix(
    p1: Communities,
    p2: Communities,
    week_pair: tuple[dt.date | None, dt.date | None] = (None, None),
) -> JaccardMatrix:
    """Pairwise Jaccard similarity; pairs sharing at most one node score 0."""
    if not p1 or not p2:
        raise ValueError("both weeks need at least one community")
    rows, cols = tuple(sorted(p1)), tuple(sorted(p2))
    m = np.zeros((len(rows), len(cols)))
    overlaps = {}
    for i, r in enumerate(rows):
        for j, c in enumerate(cols):
            common = frozenset(p1[r] & p2[c])
            if len(common) > 1:
                m[i, j] = jaccard(p1[r], p2[c])
                overlaps[(r, c)] = common
    return JaccardMatrix(week_pair, rows, cols, m, overlaps)


def match_communities(m: JaccardMatrix | np.ndarray) -> dict[int, int]:
    """Pairs whose entry is positive and the unique maximum of both its row and column."""
    mat = m.matrix if isinstance(m, JaccardMatrix) else np.asarray(m)
    rows = m.row_ids if isinstance(m, JaccardMatrix) else tuple(range(mat.shape[0]))
    cols = m.col_ids if isinstance(m, JaccardMatrix) else tuple(range(mat.shape[1]))
    out = {}
    for i in range(mat.shape[0]):
        row = mat[i]
        j = int(np.argmax(row))
        best = row[j]
        if best <= 0 or np.count_nonzero(row == best) > 1:
            continue
        col = mat[:, j]
        if col.max() == best and np.count_nonzero(col == best) == 1:
            out[rows[i]] = cols[j]
    return out


@dataclass(frozen=True)
class WeekMatching:
    week_from: dt.date
    week_to: dt.date
    mapping: dict[int, int]
    overlaps: dict[tuple[int, int], frozenset[str]]
    from_ids: tuple[int, ...] = ()
    to_ids: tuple[int, ...] = ()


def weekly_matchings(weeks: Sequence[tuple[dt.date, Communities]]) -> list[WeekMatching]:
    """Matchings between each pair of calendar-consecutive weeks."""
    out = []
    for (w1, c1), (w2, c2) in zip(weeks, weeks[1:]):
        if w2 - w1 != ONE_WEEK or not c1 or not c2:
            continue
        jm = jaccard_matrix(c1, c2, (w1, w2))
        mapping = match_communities(jm)
        overlaps = {(a, b): jm.overlaps[(a, b)] for a, b in mapping.items()}
        out.append(WeekMatching(w1, w2, mapping, overlaps, jm.row_ids, jm.col_ids))
    return out


@dataclass(frozen=True)
class NarrativeChain:
    start_week: dt.date
    links: tuple[tuple[dt.date, int, frozenset[str]], ...]
    broken_at: dt.date | None

    def __len__(self) -> int:
        return len(self.links)


def build_chains(
    matchings: Sequence[WeekMatching],
    start_week: dt.date,
    start_community: int,
    communities: Communities | None = None,
) -> NarrativeChain:
    """Follow matched communities forward from ``start_community``.

    The first link carries the starting community's members (when given) as
    its node set; later links carry the overlap with the previous week.
    ``broken_at`` is the first week with no match, or None if the chain
    reaches the end of the covered span.
    """
    by_week = {m.week_from: m for m in matchings}
    if communities is not None:
        known = set(communities)
    else:
        known = set()
        for m in matchings:
            if m.week_from == start_week:
                known.update(m.from_ids or m.mapping)
            if m.week_to == start_week:
                known.update(m.to_ids or m.mapping.values())
    if start_community not in known:
        raise KeyError(f"unknown community {start_community} at week {start_week}")
    members = frozenset(communities[start_community]) if communities is not None else frozenset()
    links = [(start_week, start_community, members)]
    week, comm = start_week, start_community
    last_week = max((m.week_to for m in matchings), default=start_week)
    broken_at = None
    while week < last_week:
        m = by_week.get(week)
        if m is None or comm not in m.mapping:
            broken_at = week + ONE_WEEK
            break
        nxt = m.mapping[comm]
        week = m.week_to
        links.append((week, nxt, m.overlaps[(comm, nxt)]))
        comm = nxt
    return NarrativeChain(start_week, tuple(links), broken_at)


def all_chains(
    weeks: Sequence[tuple[dt.date, Communities]], matchings: Sequence[WeekMatching]
) -> list[NarrativeChain]:
    """One chain per community that is not the continuation of an earlier one."""
    continued: set[tuple[dt.date, int]] = set()
    for m in matchings:
        continued.update((m.week_to, b) for b in m.mapping.values())
    chains = []
    for week, comms in weeks:
        for c in sorted(comms):
            if (week, c) not in continued:
                chains.append(build_chains(matchings, week, c, comms))
    return chains


def track_keyword(
    keyword: str, partitions: Iterable[tuple[dt.date, Mapping[str, int]]]
) -> list[tuple[dt.date, int, frozenset[str]]]:
    """Community (and its members) containing ``keyword`` in each week it appears."""
    out = []
    for week, labels in partitions:
        if keyword in labels:
            c = labels[keyword]
            out.append((week, c, frozenset(v for v, lab in labels.items() if lab == c)))
    return out


def write_chains_csv(chains: Iterable[NarrativeChain], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["start_week", "week", "community", "overlap_nodes"])
        for ch in chains:
            for week, c, nodes in ch.links:
                w.writerow([ch.start_week.isoformat(), week.isoformat(), c, ";".join(sorted(nodes))])


def write_jaccard_csv(jm: JaccardMatrix, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["community"] + [str(c) for c in jm.col_ids])
        for r, row in zip(jm.row_ids, jm.matrix):
            w.writerow([r] + [repr(float(x)) for x in row])
