"""Seeded synthetic fixtures: planted-partition graphs, corpora and index series."""

from __future__ import annotations

import datetime as dt
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from .graph import WeeklyGraph
from .market import INDEX_NAMES


def planted_partition(
    sizes: Sequence[int],
    p_in: float = 0.8,
    p_out: float = 0.02,
    seed: int = 0,
    weight_range: tuple[float, float] = (0.5, 1.0),
) -> tuple[WeeklyGraph, dict[str, int]]:
    """Connected stochastic-block graph and its ground-truth block labels.

    Draws are repeated until the graph is connected.
    """
    rng = np.random.default_rng(seed)
    blocks = np.repeat(np.arange(len(sizes)), sizes)
    n = len(blocks)
    names = [f"n{i:03d}" for i in range(n)]
    for _ in range(1000):
        edges = {}
        for i in range(n):
            for j in range(i + 1, n):
                p = p_in if blocks[i] == blocks[j] else p_out
                if rng.random() < p:
                    edges[(names[i], names[j])] = float(rng.uniform(*weight_range))
        g = WeeklyGraph.from_edges(edges, nodes=names)
        if g.n == n and len(g.components()) == 1:
            return g, {v: int(b) for v, b in zip(names, blocks)}
    raise RuntimeError("could not draw a connected planted-partition graph")


def two_cliques(size: int = 5, bridge: float | None = 1.0, weight: float = 1.0) -> WeeklyGraph:
    """Two equal cliques ``a*`` and ``b*``, optionally joined by one bridge edge."""
    edges = {}
    for prefix in "ab":
        for i in range(size):
            for j in range(i + 1, size):
                edges[(f"{prefix}{i}", f"{prefix}{j}")] = weight
    if bridge is not None:
        edges[("a0", "b0")] = bridge
    return WeeklyGraph.from_edges(edges)


# ---------------------------------------------------------------- corpora

_TOPICS = {
    "monetary": ["federal reserve", "inflation", "interest rates", "bond yields", "treasury", "jerome powell", "mortgage rates"],
    "energy": ["oil prices", "opec", "natural gas", "saudi arabia", "crude inventories", "energy stocks", "gasoline"],
    "geopolitics": ["russia", "ukraine", "sanctions", "nato", "european union", "kremlin", "grain exports"],
    "tech": ["apple", "microsoft", "nvidia", "semiconductors", "artificial intelligence", "nasdaq", "cloud computing"],
    "china": ["china", "evergrande", "yuan", "hong kong", "property market", "beijing", "exports"],
}
_MOOD = {"monetary": -0.2, "energy": 0.1, "geopolitics": -0.5, "tech": 0.4, "china": -0.3}
_WORDS = "markets investors rally selloff growth outlook earnings policy risk demand supply forecast".split()


def synthetic_corpus(
    n_weeks: int = 8,
    articles_per_week: int = 40,
    start: dt.date = dt.date(2022, 1, 2),
    seed: int = 0,
) -> list[dict]:
    """Articles drawn from a few drifting topics; returns JSON-ready records."""
    rng = np.random.default_rng(seed)
    topics = sorted(_TOPICS)
    records = []
    for w in range(n_weeks):
        week = start + dt.timedelta(days=7 * w)
        # topic popularity drifts week to week
        weights = rng.dirichlet(np.full(len(topics), 2.0))
        shock = rng.normal(0, 0.3)
        for a in range(articles_per_week):
            topic = topics[int(rng.choice(len(topics), p=weights))]
            pool = list(_TOPICS[topic])
            if rng.random() < 0.3:
                other = topics[int(rng.integers(len(topics)))]
                pool += list(rng.choice(_TOPICS[other], size=2, replace=False))
            n_ent = int(rng.integers(3, 6))
            chosen = list(dict.fromkeys(rng.choice(pool, size=min(n_ent, len(pool)), replace=False)))
            ents = []
            for rank, text in enumerate(chosen, 1):
                s = float(np.clip(_MOOD[topic] + shock + rng.normal(0, 0.3), -1, 1))
                ents.append({"text": str(text).title(), "rank": rank, "sentiment": round(s, 3)})
            day = week - dt.timedelta(days=int(rng.integers(0, 7)))
            summary = " ".join(rng.choice(_WORDS, size=6)) + f" {chosen[0]} {chosen[1]}"
            records.append(
                {
                    "article_id": f"{week.isoformat()}-{a:03d}",
                    "week_end": day.isoformat(),
                    "entities": ents,
                    "summary": summary,
                    "abstract": summary + " " + " ".join(rng.choice(_WORDS, size=12)),
                    "overall_sentiment": round(float(np.clip(_MOOD[topic] + shock, -1, 1)), 3),
                }
            )
    return records


def synthetic_indices(
    start: dt.date, n_weeks: int, seed: int = 0
) -> dict[str, list[tuple[dt.date, float]]]:
    """Four correlated positive index series sharing a common stress factor."""
    rng = np.random.default_rng(seed)
    common = np.zeros(n_weeks)
    for t in range(1, n_weeks):
        common[t] = 0.8 * common[t - 1] + rng.normal(0, 1.0)
    out = {}
    for k, name in enumerate(INDEX_NAMES):
        level = 20.0 + 5 * k
        idio = rng.normal(0, 0.5, n_weeks)
        vals = level * np.exp(0.08 * common + 0.03 * idio)
        out[name] = [(start + dt.timedelta(days=7 * t), round(float(v), 4)) for t, v in enumerate(vals)]
    return out


def write_fixture(
    directory: str | Path,
    n_weeks: int = 8,
    articles_per_week: int = 40,
    start: dt.date = dt.date(2022, 1, 2),
    history_weeks: int = 20,
    seed: int = 0,
) -> dict:
    """Write corpus.jsonl and one CSV per index; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    corpus = directory / "corpus.jsonl"
    with open(corpus, "w", encoding="utf-8") as fh:
        for rec in synthetic_corpus(n_weeks, articles_per_week, start, seed):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    series = synthetic_indices(start - dt.timedelta(days=7 * history_weeks), n_weeks + history_weeks + 1, seed + 1)
    paths = {}
    for name, obs in series.items():
        p = directory / f"{name.lower()}.csv"
        with open(p, "w", encoding="utf-8") as fh:
            fh.write("week_end,value\n")
            for day, v in obs:
                fh.write(f"{day.isoformat()},{v!r}\n")
        paths[name] = p
    return {"corpus": corpus, "indices": paths}
