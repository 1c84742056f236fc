"""Weekly entity co-occurrence graphs and their structural measures."""

from __future__ import annotations

import csv
import datetime as dt
import itertools
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .ingest import WeeklyCorpus, weighted_entity_sentiment

logger = logging.getLogger(__name__)

# weight of a single rank-2/rank-3 pair; aggregated weights at or below are dropped
EDGE_THRESHOLD = Fraction(1, 6)

Edge = tuple[str, str]


class DegenerateWeekError(ValueError):
    """The thresholded graph of a week has no edges."""


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, iterations: int):
        super().__init__(message)
        self.iterations = iterations


def edge_key(u: str, v: str) -> Edge:
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class WeeklyGraph:
    """Weighted undirected entity graph of one week.

    ``edges`` is keyed by lexicographically ordered node pairs. ``n_initial``
    is the number of entities mentioned that week, before thresholding and
    giant-component reduction (used for the giant ratio).
    """

    week_end: dt.date | None
    nodes: tuple[str, ...]
    edges: Mapping[Edge, float]
    sentiment: Mapping[str, float] = field(default_factory=dict)
    provenance: Mapping[Edge, frozenset[str]] = field(default_factory=dict)
    n_initial: int = 0

    @classmethod
    def from_edges(
        cls,
        edges: Mapping[tuple[str, str], float] | Iterable[tuple[str, str, float]],
        nodes: Iterable[str] = (),
        week_end: dt.date | None = None,
        sentiment: Mapping[str, float] | None = None,
    ) -> "WeeklyGraph":
        """Convenience constructor for hand-built graphs."""
        items = edges.items() if isinstance(edges, Mapping) else (((u, v), w) for u, v, w in edges)
        clean: dict[Edge, float] = {}
        node_set = set(nodes)
        for (u, v), w in items:
            if u == v:
                raise ValueError(f"self-loop on {u!r}")
            if w <= 0:
                raise ValueError(f"non-positive weight on {(u, v)}")
            clean[edge_key(u, v)] = clean.get(edge_key(u, v), 0.0) + float(w)
            node_set.update((u, v))
        ordered = tuple(sorted(node_set))
        return cls(week_end, ordered, clean, dict(sentiment or {}), {}, len(ordered))

    @property
    def n(self) -> int:
        return len(self.nodes)

    def index(self) -> dict[str, int]:
        return {v: i for i, v in enumerate(self.nodes)}

    def adjacency(self) -> np.ndarray:
        """Dense symmetric weight matrix in ``nodes`` order."""
        idx = self.index()
        a = np.zeros((self.n, self.n))
        for (u, v), w in self.edges.items():
            a[idx[u], idx[v]] = a[idx[v], idx[u]] = w
        return a

    def neighbors(self) -> dict[str, dict[str, float]]:
        nbrs: dict[str, dict[str, float]] = {v: {} for v in self.nodes}
        for (u, v), w in self.edges.items():
            nbrs[u][v] = w
            nbrs[v][u] = w
        return nbrs

    def components(self) -> list[list[str]]:
        """Connected components, largest first; ties broken by smallest member label."""
        nbrs = self.neighbors()
        seen: set[str] = set()
        comps = []
        for start in self.nodes:
            if start in seen:
                continue
            stack, comp = [start], []
            seen.add(start)
            while stack:
                u = stack.pop()
                comp.append(u)
                for v in nbrs[u]:
                    if v not in seen:
                        seen.add(v)
                        stack.append(v)
            comps.append(sorted(comp))
        comps.sort(key=lambda c: (-len(c), c[0]))
        return comps

    def subgraph(self, keep: Iterable[str]) -> "WeeklyGraph":
        keep = set(keep)
        return WeeklyGraph(
            week_end=self.week_end,
            nodes=tuple(v for v in self.nodes if v in keep),
            edges={e: w for e, w in self.edges.items() if e[0] in keep and e[1] in keep},
            sentiment={v: s for v, s in self.sentiment.items() if v in keep},
            provenance={e: p for e, p in self.provenance.items() if e[0] in keep and e[1] in keep},
            n_initial=self.n_initial,
        )


def aggregate_weights(corpus: WeeklyCorpus) -> tuple[dict[Edge, Fraction], dict[Edge, set[str]]]:
    """Exact summed inverse-rank-product weights over every co-mentioned pair."""
    weights: dict[Edge, Fraction] = defaultdict(Fraction)
    provenance: dict[Edge, set[str]] = defaultdict(set)
    for article in corpus.articles:
        for a, b in itertools.combinations(article.entities, 2):
            key = edge_key(a.text, b.text)
            weights[key] += Fraction(1, a.rank * b.rank)
            provenance[key].add(article.article_id)
    return dict(weights), dict(provenance)


def node_sentiments(corpus: WeeklyCorpus) -> dict[str, float]:
    """Mean rank-weighted sentiment of each entity over all its mentions of the week."""
    sums: dict[str, float] = defaultdict(float)
    counts: dict[str, int] = defaultdict(int)
    for article in corpus.articles:
        for e in article.entities:
            sums[e.text] += weighted_entity_sentiment(e)
            counts[e.text] += 1
    return {v: sums[v] / counts[v] for v in sorted(sums)}


def threshold_graph(corpus: WeeklyCorpus, threshold: Fraction = EDGE_THRESHOLD) -> WeeklyGraph:
    """Co-occurrence graph keeping every entity, with edges of weight <= threshold removed."""
    if not corpus.articles:
        raise ValueError("empty corpus")
    weights, provenance = aggregate_weights(corpus)
    sentiment = node_sentiments(corpus)
    kept = {e: w for e, w in weights.items() if w > threshold}
    return WeeklyGraph(
        week_end=corpus.week_end,
        nodes=tuple(sentiment),
        edges={e: float(w) for e, w in sorted(kept.items())},
        sentiment=sentiment,
        provenance={e: frozenset(provenance[e]) for e in sorted(kept)},
        n_initial=len(sentiment),
    )


def giant_component(g: WeeklyGraph) -> WeeklyGraph:
    if not g.edges:
        raise DegenerateWeekError(f"week {g.week_end}: no edge survives thresholding")
    return g.subgraph(g.components()[0])


def build_graph(corpus: WeeklyCorpus, threshold: Fraction = EDGE_THRESHOLD) -> WeeklyGraph:
    """Thresholded co-occurrence graph of a week reduced to its giant component."""
    return giant_component(threshold_graph(corpus, threshold))


def giant_ratio(g: WeeklyGraph) -> float:
    """Share of all entities of the week that lie in the giant component.

    ``g`` is the thresholded graph before reduction, isolated entities included.
    """
    comps = g.components()
    total = max(g.n_initial, g.n)
    return len(comps[0]) / total


def degree_centrality(g: WeeklyGraph) -> dict[str, float]:
    deg = {v: 0.0 for v in g.nodes}
    for (u, v), w in g.edges.items():
        deg[u] += w
        deg[v] += w
    return deg


def eigenvector_centrality(g: WeeklyGraph, tol: float = 1e-10, max_iter: int = 10000) -> dict[str, float]:
    """Perron eigenvector of the weighted adjacency matrix by power iteration.

    The iteration runs on ``A + c I`` with ``c`` half the largest weighted
    degree; the shift keeps the Perron vector but stops the oscillation that
    bipartite graphs cause with plain ``A``. Returns a nonnegative vector of
    unit Euclidean norm.
    """
    if g.n == 0:
        raise ValueError("empty graph")
    if g.n == 1:
        return {g.nodes[0]: 1.0}
    a = g.adjacency()
    shift = 0.5 * a.sum(axis=1).max()
    x = np.full(g.n, 1.0 / np.sqrt(g.n))
    for it in range(1, max_iter + 1):
        y = a @ x + shift * x
        y /= np.linalg.norm(y)
        if np.max(np.abs(y - x)) < tol:
            x = y
            break
        x = y
    else:
        raise ConvergenceError(f"power iteration did not converge in {max_iter} iterations", max_iter)
    x = np.clip(x, 0.0, None)
    x /= np.linalg.norm(x)
    return dict(zip(g.nodes, x.tolist()))


def avg_clustering_coefficient(g: WeeklyGraph) -> float:
    """Mean local clustering coefficient of the unweighted skeleton."""
    if g.n == 0:
        raise ValueError("empty graph")
    nbrs = {v: set(d) for v, d in g.neighbors().items()}
    total = 0.0
    for v in g.nodes:
        k = len(nbrs[v])
        if k < 2:
            continue
        links = sum(1 for a, b in itertools.combinations(sorted(nbrs[v]), 2) if b in nbrs[a])
        total += 2.0 * links / (k * (k - 1))
    return total / g.n


def top_k(values: Mapping[str, float], k: int = 3) -> list[tuple[str, float]]:
    """Highest values first; ties by node label."""
    return sorted(values.items(), key=lambda kv: (-kv[1], kv[0]))[:k]


@dataclass(frozen=True)
class CentralityReport:
    week_end: dt.date | None
    degree: dict[str, float]
    eigenvector: dict[str, float]

    @property
    def top3_by_degree(self) -> list[tuple[str, float]]:
        return top_k(self.degree)

    @property
    def top3_by_eigenvector(self) -> list[tuple[str, float]]:
        return top_k(self.eigenvector)


def centrality_report(g: WeeklyGraph, tol: float = 1e-10, max_iter: int = 10000) -> CentralityReport:
    return CentralityReport(g.week_end, degree_centrality(g), eigenvector_centrality(g, tol, max_iter))


# ---------------------------------------------------------------- exporters


def write_graphml(g: WeeklyGraph, path: str | Path) -> None:
    import networkx as nx

    nxg = nx.Graph()
    for v in g.nodes:
        nxg.add_node(v, sentiment=float(g.sentiment.get(v, 0.0)))
    for (u, v), w in g.edges.items():
        nxg.add_edge(u, v, weight=float(w))
    nx.write_graphml(nxg, str(path))


def _dot_id(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def write_dot(g: WeeklyGraph, path: str | Path) -> None:
    lines = ["graph week {"]
    for v in g.nodes:
        lines.append(f"  {_dot_id(v)} [sentiment={g.sentiment.get(v, 0.0)!r}];")
    for (u, v), w in g.edges.items():
        lines.append(f"  {_dot_id(u)} -- {_dot_id(v)} [weight={w!r}];")
    lines.append("}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_centrality_csv(reports: Iterable[CentralityReport], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["week", "node", "degree", "eigenvector"])
        for r in reports:
            week = r.week_end.isoformat() if r.week_end else ""
            for v in sorted(r.degree):
                w.writerow([week, v, repr(r.degree[v]), repr(r.eigenvector[v])])


def graph_to_json(g: WeeklyGraph) -> dict:
    return {
        "week_end": g.week_end.isoformat() if g.week_end else None,
        "nodes": list(g.nodes),
        "sentiment": {v: g.sentiment.get(v, 0.0) for v in g.nodes},
        "edges": [[u, v, w, sorted(g.provenance.get((u, v), ()))] for (u, v), w in g.edges.items()],
        "n_initial": g.n_initial,
    }


def graph_from_json(obj: dict) -> WeeklyGraph:
    edges = {(u, v): w for u, v, w, _ in obj["edges"]}
    return WeeklyGraph(
        week_end=dt.date.fromisoformat(obj["week_end"]) if obj["week_end"] else None,
        nodes=tuple(obj["nodes"]),
        edges=edges,
        sentiment=dict(obj["sentiment"]),
        provenance={(u, v): frozenset(p) for u, v, _, p in obj["edges"]},
        n_initial=obj["n_initial"],
    )
