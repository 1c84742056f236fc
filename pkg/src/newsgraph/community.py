"""Community detection on weekly graphs.

Two methods are provided: Louvain modularity optimisation, and a fuzzy
spectral method that factorises a normalised diffusion kernel of the graph
with non-negative matrix factorisation. The fuzzy memberships yield a strict
partition (row argmax) and a per-node stability index (largest over second
largest membership).
"""

from __future__ import annotations

import datetime as dt
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .graph import WeeklyGraph
from .ingest import ArticleRecord, WeeklyCorpus

logger = logging.getLogger(__name__)

DEFAULT_K_RANGE = tuple(range(2, 15))
STABILITY_THRESHOLD = 2.0
# below this the second membership is treated as zero and the node as fully stable
_STABILITY_FLOOR = 1e-12


def _relabel(raw: Sequence, nodes: Sequence[str]) -> dict[str, int]:
    """Map arbitrary labels to 0..c-1 in order of first appearance along ``nodes``."""
    ids: dict = {}
    out = {}
    for v, lab in zip(nodes, raw):
        out[v] = ids.setdefault(lab, len(ids))
    return out


@dataclass(frozen=True)
class Partition:
    week_end: dt.date | None
    labels: dict[str, int]
    modularity: float

    @property
    def n_communities(self) -> int:
        return len(set(self.labels.values()))

    def communities(self) -> dict[int, frozenset[str]]:
        groups: dict[int, set[str]] = defaultdict(set)
        for v, c in self.labels.items():
            groups[c].add(v)
        return {c: frozenset(groups[c]) for c in sorted(groups)}


# ---------------------------------------------------------------- modularity


def modularity(g: WeeklyGraph, labels: Mapping[str, int] | Partition) -> float:
    """Newman modularity summed over ordered node pairs.

    ``Q = 1/(2W) * sum_uv [w_uv - d_u d_v / (2W)] * delta(c_u, c_v)``.
    """
    if isinstance(labels, Partition):
        labels = labels.labels
    missing = [v for v in g.nodes if v not in labels]
    if missing:
        raise KeyError(f"no community label for {missing[:5]}")
    two_w = 2.0 * sum(g.edges.values())
    if two_w == 0:
        return 0.0
    internal: dict[int, float] = defaultdict(float)
    tot: dict[int, float] = defaultdict(float)
    for (u, v), w in g.edges.items():
        tot[labels[u]] += w
        tot[labels[v]] += w
        if labels[u] == labels[v]:
            internal[labels[u]] += 2.0 * w
    return sum(internal[c] / two_w - (tot[c] / two_w) ** 2 for c in tot)


# ---------------------------------------------------------------- Louvain


def _local_moves(
    adj: list[dict[int, float]],
    self_w: list[float],
    comm: list[int],
    rng: np.random.Generator,
) -> bool:
    """Greedy node moves until no move improves modularity. Returns True if any node moved."""
    n = len(adj)
    k = [self_w[i] + sum(adj[i].values()) for i in range(n)]
    m2 = sum(k)
    if m2 == 0:
        return False
    tot: dict[int, float] = defaultdict(float)
    for i in range(n):
        tot[comm[i]] += k[i]
    used = set(comm)
    next_free = max(used) + 1 if used else 0
    eps = 1e-12 * m2
    moved_any = False
    while True:
        moved = False
        for i in rng.permutation(n):
            i = int(i)
            old = comm[i]
            nbrs = list(adj[i])
            rng.shuffle(nbrs)
            w_to: dict[int, float] = {}
            for j in nbrs:
                w_to[comm[j]] = w_to.get(comm[j], 0.0) + adj[i][j]
            tot[old] -= k[i]
            best = old
            best_gain = w_to.get(old, 0.0) - k[i] * tot[old] / m2
            for c, w in w_to.items():
                gain = w - k[i] * tot[c] / m2
                if gain > best_gain + eps:
                    best, best_gain = c, gain
            if tot[old] > eps and best_gain < -eps:
                # leaving for a fresh singleton community has gain 0
                best, best_gain = next_free, 0.0
                next_free += 1
            tot[best] += k[i]
            comm[i] = best
            if best != old:
                moved = moved_any = True
        if not moved:
            return moved_any


def _aggregate(
    adj: list[dict[int, float]], self_w: list[float], comm: list[int]
) -> tuple[list[dict[int, float]], list[float], list[int]]:
    ids = {c: i for i, c in enumerate(sorted(set(comm)))}
    new_comm = [ids[c] for c in comm]
    m = len(ids)
    new_adj: list[dict[int, float]] = [defaultdict(float) for _ in range(m)]
    new_self = [0.0] * m
    for i, nbrs in enumerate(adj):
        ci = new_comm[i]
        new_self[ci] += self_w[i]
        for j, w in nbrs.items():
            cj = new_comm[j]
            if ci == cj:
                new_self[ci] += w
            else:
                new_adj[ci][cj] += w
    return [dict(d) for d in new_adj], new_self, new_comm


def louvain(g: WeeklyGraph, seed: int = 0) -> Partition:
    """Two-phase Louvain modularity optimisation.

    Local moving and aggregation alternate until a level changes nothing. A
    final local-moving pass on the original nodes then guarantees that no
    single node can improve modularity by changing community.
    """
    rng = np.random.default_rng(seed)
    idx = g.index()
    n = g.n
    base_adj: list[dict[int, float]] = [dict() for _ in range(n)]
    for (u, v), w in g.edges.items():
        base_adj[idx[u]][idx[v]] = w
        base_adj[idx[v]][idx[u]] = w
    base_self = [0.0] * n
    membership = list(range(n))  # original node -> current community

    while True:
        adj, self_w = base_adj, base_self
        comm = list(membership)
        # collapse to the current communities before the level loop
        adj, self_w, level_map = _aggregate(adj, self_w, comm)
        membership = level_map
        while True:
            comm = list(range(len(adj)))
            if not _local_moves(adj, self_w, comm, rng):
                break
            adj, self_w, level_map = _aggregate(adj, self_w, comm)
            membership = [level_map[c] for c in membership]
        # refinement on original nodes
        if not _local_moves(base_adj, base_self, membership, rng):
            break

    labels = _relabel(membership, g.nodes)
    return Partition(g.week_end, labels, modularity(g, labels))


# ---------------------------------------------------------------- diffusion kernel


def negative_laplacian(g: WeeklyGraph) -> np.ndarray:
    a = g.adjacency()
    return a - np.diag(a.sum(axis=1))


def expm_symmetric(m: np.ndarray) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a truncated Taylor series."""
    n = m.shape[0]
    norm = np.linalg.norm(m, 1)
    squarings = max(0, math.ceil(math.log2(norm / 0.5))) if norm > 0.5 else 0
    x = m / 2.0**squarings
    result = np.eye(n)
    term = np.eye(n)
    for j in range(1, 40):
        term = term @ x / j
        result += term
        if np.abs(term).max() < 1e-18:
            break
    for _ in range(squarings):
        result = result @ result
    return 0.5 * (result + result.T)


def diffusion_kernel(g: WeeklyGraph, beta: float = 1.0, normalize: bool = True) -> np.ndarray:
    """exp(beta * H) for the negative Laplacian H, optionally cosine-normalised.

    The normalised kernel is ``K_ij / sqrt(K_ii K_jj)`` and has a unit diagonal.
    """
    if beta < 0:
        raise ValueError("beta must be non-negative")
    k = expm_symmetric(beta * negative_laplacian(g))
    if not np.all(np.isfinite(k)):
        raise FloatingPointError("diffusion kernel has non-finite entries")
    if not normalize:
        return k
    d = np.sqrt(np.diag(k))
    k = k / np.outer(d, d)
    np.fill_diagonal(k, 1.0)
    return k


# ---------------------------------------------------------------- NMF


@dataclass
class NMFResult:
    V: np.ndarray
    L: np.ndarray
    errors: list[float]
    converged: bool

    @property
    def error(self) -> float:
        return self.errors[-1]


def nndsvd_init(x: np.ndarray, k: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Non-negative double SVD start; zero entries get small seeded positive jitter."""
    u, s, vt = np.linalg.svd(x)
    n, m = x.shape
    w = np.zeros((n, k))
    h = np.zeros((k, m))
    w[:, 0] = np.sqrt(s[0]) * np.abs(u[:, 0])
    h[0, :] = np.sqrt(s[0]) * np.abs(vt[0, :])
    for j in range(1, k):
        a, b = u[:, j], vt[j, :]
        ap, an = np.maximum(a, 0), np.maximum(-a, 0)
        bp, bn = np.maximum(b, 0), np.maximum(-b, 0)
        ap_n, an_n = np.linalg.norm(ap), np.linalg.norm(an)
        bp_n, bn_n = np.linalg.norm(bp), np.linalg.norm(bn)
        pos, neg = ap_n * bp_n, an_n * bn_n
        if pos >= neg:
            uu, vv, sigma = ap / (ap_n or 1.0), bp / (bp_n or 1.0), pos
        else:
            uu, vv, sigma = an / (an_n or 1.0), bn / (bn_n or 1.0), neg
        scale = np.sqrt(s[j] * sigma)
        w[:, j] = scale * uu
        h[j, :] = scale * vv
    avg = x.mean()
    w[w < 1e-12] = avg * rng.uniform(0, 0.01, size=int((w < 1e-12).sum()))
    h[h < 1e-12] = avg * rng.uniform(0, 0.01, size=int((h < 1e-12).sum()))
    return w, h


def nmf(
    x: np.ndarray,
    k: int,
    seed: int = 0,
    max_iter: int = 500,
    tol: float = 1e-6,
    check_monotone: bool = False,
) -> NMFResult:
    """Lee-Seung multiplicative updates for ``min ||X - V L||_F`` with V, L >= 0.

    Stops when the relative error improvement falls below ``tol``
    (``tol=0`` runs all ``max_iter`` iterations). With ``check_monotone`` an
    AssertionError is raised if an iteration increases the error.
    """
    if np.any(x < 0):
        raise ValueError("NMF input must be non-negative")
    rng = np.random.default_rng(seed)
    v, l = nndsvd_init(x, k, rng)
    tiny = np.finfo(float).tiny
    errors = [float(np.linalg.norm(x - v @ l))]
    converged = False
    for _ in range(max_iter):
        l *= (v.T @ x) / np.maximum(v.T @ v @ l, tiny)
        v *= (x @ l.T) / np.maximum(v @ (l @ l.T), tiny)
        err = float(np.linalg.norm(x - v @ l))
        if check_monotone and err > errors[-1]:
            raise AssertionError(f"NMF error increased from {errors[-1]!r} to {err!r} at iteration {len(errors)}")
        prev = errors[-1]
        errors.append(err)
        if prev > 0 and (prev - err) / prev < tol:
            converged = True
            break
        if err == 0:
            converged = True
            break
    return NMFResult(v, l, errors, converged)


# ---------------------------------------------------------------- fuzzy partition


def stability_indices(membership: np.ndarray) -> np.ndarray:
    """Largest over second-largest entry per row; +inf when the second is ~0."""
    srt = -np.sort(-membership, axis=1)
    first, second = srt[:, 0], srt[:, 1]
    out = np.empty(len(membership))
    for i, (a, b) in enumerate(zip(first, second)):
        if a == b:
            out[i] = 1.0
        elif b < _STABILITY_FLOOR:
            out[i] = math.inf
        else:
            out[i] = a / b
    return out


@dataclass(frozen=True)
class FuzzyPartition:
    nodes: tuple[str, ...]
    membership: np.ndarray
    strict: Partition
    stability: dict[str, float]
    beta: float
    k: int
    reconstruction_error: float
    converged: bool
    columns: tuple[int, ...] = field(default=())
    """Membership column behind each strict label (identity unless a column is never the argmax)."""


def strict_labels(membership: np.ndarray) -> np.ndarray:
    return np.argmax(membership, axis=1)


def fuzzy_partition(
    g: WeeklyGraph,
    k: int,
    beta: float = 1.0,
    seed: int = 0,
    max_iter: int = 500,
    tol: float = 1e-6,
) -> FuzzyPartition:
    """Fuzzy communities from NMF of the normalised diffusion kernel."""
    if not 2 <= k <= g.n - 1:
        raise ValueError(f"k={k} outside 2..{g.n - 1}")
    kernel = diffusion_kernel(g, beta)
    res = nmf(kernel, k, seed=seed, max_iter=max_iter, tol=tol)
    if not res.converged:
        logger.debug("NMF did not converge in %d iterations (week %s, k=%d)", max_iter, g.week_end, k)
    cols = strict_labels(res.V)
    used = tuple(sorted(set(int(c) for c in cols)))
    remap = {c: i for i, c in enumerate(used)}
    labels = {v: remap[int(c)] for v, c in zip(g.nodes, cols)}
    s = stability_indices(res.V)
    return FuzzyPartition(
        nodes=g.nodes,
        membership=res.V,
        strict=Partition(g.week_end, labels, modularity(g, labels)),
        stability=dict(zip(g.nodes, s.tolist())),
        beta=beta,
        k=k,
        reconstruction_error=res.error,
        converged=res.converged,
        columns=used,
    )


# ---------------------------------------------------------------- choosing k


def find_knee(ks: Sequence[int], qs: Sequence[float]) -> tuple[int, bool]:
    """Knee of a modularity-vs-k curve; returns ``(k, degenerate)``.

    Both axes are rescaled to [0, 1] and the knee is the k maximising
    ``Q_norm - k_norm``. A curve with no point above the chord (e.g. linear)
    is degenerate and yields the largest k; a flat curve yields the smallest.
    """
    ks = np.asarray(ks, dtype=float)
    qs = np.asarray(qs, dtype=float)
    if len(ks) == 1:
        return int(ks[0]), True
    qrange = qs.max() - qs.min()
    if qrange <= 1e-12:
        return int(ks.min()), True
    kn = (ks - ks.min()) / (ks.max() - ks.min())
    qn = (qs - qs.min()) / qrange
    d = qn - kn
    if d.max() <= 1e-9:
        return int(ks.max()), True
    return int(ks[int(np.argmax(d))]), False


@dataclass(frozen=True)
class KneeScan:
    ks: tuple[int, ...]
    curves: dict[int, tuple[float, ...]]  # seed -> Q per k
    knees: dict[int, int]
    degenerate: dict[int, bool]
    k: int


def knee_scan(
    g: WeeklyGraph,
    k_range: Iterable[int] = DEFAULT_K_RANGE,
    beta: float = 1.0,
    seeds: Sequence[int] = tuple(range(5)),
) -> KneeScan:
    ks = tuple(k for k in k_range if 2 <= k <= g.n - 1)
    if not ks:
        raise ValueError(f"no admissible k for a graph with {g.n} nodes")
    curves, knees, degenerate = {}, {}, {}
    for seed in seeds:
        qs = tuple(fuzzy_partition(g, k, beta, seed).strict.modularity for k in ks)
        curves[seed] = qs
        knees[seed], degenerate[seed] = find_knee(ks, qs)
        if degenerate[seed]:
            logger.info("week %s seed %d: no knee in Q-vs-k curve", g.week_end, seed)
    counts = Counter(knees.values())
    top = max(counts.values())
    k = min(kk for kk, c in counts.items() if c == top)
    return KneeScan(ks, curves, knees, degenerate, k)


def select_k(
    g: WeeklyGraph,
    k_range: Iterable[int] = DEFAULT_K_RANGE,
    beta: float = 1.0,
    seeds: Sequence[int] = tuple(range(5)),
) -> int:
    """Modal knee of the Q-vs-k curves over NMF seeds (ties to the smallest k)."""
    return knee_scan(g, k_range, beta, seeds).k


# ---------------------------------------------------------------- comparison


def adjusted_rand_index(p1: Mapping[str, int] | Partition, p2: Mapping[str, int] | Partition) -> float:
    a = p1.labels if isinstance(p1, Partition) else p1
    b = p2.labels if isinstance(p2, Partition) else p2
    if set(a) != set(b):
        raise ValueError("partitions cover different node sets")
    nodes = sorted(a)
    n = len(nodes)
    comb2 = lambda x: x * (x - 1) / 2.0  # noqa: E731
    table = Counter((a[v], b[v]) for v in nodes)
    rows = Counter(a[v] for v in nodes)
    cols = Counter(b[v] for v in nodes)
    index = sum(comb2(c) for c in table.values())
    sum_a = sum(comb2(c) for c in rows.values())
    sum_b = sum(comb2(c) for c in cols.values())
    total = comb2(n)
    expected = sum_a * sum_b / total if total else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return (index - expected) / (max_index - expected)


# ---------------------------------------------------------------- article filtering


def unstable_nodes(fp: FuzzyPartition, threshold: float = STABILITY_THRESHOLD) -> set[str]:
    return {v for v, s in fp.stability.items() if s <= threshold}


def stable_article_filter(
    g: WeeklyGraph,
    fp: FuzzyPartition,
    corpus: WeeklyCorpus,
    threshold: float = STABILITY_THRESHOLD,
) -> dict[int, list[ArticleRecord]]:
    """Articles whose three main entities are all stable members of one community."""
    unstable = unstable_nodes(fp, threshold)
    members = fp.strict.communities()
    out: dict[int, list[ArticleRecord]] = {c: [] for c in members}
    for article in corpus.articles:
        top = article.top_entities(3)
        if any(t not in fp.strict.labels or t in unstable for t in top):
            continue
        comms = {fp.strict.labels[t] for t in top}
        if len(comms) == 1:
            out[comms.pop()].append(article)
    return out
