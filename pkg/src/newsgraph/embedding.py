"""node2vec embeddings, the n2v-entropy feature and word-vector clustering."""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .graph import WeeklyGraph

logger = logging.getLogger(__name__)

BIN_WIDTH = 0.1


@dataclass(frozen=True)
class WalkConfig:
    dims: int = 8
    walk_length: int = 20
    walks_per_node: int = 20
    p_emb: float = 1.0
    q_emb: float = 1.0
    window: int = 5
    negatives_per_positive: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    seed: int = 0

    def __post_init__(self):
        for name in ("dims", "walk_length", "walks_per_node", "window", "negatives_per_positive"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.p_emb <= 0 or self.q_emb <= 0 or self.learning_rate <= 0:
            raise ValueError("p_emb, q_emb and learning_rate must be positive")

    def with_seed(self, seed: int) -> "WalkConfig":
        return replace(self, seed=seed)


# ---------------------------------------------------------------- walks


class _Transitions:
    """Cumulative transition tables of the second-order walk, built lazily."""

    def __init__(self, g: WeeklyGraph, p: float, q: float):
        idx = g.index()
        nbrs = g.neighbors()
        self.nbr_ids = [np.array([idx[u] for u in sorted(nbrs[v])], dtype=np.int64) for v in g.nodes]
        self.nbr_w = [np.array([nbrs[v][u] for u in sorted(nbrs[v])]) for v in g.nodes]
        self.nbr_set = [set(a.tolist()) for a in self.nbr_ids]
        self.p, self.q = p, q
        self.first = [self._cumulative(w) for w in self.nbr_w]
        self.second: dict[tuple[int, int], np.ndarray] = {}

    @staticmethod
    def _cumulative(weights: np.ndarray) -> np.ndarray:
        probs = weights / weights.sum()
        assert abs(probs.sum() - 1.0) < 1e-9
        c = np.cumsum(probs)
        c[-1] = 1.0
        return c

    def probabilities(self, prev: int, cur: int) -> np.ndarray:
        """Normalised transition probabilities from ``cur`` having arrived from ``prev``."""
        ids, w = self.nbr_ids[cur], self.nbr_w[cur]
        bias = np.where(
            ids == prev, 1.0 / self.p, np.where([z in self.nbr_set[prev] for z in ids.tolist()], 1.0, 1.0 / self.q)
        )
        pi = w * bias
        return pi / pi.sum()

    def step(self, prev: int, cur: int, u: float) -> int:
        if prev < 0:
            table = self.first[cur]
        else:
            table = self.second.get((prev, cur))
            if table is None:
                table = self._cumulative(self.probabilities(prev, cur))
                self.second[(prev, cur)] = table
        return int(self.nbr_ids[cur][min(np.searchsorted(table, u, side="right"), len(table) - 1)])


def generate_walks(g: WeeklyGraph, cfg: WalkConfig) -> list[list[str]]:
    """Second-order biased random walks, ``walks_per_node`` from every node.

    From node ``y`` reached from ``x`` the next node ``z`` is drawn with
    weight ``w_yz / p`` if ``z == x``, ``w_yz`` if ``z`` neighbours ``x`` and
    ``w_yz / q`` otherwise; the first step is proportional to edge weight.
    Each source node has its own RNG stream derived from ``cfg.seed``.
    """
    trans = _Transitions(g, cfg.p_emb, cfg.q_emb)
    walks: list[list[str]] = []
    streams = np.random.SeedSequence(cfg.seed).spawn(g.n)
    per_node = []
    for start in range(g.n):
        rng = np.random.default_rng(streams[start])
        node_walks = []
        for _ in range(cfg.walks_per_node):
            walk = [start]
            prev = -1
            if len(trans.nbr_ids[start]):
                draws = rng.random(cfg.walk_length - 1)
                for u in draws:
                    nxt = trans.step(prev, walk[-1], u)
                    prev = walk[-1]
                    walk.append(nxt)
            node_walks.append(walk)
        per_node.append(node_walks)
    # interleave so that consecutive walks start from different nodes
    for r in range(cfg.walks_per_node):
        for start in range(g.n):
            walks.append([g.nodes[i] for i in per_node[start][r]])
    return walks


# ---------------------------------------------------------------- skip-gram


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sgns_loss_and_grad(
    center: np.ndarray, context: np.ndarray, negatives: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Negative-sampling loss of one (center, context) pair and its gradients.

    ``loss = -log s(c.o) - sum_n log s(-c.n)``; returns
    ``(loss, d/dcenter, d/dcontext, d/dnegatives)``.
    """
    pos = float(center @ context)
    neg = negatives @ center
    loss = -math.log(_sigmoid(pos)) - float(np.sum(np.log(_sigmoid(-neg))))
    g_pos = _sigmoid(pos) - 1.0
    g_neg = _sigmoid(neg)
    d_center = g_pos * context + g_neg @ negatives
    d_context = g_pos * center
    d_negs = np.outer(g_neg, center)
    return loss, d_center, d_context, d_negs


@dataclass(frozen=True)
class NodeEmbedding:
    week_end: dt.date | None
    nodes: tuple[str, ...]
    matrix: np.ndarray
    losses: tuple[float, ...] = ()

    @property
    def vectors(self) -> dict[str, np.ndarray]:
        return dict(zip(self.nodes, self.matrix))


def _training_pairs(walks: Sequence[Sequence[int]], window: int) -> np.ndarray:
    pairs = []
    for walk in walks:
        n = len(walk)
        for i, c in enumerate(walk):
            for j in range(max(0, i - window), min(n, i + window + 1)):
                if j != i:
                    pairs.append((c, walk[j]))
    return np.array(pairs, dtype=np.int64).reshape(-1, 2)


def train_embedding(
    walks: Sequence[Sequence[str]],
    cfg: WalkConfig,
    nodes: Sequence[str] | None = None,
    week_end: dt.date | None = None,
    batch_size: int = 256,
) -> NodeEmbedding:
    """Skip-gram with negative sampling trained by minibatch SGD.

    Negatives follow the unigram distribution of walk tokens raised to 3/4.
    The learning rate decays linearly over all updates to 1e-4 of its start.
    Returns the input-side vectors.
    """
    if not walks:
        raise ValueError("no walks to train on")
    nodes = tuple(nodes) if nodes is not None else tuple(sorted({v for w in walks for v in w}))
    idx = {v: i for i, v in enumerate(nodes)}
    int_walks = [[idx[v] for v in w] for w in walks]
    n, d = len(nodes), cfg.dims
    rng = np.random.default_rng(cfg.seed)
    w_in = rng.uniform(-0.5 / d, 0.5 / d, size=(n, d))
    w_out = np.zeros((n, d))

    counts = np.bincount(np.concatenate([np.asarray(w) for w in int_walks]), minlength=n).astype(float)
    noise = counts**0.75
    noise_cdf = np.cumsum(noise / noise.sum())
    noise_cdf[-1] = 1.0

    pairs = _training_pairs(int_walks, cfg.window)
    total_steps = max(1, cfg.epochs * math.ceil(len(pairs) / batch_size))
    step = 0
    losses = []
    k = cfg.negatives_per_positive
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(pairs))
        epoch_loss = 0.0
        for start in range(0, len(pairs), batch_size):
            batch = pairs[order[start : start + batch_size]]
            lr = cfg.learning_rate * max(1e-4, 1.0 - step / total_steps)
            step += 1
            c, o = batch[:, 0], batch[:, 1]
            negs = np.searchsorted(noise_cdf, rng.random((len(batch), k)), side="right")
            negs = np.minimum(negs, n - 1)
            vc = w_in[c]
            vo = w_out[o]
            vn = w_out[negs]
            s_pos = np.einsum("ij,ij->i", vc, vo)
            s_neg = np.einsum("ikj,ij->ik", vn, vc)
            sig_pos = _sigmoid(s_pos)
            sig_neg = _sigmoid(s_neg)
            epoch_loss -= float(np.sum(np.log(np.maximum(sig_pos, 1e-300))))
            epoch_loss -= float(np.sum(np.log(np.maximum(1.0 - sig_neg, 1e-300))))
            g_pos = sig_pos - 1.0
            d_c = g_pos[:, None] * vo + np.einsum("ik,ikj->ij", sig_neg, vn)
            d_o = g_pos[:, None] * vc
            d_n = sig_neg[:, :, None] * vc[:, None, :]
            np.add.at(w_in, c, -lr * d_c)
            np.add.at(w_out, o, -lr * d_o)
            np.add.at(w_out, negs.ravel(), -lr * d_n.reshape(-1, d))
        mean_loss = epoch_loss / max(1, len(pairs))
        if not math.isfinite(mean_loss) or not np.all(np.isfinite(w_in)):
            raise FloatingPointError(
                f"skip-gram diverged at epoch {epoch} (loss {mean_loss}, lr {cfg.learning_rate}, {len(pairs)} pairs)"
            )
        losses.append(mean_loss)
        logger.debug("epoch %d mean pair loss %.6f", epoch, mean_loss)
    return NodeEmbedding(week_end, nodes, w_in, tuple(losses))


def node2vec(g: WeeklyGraph, cfg: WalkConfig) -> NodeEmbedding:
    walks = generate_walks(g, cfg)
    return train_embedding(walks, cfg, nodes=g.nodes, week_end=g.week_end)


# ---------------------------------------------------------------- n2v-entropy


def kl_from_uniform(
    values: np.ndarray, width: float = BIN_WIDTH, support: tuple[float, float] | None = None
) -> float:
    """KL divergence of the binned distribution of ``values`` from uniform.

    Bins of ``width`` tile ``support``; by default the support is the data
    range snapped outward to the bin grid. Zero-probability bins contribute 0.
    """
    values = np.asarray(values, dtype=float)
    if support is None:
        lo = math.floor(values.min() / width + 1e-9)
        hi = math.ceil(values.max() / width - 1e-9)
    else:
        lo = round(support[0] / width)
        hi = round(support[1] / width)
        if values.min() < lo * width - 1e-12 or values.max() > hi * width + 1e-12:
            raise ValueError("values fall outside the given support")
    nbins = max(hi - lo, 1)
    bins = np.floor(values / width + 1e-9).astype(np.int64) - lo
    bins = np.clip(bins, 0, nbins - 1)
    p = np.bincount(bins, minlength=nbins) / len(values)
    q = 1.0 / nbins
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / q)))


def n2v_entropy(e: NodeEmbedding | np.ndarray, width: float = BIN_WIDTH) -> float:
    """Mean over dimensions of the per-dimension KL divergence from uniform.

    Larger values mean lower entropy of the embedding.
    """
    m = e.matrix if isinstance(e, NodeEmbedding) else np.asarray(e, dtype=float)
    if m.shape[0] < 2:
        raise ValueError("need at least two embedded nodes")
    return float(np.mean([kl_from_uniform(m[:, j], width) for j in range(m.shape[1])]))


# ---------------------------------------------------------------- word vectors


@dataclass(frozen=True)
class WordCluster:
    members: tuple[str, ...]
    centroid: np.ndarray
    representative: str


def read_word_vectors(path: str | Path) -> dict[str, np.ndarray]:
    """Read ``token v1 ... vd`` lines; all vectors must share one dimension."""
    out: dict[str, np.ndarray] = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            vec = np.array([float(x) for x in parts[1:]])
            if dim is None:
                dim = len(vec)
            elif len(vec) != dim:
                raise ValueError(f"{path}:{lineno}: dimension {len(vec)} != {dim}")
            out[parts[0]] = vec
    return out


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    return 1.0 - float(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b))


def cluster_word_vectors(wv: Mapping[str, np.ndarray], d_coph: float) -> list[WordCluster]:
    """Average-linkage cosine clustering cut at cophenetic distance ``d_coph``.

    Singleton clusters are discarded. Each cluster's representative is the
    member closest (cosine) to the mean vector. Tokens are sorted first so the
    result does not depend on input order.
    """
    from scipy.cluster.hierarchy import fcluster, linkage
    from scipy.spatial.distance import pdist

    if len(wv) < 2:
        raise ValueError("need at least two vectors")
    if not 0 < d_coph < 2:
        raise ValueError("d_coph must lie in (0, 2)")
    tokens = sorted(wv)
    x = np.vstack([wv[t] for t in tokens])
    dist = np.clip(pdist(x, metric="cosine"), 0.0, None)
    z = linkage(dist, method="average")
    labels = fcluster(z, t=d_coph, criterion="distance")
    clusters = []
    for lab in sorted(set(labels.tolist())):
        members = tuple(t for t, l in zip(tokens, labels) if l == lab)
        if len(members) < 2:
            continue
        centroid = np.mean([wv[t] for t in members], axis=0)
        rep = min(members, key=lambda t: (_cosine(wv[t], centroid), t))
        clusters.append(WordCluster(members, centroid, rep))
    if not clusters:
        logger.warning("all word-vector clusters are singletons at d_coph=%g", d_coph)
    clusters.sort(key=lambda c: c.members)
    return clusters


def write_embedding_csv(embeddings: Iterable[NodeEmbedding], path: str | Path) -> None:
    embeddings = list(embeddings)
    dims = embeddings[0].matrix.shape[1] if embeddings else 0
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["week", "node"] + [f"v{i + 1}" for i in range(dims)])
        for e in embeddings:
            week = e.week_end.isoformat() if e.week_end else ""
            for v, row in zip(e.nodes, e.matrix):
                w.writerow([week, v] + [repr(float(x)) for x in row])
