import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from newsgraph.embedding import (
    NodeEmbedding,
    WalkConfig,
    _Transitions,
    cluster_word_vectors,
    generate_walks,
    kl_from_uniform,
    n2v_entropy,
    node2vec,
    read_word_vectors,
    sgns_loss_and_grad,
    train_embedding,
    write_embedding_csv,
)
from newsgraph.graph import WeeklyGraph
from newsgraph.synthetic import two_cliques

from conftest import random_connected_graph

FIVE = WeeklyGraph.from_edges(
    {("a", "b"): 1.0, ("a", "c"): 2.0, ("b", "c"): 0.5, ("c", "d"): 3.0, ("d", "e"): 1.5, ("b", "e"): 0.25}
)


def transition_frequencies(walks):
    counts = Counter()
    for w in walks:
        counts.update(zip(w, w[1:]))
    return counts


def test_first_order_transitions_match_weights():
    cfg = WalkConfig(walk_length=101, walks_per_node=200, seed=5)
    walks = generate_walks(FIVE, cfg)
    counts = transition_frequencies(walks)
    assert sum(counts.values()) == 100_000
    nbrs = FIVE.neighbors()
    for y, row in nbrs.items():
        out = sum(counts[(y, z)] for z in row)
        deg = sum(row.values())
        for z, w in row.items():
            assert abs(counts[(y, z)] / out - w / deg) < 0.02


def test_biased_probabilities_on_path():
    g = WeeklyGraph.from_edges({("a", "b"): 1.0, ("b", "c"): 1.0})
    t = _Transitions(g, p=4.0, q=0.5)
    idx = g.index()
    probs = t.probabilities(idx["a"], idx["b"])
    assert probs.tolist() == pytest.approx([1 / 9, 8 / 9])


def test_two_node_walk_alternates():
    g = WeeklyGraph.from_edges({("a", "b"): 1.0})
    for w in generate_walks(g, WalkConfig(walk_length=9, walks_per_node=3)):
        assert all(x != y for x, y in zip(w, w[1:]))


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 12), st.integers(0, 10_000), st.floats(0.25, 4), st.floats(0.25, 4))
def test_second_order_probabilities_sum_to_one(n, seed, p, q):
    g = random_connected_graph(np.random.default_rng(seed), n, 0.4)
    t = _Transitions(g, p, q)
    for cur in range(g.n):
        for prev in t.nbr_ids[cur]:
            pr = t.probabilities(int(prev), cur)
            assert pr.sum() == pytest.approx(1.0, abs=1e-12) and np.all(pr > 0)


def test_walks_deterministic():
    cfg = WalkConfig(seed=3)
    assert generate_walks(FIVE, cfg) == generate_walks(FIVE, cfg)


def test_sgns_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    c, o = rng.normal(size=4), rng.normal(size=4)
    negs = rng.normal(size=(3, 4))
    _, dc, do, dn = sgns_loss_and_grad(c, o, negs)
    h = 1e-6

    def numeric(which, shape):
        grad = np.zeros(shape)
        for i in np.ndindex(shape):
            args = [c.copy(), o.copy(), negs.copy()]
            args[which][i] += h
            up = sgns_loss_and_grad(*args)[0]
            args[which][i] -= 2 * h
            down = sgns_loss_and_grad(*args)[0]
            grad[i] = (up - down) / (2 * h)
        return grad

    for analytic, num in ((dc, numeric(0, c.shape)), (do, numeric(1, o.shape)), (dn, numeric(2, negs.shape))):
        assert np.max(np.abs(analytic - num)) / np.max(np.abs(num)) < 1e-5


def _mean_cos(e, pairs):
    v = e.vectors
    return np.mean([v[a] @ v[b] / (np.linalg.norm(v[a]) * np.linalg.norm(v[b])) for a, b in pairs])


def test_two_cliques_homophily():
    g = two_cliques(5)
    intra = [(f"{p}{i}", f"{p}{j}") for p in "ab" for i in range(5) for j in range(i + 1, 5)]
    inter = [(f"a{i}", f"b{j}") for i in range(5) for j in range(5)]
    for seed in range(5):
        e = node2vec(g, WalkConfig(seed=seed))
        assert _mean_cos(e, intra) > _mean_cos(e, inter)


def test_zero_epochs_returns_initialization():
    cfg = WalkConfig(epochs=0, seed=9)
    walks = generate_walks(FIVE, cfg)
    a = train_embedding(walks, cfg, FIVE.nodes)
    d = cfg.dims
    init = np.random.default_rng(9).uniform(-0.5 / d, 0.5 / d, size=(FIVE.n, d))
    assert np.array_equal(a.matrix, init)


def test_loss_decreases_over_first_epochs():
    e = node2vec(two_cliques(5), WalkConfig(epochs=5, seed=1))
    assert e.losses[-1] < e.losses[0]


def test_node2vec_deterministic():
    cfg = WalkConfig(seed=4)
    assert np.array_equal(node2vec(FIVE, cfg).matrix, node2vec(FIVE, cfg).matrix)


def test_walk_config_validation():
    with pytest.raises(ValueError):
        WalkConfig(p_emb=0)
    with pytest.raises(ValueError):
        WalkConfig(dims=0)


# ---------------------------------------------------------------- entropy


def test_uniform_bins_give_zero():
    values = np.arange(10) * 0.1 + 0.05
    m = np.column_stack([values, values[::-1]])
    assert abs(n2v_entropy(m)) < 1e-12


def test_point_mass_gives_log_ten():
    vals = np.full(7, 0.33)
    assert abs(kl_from_uniform(vals, 0.1, support=(0.0, 1.0)) - math.log(10)) < 1e-12


def test_entropy_averages_dimensions():
    # one dim: mass split over 2 of 4 bins -> ln 2; other: uniform over 4 bins -> 0
    a = np.array([0.05, 0.05, 0.15, 0.15])
    b = np.array([0.05, 0.15, 0.25, 0.35])
    d1 = kl_from_uniform(a, support=(0.0, 0.4))
    assert d1 == pytest.approx(math.log(2))
    assert kl_from_uniform(b) == pytest.approx(0.0, abs=1e-12)
    assert n2v_entropy(np.column_stack([b, b])) == pytest.approx(0.0, abs=1e-12)


def test_support_violation():
    with pytest.raises(ValueError):
        kl_from_uniform(np.array([1.5]), support=(0.0, 1.0))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.integers(1, 8), st.integers(0, 10_000))
def test_entropy_nonnegative_and_permutation_invariant(n, d, seed):
    rng = np.random.default_rng(seed)
    m = rng.normal(size=(n, d))
    h = n2v_entropy(m)
    assert h >= -1e-12
    assert n2v_entropy(m[rng.permutation(n)]) == pytest.approx(h, abs=1e-12)
    assert n2v_entropy(m[:, rng.permutation(d)]) == pytest.approx(h, abs=1e-12)


# ---------------------------------------------------------------- word vectors


def _bundles():
    return {
        "x1": np.array([1.0, 0.05, 0.0]),
        "x2": np.array([1.0, -0.05, 0.0]),
        "x3": np.array([1.0, 0.0, 0.02]),
        "y1": np.array([0.0, 1.0, 0.05]),
        "y2": np.array([0.03, 1.0, 0.0]),
        "y3": np.array([0.0, 1.0, -0.05]),
    }


def test_orthogonal_bundles():
    wv = _bundles()
    clusters = cluster_word_vectors(wv, 0.85)
    assert [c.members for c in clusters] == [("x1", "x2", "x3"), ("y1", "y2", "y3")]
    for c in clusters:
        mean = np.mean([wv[t] for t in c.members], axis=0)
        cos = {t: wv[t] @ mean / (np.linalg.norm(wv[t]) * np.linalg.norm(mean)) for t in c.members}
        assert c.representative == max(sorted(cos), key=cos.get)


def test_duplicates_merge_and_low_cut_is_empty():
    wv = {"a": np.array([1.0, 0.0]), "b": np.array([1.0, 0.0]), "c": np.array([0.0, 1.0])}
    assert [c.members for c in cluster_word_vectors(wv, 0.01)] == [("a", "b")]
    spread = {"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0]), "c": np.array([-1.0, 0.0])}
    assert cluster_word_vectors(spread, 0.5) == []


@given(st.permutations(list(_bundles())))
def test_clustering_order_invariant(order):
    wv = _bundles()
    shuffled = {t: wv[t] for t in order}
    a = cluster_word_vectors(wv, 0.85)
    b = cluster_word_vectors(shuffled, 0.85)
    assert [(c.members, c.representative) for c in a] == [(c.members, c.representative) for c in b]


def test_word_vector_io_and_embedding_csv(tmp_path):
    p = tmp_path / "wv.txt"
    p.write_text("alpha 1 0\nbeta 0 1\n")
    wv = read_word_vectors(p)
    assert wv["beta"].tolist() == [0.0, 1.0]
    e = NodeEmbedding(None, ("a", "b"), np.eye(2))
    write_embedding_csv([e], tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text().splitlines()[0] == "week,node,v1,v2"
