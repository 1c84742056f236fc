import itertools
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from newsgraph.community import (
    Partition,
    adjusted_rand_index,
    diffusion_kernel,
    find_knee,
    fuzzy_partition,
    knee_scan,
    louvain,
    modularity,
    negative_laplacian,
    nmf,
    stability_indices,
    stable_article_filter,
    strict_labels,
)
from newsgraph.graph import WeeklyGraph
from newsgraph.synthetic import planted_partition, two_cliques

from conftest import make_article, make_week, random_connected_graph


def set_partitions(n):
    """Restricted growth strings: every set partition of n items exactly once."""

    def rec(prefix, top):
        if len(prefix) == n:
            yield tuple(prefix)
            return
        for c in range(top + 2):
            yield from rec(prefix + [c], max(top, c))

    yield from rec([0], 0)


def modularity_oracle(g, labels):
    """Direct double sum over ordered node pairs."""
    a = g.adjacency()
    d = a.sum(axis=1)
    two_w = a.sum()
    lab = [labels[v] for v in g.nodes]
    q = 0.0
    for i in range(g.n):
        for j in range(g.n):
            if lab[i] == lab[j]:
                q += a[i, j] - d[i] * d[j] / two_w
    return q / two_w


def _single_move_gains(g, labels):
    """Best modularity change from moving any one node anywhere (including a new singleton)."""
    base = modularity(g, labels)
    comms = set(labels.values()) | {max(labels.values()) + 1}
    best = -math.inf
    for v in g.nodes:
        for c in comms:
            if c == labels[v]:
                continue
            trial = dict(labels)
            trial[v] = c
            best = max(best, modularity(g, trial) - base)
    return best


# ---------------------------------------------------------------- modularity


def test_modularity_two_disconnected_cliques():
    g = two_cliques(5, bridge=None)
    labels = {v: 0 if v.startswith("a") else 1 for v in g.nodes}
    assert abs(modularity(g, labels) - 0.5) < 1e-12
    assert abs(modularity_oracle(g, labels) - 0.5) < 1e-12


def test_modularity_all_in_one_and_singletons():
    rng = np.random.default_rng(3)
    g = random_connected_graph(rng, 12)
    assert modularity(g, {v: 0 for v in g.nodes}) == pytest.approx(0.0, abs=1e-12)
    tri = WeeklyGraph.from_edges({("a", "b"): 1, ("b", "c"): 1, ("a", "c"): 1})
    assert modularity(tri, {"a": 0, "b": 1, "c": 2}) == pytest.approx(-1 / 3, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 15), st.integers(0, 10_000), st.integers(1, 5))
def test_modularity_matches_oracle(n, seed, k):
    rng = np.random.default_rng(seed)
    g = random_connected_graph(rng, n)
    labels = {v: int(rng.integers(0, k)) for v in g.nodes}
    assert modularity(g, labels) == pytest.approx(modularity_oracle(g, labels), abs=1e-12)


def test_modularity_missing_label():
    g = two_cliques(3)
    with pytest.raises(KeyError):
        modularity(g, {"a0": 0})


# ---------------------------------------------------------------- Louvain


def test_louvain_two_cliques_matches_brute_force():
    g = two_cliques(5, bridge=1.0)
    best_q, best = -1.0, None
    for rgs in set_partitions(g.n):
        q = modularity(g, dict(zip(g.nodes, rgs)))
        if q > best_q + 1e-12:
            best_q, best = q, rgs
    p = louvain(g, seed=0)
    assert p.modularity == pytest.approx(best_q, abs=1e-12)
    assert adjusted_rand_index(p, dict(zip(g.nodes, best))) == 1.0
    assert p.communities() == {0: frozenset(f"a{i}" for i in range(5)), 1: frozenset(f"b{i}" for i in range(5))}


def test_louvain_seed_invariant_on_two_cliques():
    g = two_cliques(5)
    ref = louvain(g, 0)
    for seed in range(1, 10):
        assert adjusted_rand_index(ref, louvain(g, seed)) == 1.0


def test_louvain_k4_single_community():
    k4 = WeeklyGraph.from_edges({p: 1.0 for p in itertools.combinations("abcd", 2)})
    best = max(modularity(k4, dict(zip(k4.nodes, r))) for r in set_partitions(4))
    p = louvain(k4)
    assert p.n_communities == 1
    assert p.modularity == pytest.approx(best, abs=1e-12) and best == pytest.approx(0.0, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(3, 25), st.integers(0, 10_000))
def test_louvain_no_improving_single_move(n, seed):
    g = random_connected_graph(np.random.default_rng(seed), n, 0.25)
    p = louvain(g, seed)
    assert _single_move_gains(g, p.labels) <= 1e-12
    assert p.modularity == pytest.approx(modularity(g, p.labels), abs=1e-12)


def test_louvain_recovers_planted_blocks():
    hits = 0
    for seed in range(6):
        g, truth = planted_partition([12] * (2 + seed % 3), p_in=0.7, p_out=0.03, seed=seed)
        hits += adjusted_rand_index(louvain(g, seed), truth) == 1.0
    assert hits >= 5


# ---------------------------------------------------------------- diffusion kernel


def test_kernel_beta_zero_is_identity():
    g = random_connected_graph(np.random.default_rng(0), 9)
    assert np.array_equal(diffusion_kernel(g, 0.0, normalize=False), np.eye(9))
    assert np.array_equal(diffusion_kernel(g, 0.0), np.eye(9))


def test_kernel_single_edge_closed_form():
    g = WeeklyGraph.from_edges({("a", "b"): 1.0})
    k = diffusion_kernel(g, 1.0, normalize=False)
    e = math.exp(-2)
    assert k == pytest.approx(np.array([[(1 + e) / 2, (1 - e) / 2], [(1 - e) / 2, (1 + e) / 2]]), abs=1e-15)


def taylor_oracle(h, terms=200, dps=50):
    mpmath.mp.dps = dps
    m = mpmath.matrix(h.tolist())
    out = mpmath.eye(len(h))
    term = mpmath.eye(len(h))
    for j in range(1, terms):
        term = term * m / j
        out += term
    return np.array(out.tolist(), dtype=float)


@settings(max_examples=10, deadline=None)
@given(st.integers(2, 8), st.integers(0, 10_000), st.floats(0.1, 2.0))
def test_kernel_against_taylor_oracle(n, seed, beta):
    g = random_connected_graph(np.random.default_rng(seed), n)
    k = diffusion_kernel(g, beta, normalize=False)
    oracle = taylor_oracle(beta * negative_laplacian(g))
    assert np.max(np.abs(k - oracle)) < 1e-9


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 30), st.integers(0, 10_000), st.floats(0.1, 3.0))
def test_kernel_symmetric_positive_definite(n, seed, beta):
    g = random_connected_graph(np.random.default_rng(seed), n)
    k = diffusion_kernel(g, beta, normalize=False)
    assert np.max(np.abs(k - k.T)) < 1e-12
    assert np.linalg.eigvalsh(k).min() > 0
    kn = diffusion_kernel(g, beta)
    assert np.all(np.diag(kn) == 1.0)
    assert np.all(kn >= 0)


def test_kernel_negative_beta_rejected():
    with pytest.raises(ValueError):
        diffusion_kernel(two_cliques(3), -0.1)


# ---------------------------------------------------------------- NMF and fuzzy partitions


@pytest.mark.parametrize("seed", range(4))
def test_nmf_monotone_every_iteration(seed):
    g = random_connected_graph(np.random.default_rng(seed), 20)
    res = nmf(diffusion_kernel(g, 1.0), 3, seed=seed, max_iter=300, tol=0.0, check_monotone=True)
    assert len(res.errors) == 301
    assert np.all(np.diff(res.errors) <= 0)
    assert res.V.min() >= 0 and res.L.min() >= 0


def test_nmf_rejects_negative_input():
    with pytest.raises(ValueError):
        nmf(-np.eye(3), 2)


def test_nmf_flags_non_convergence():
    g = random_connected_graph(np.random.default_rng(1), 15)
    res = nmf(diffusion_kernel(g, 1.0), 5, max_iter=3, tol=1e-12)
    assert not res.converged and len(res.errors) == 4


def test_stability_examples():
    s = stability_indices(np.array([[0.8, 0.2], [0.5, 0.5], [1.0, 0.0]]))
    assert s[0] == pytest.approx(4.0)
    assert s[1] == 1.0
    assert s[2] == math.inf
    assert list(strict_labels(np.array([[0.5, 0.5]]))) == [0]


@given(st.lists(st.lists(st.floats(0, 10, allow_nan=False), min_size=2, max_size=5), min_size=1, max_size=8))
def test_stability_at_least_one(rows):
    width = min(len(r) for r in rows)
    m = np.array([r[:width] for r in rows])
    s = stability_indices(m)
    assert np.all(s >= 1.0)
    srt = -np.sort(-m, axis=1)
    assert np.all((s == 1.0) >= (srt[:, 0] == srt[:, 1]))


def test_fuzzy_two_disconnected_cliques():
    g = two_cliques(5, bridge=None)
    fp = fuzzy_partition(g, 2, 1.0, seed=0)
    truth = {v: int(v.startswith("b")) for v in g.nodes}
    assert adjusted_rand_index(fp.strict, truth) == 1.0
    assert all(s > 10 for s in fp.stability.values())


def test_fuzzy_k_bounds():
    g = two_cliques(3)
    with pytest.raises(ValueError):
        fuzzy_partition(g, 1)
    with pytest.raises(ValueError):
        fuzzy_partition(g, g.n)


def test_fuzzy_and_louvain_agree_on_strong_two_blocks():
    g, truth = planted_partition([10, 10], p_in=0.9, p_out=0.02, seed=4)
    fp = fuzzy_partition(g, 2, 1.0, seed=0)
    assert adjusted_rand_index(fp.strict, louvain(g, 0)) == 1.0


# ---------------------------------------------------------------- knee


def test_knee_flat_after_three():
    ks = list(range(2, 15))
    qs = [0.1, 0.40, 0.42, 0.43] + [0.43 + 0.001 * i for i in range(1, 10)]
    assert find_knee(ks, qs) == (3, False)


def test_knee_linear_is_degenerate():
    ks = list(range(2, 15))
    assert find_knee(ks, [0.1 * k for k in ks]) == (14, True)


def test_knee_flat_curve():
    assert find_knee([2, 3, 4], [0.3, 0.3, 0.3]) == (2, True)


def test_knee_scan_planted_four_blocks():
    g, _ = planted_partition([12] * 4, p_in=0.7, p_out=0.03, seed=11)
    scan = knee_scan(g, range(2, 10), 1.0, seeds=range(10))
    assert sum(k == 4 for k in scan.knees.values()) >= 7
    assert scan.k == 4


# ---------------------------------------------------------------- ARI


def test_ari_examples():
    p = {"a": 0, "b": 0, "c": 1, "d": 1}
    assert adjusted_rand_index(p, p) == 1.0
    assert adjusted_rand_index(p, {"a": 5, "b": 5, "c": 2, "d": 2}) == 1.0
    singles = {v: i for i, v in enumerate("abcd")}
    assert adjusted_rand_index(singles, {v: 0 for v in "abcd"}) == 0.0
    with pytest.raises(ValueError):
        adjusted_rand_index(p, {"a": 0})


labelings = st.lists(st.tuples(st.integers(0, 4), st.integers(0, 4)), min_size=2, max_size=30)


@given(labelings, st.permutations(range(5)))
def test_ari_symmetric_and_relabel_invariant(pairs, perm):
    p1 = {f"n{i}": a for i, (a, _) in enumerate(pairs)}
    p2 = {f"n{i}": b for i, (_, b) in enumerate(pairs)}
    assert adjusted_rand_index(p1, p2) == pytest.approx(adjusted_rand_index(p2, p1), abs=1e-12)
    p1r = {v: perm[c] for v, c in p1.items()}
    assert adjusted_rand_index(p1r, p2) == pytest.approx(adjusted_rand_index(p1, p2), abs=1e-12)
    assert adjusted_rand_index(p1, p2) <= 1.0 + 1e-12


def _partition_brute_ari(p1, p2):
    """ARI from pair counting over all node pairs."""
    nodes = sorted(p1)
    pairs = list(itertools.combinations(nodes, 2))
    a = sum(p1[u] == p1[v] and p2[u] == p2[v] for u, v in pairs)
    s1 = sum(p1[u] == p1[v] for u, v in pairs)
    s2 = sum(p2[u] == p2[v] for u, v in pairs)
    n = len(pairs)
    expected = s1 * s2 / n
    mx = (s1 + s2) / 2
    return 1.0 if mx == expected else (a - expected) / (mx - expected)


@given(labelings)
def test_ari_matches_pair_count(pairs):
    p1 = {f"n{i}": a for i, (a, _) in enumerate(pairs)}
    p2 = {f"n{i}": b for i, (_, b) in enumerate(pairs)}
    assert adjusted_rand_index(p1, p2) == pytest.approx(_partition_brute_ari(p1, p2), abs=1e-12)


# ---------------------------------------------------------------- article filter


def _fp_stub(labels, stability):
    from newsgraph.community import FuzzyPartition

    nodes = tuple(sorted(labels))
    return FuzzyPartition(
        nodes=nodes,
        membership=np.zeros((len(nodes), 2)),
        strict=Partition(None, labels, 0.0),
        stability=stability,
        beta=1.0,
        k=2,
        reconstruction_error=0.0,
        converged=True,
    )


def test_stable_article_filter_rules():
    labels = {"a": 0, "b": 0, "c": 0, "d": 1, "u": 0}
    stab = {"a": 5.0, "b": 5.0, "c": 5.0, "d": 5.0, "u": 1.5}
    fp = _fp_stub(labels, stab)
    good = make_article("good", [("a", 1, 0), ("b", 2, 0), ("c", 3, 0), ("d", 4, 0)])
    unstable = make_article("unstable", [("a", 1, 0), ("u", 2, 0), ("c", 3, 0)])
    split = make_article("split", [("a", 1, 0), ("b", 2, 0), ("d", 3, 0)])
    out = stable_article_filter(None, fp, make_week(good, unstable, split))
    assert [x.article_id for x in out[0]] == ["good"]
    assert out[1] == []
