import datetime as dt
import sys

import pytest

from newsgraph.ingest import ArticleRecord, EntityMention, WeeklyCorpus

WEEK = dt.date(2022, 1, 2)


def make_article(article_id, entities, week=WEEK, summary=""):
    """Article from ``[(text, rank, sentiment), ...]``."""
    mentions = tuple(EntityMention(t, r, s) for t, r, s in entities)
    return ArticleRecord(article_id, week, mentions, summary=summary)


def make_week(*articles, week=WEEK):
    return WeeklyCorpus(week, tuple(articles))


@pytest.fixture
def article():
    return make_article


def random_connected_graph(rng, n, extra_p=0.2):
    """Random spanning tree plus extra edges, weights in (0.1, 1]."""
    from newsgraph.graph import WeeklyGraph

    names = [f"v{i:02d}" for i in range(n)]
    edges = {}
    order = rng.permutation(n)
    for i in range(1, n):
        u, v = names[order[i]], names[order[rng.integers(0, i)]]
        edges[(u, v)] = float(rng.uniform(0.1, 1.0))
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < extra_p and (names[i], names[j]) not in edges and (names[j], names[i]) not in edges:
                edges[(names[i], names[j])] = float(rng.uniform(0.1, 1.0))
    return WeeklyGraph.from_edges(edges)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, (ok, detail) in sorted(mod.RESULTS.items()):
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
