"""Fixture corpus loading and rank-weighted sentiment.

Each line of a corpus file is one JSON article carrying its five (or fewer)
ranked entities. Articles are validated individually: a bad entity drops the
article with a logged diagnostic, while structural problems with the file as a
whole (unreadable, duplicate ids, nothing valid) raise :class:`CorpusError`.
"""

from __future__ import annotations

import datetime as dt
import json
import logging
import re
import string
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

logger = logging.getLogger(__name__)

MAX_RANK = 5
# best achievable mean of the linear rank weights 1, 0.8, 0.6, 0.4, 0.2
FULL_ARTICLE_MEAN = 0.6

_WS = re.compile(r"\s+")
_EDGE_PUNCT = string.punctuation + "‘’“”"


class CorpusError(Exception):
    """Fatal problem with a corpus file."""


class ArticleValidationError(ValueError):
    """A single article violates the record schema."""


def normalize_entity(text: str) -> str:
    """Lowercase, collapse whitespace and strip punctuation at both ends."""
    text = _WS.sub(" ", text.strip().lower())
    return text.strip(_EDGE_PUNCT + " ")


def week_label(day: dt.date) -> dt.date:
    """Sunday ending the week that contains ``day``."""
    return day + dt.timedelta(days=(6 - day.weekday()) % 7)


@dataclass(frozen=True)
class EntityMention:
    text: str
    rank: int
    sentiment: float

    def __post_init__(self):
        if not self.text:
            raise ArticleValidationError("empty entity text")
        if isinstance(self.rank, bool) or not isinstance(self.rank, int) or not 1 <= self.rank <= MAX_RANK:
            raise ArticleValidationError(f"rank {self.rank!r} outside 1..{MAX_RANK}")
        if not -1.0 <= self.sentiment <= 1.0:
            raise ArticleValidationError(f"sentiment {self.sentiment!r} outside [-1, 1]")


@dataclass(frozen=True)
class ArticleRecord:
    article_id: str
    week_end: dt.date
    entities: tuple[EntityMention, ...]
    summary: str = ""
    abstract: str = ""
    overall_sentiment: float = 0.0

    def __post_init__(self):
        if not self.entities:
            raise ArticleValidationError("article has no entities")
        if len(self.entities) > MAX_RANK:
            raise ArticleValidationError(f"{len(self.entities)} entities, at most {MAX_RANK} allowed")
        ranks = [e.rank for e in self.entities]
        if len(set(ranks)) != len(ranks):
            raise ArticleValidationError(f"duplicate ranks {sorted(ranks)}")
        texts = [e.text for e in self.entities]
        if len(set(texts)) != len(texts):
            raise ArticleValidationError("the same entity appears twice")
        if not -1.0 <= self.overall_sentiment <= 1.0:
            raise ArticleValidationError(f"overall_sentiment {self.overall_sentiment!r} outside [-1, 1]")

    def entity(self, rank: int) -> EntityMention | None:
        for e in self.entities:
            if e.rank == rank:
                return e
        return None

    def top_entities(self, n: int = 3) -> list[str]:
        """Texts of the entities ranked 1..n that are present."""
        return [e.text for e in sorted(self.entities, key=lambda e: e.rank) if e.rank <= n]

    def to_json(self) -> dict:
        return {
            "article_id": self.article_id,
            "week_end": self.week_end.isoformat(),
            "entities": [{"text": e.text, "rank": e.rank, "sentiment": e.sentiment} for e in self.entities],
            "summary": self.summary,
            "abstract": self.abstract,
            "overall_sentiment": self.overall_sentiment,
        }


@dataclass(frozen=True)
class WeeklyCorpus:
    week_end: dt.date
    articles: tuple[ArticleRecord, ...]

    def __post_init__(self):
        for a in self.articles:
            if a.week_end != self.week_end:
                raise ValueError(f"article {a.article_id} belongs to {a.week_end}, not {self.week_end}")

    def __len__(self) -> int:
        return len(self.articles)


def parse_article(obj: dict) -> ArticleRecord:
    """Build an :class:`ArticleRecord` from one decoded JSON object."""
    try:
        article_id = obj["article_id"]
        raw_week = obj["week_end"]
        raw_entities = obj["entities"]
    except (KeyError, TypeError) as exc:
        raise ArticleValidationError(f"missing field {exc}") from None
    if not isinstance(article_id, str) or not article_id:
        raise ArticleValidationError("article_id must be a nonempty string")
    try:
        day = dt.date.fromisoformat(raw_week)
    except (TypeError, ValueError):
        raise ArticleValidationError(f"bad week_end {raw_week!r}") from None
    if not isinstance(raw_entities, list):
        raise ArticleValidationError("entities must be an array")
    entities = []
    for ent in raw_entities:
        if not isinstance(ent, dict):
            raise ArticleValidationError("entity must be an object")
        sentiment = ent.get("sentiment")
        if isinstance(sentiment, bool) or not isinstance(sentiment, (int, float)):
            raise ArticleValidationError(f"bad sentiment {sentiment!r}")
        entities.append(
            EntityMention(
                text=normalize_entity(str(ent.get("text", ""))),
                rank=ent.get("rank"),
                sentiment=float(sentiment),
            )
        )
    overall = obj.get("overall_sentiment", 0.0)
    if isinstance(overall, bool) or not isinstance(overall, (int, float)):
        raise ArticleValidationError(f"bad overall_sentiment {overall!r}")
    return ArticleRecord(
        article_id=article_id,
        week_end=week_label(day),
        entities=tuple(sorted(entities, key=lambda e: e.rank)),
        summary=str(obj.get("summary", "")),
        abstract=str(obj.get("abstract", "")),
        overall_sentiment=float(overall),
    )


def group_by_week(
    articles: Iterable[ArticleRecord], exclude_weeks: Iterable[dt.date] = ()
) -> list[WeeklyCorpus]:
    excluded = set(exclude_weeks)
    buckets: dict[dt.date, list[ArticleRecord]] = defaultdict(list)
    for a in articles:
        if a.week_end not in excluded:
            buckets[a.week_end].append(a)
    return [WeeklyCorpus(week, tuple(buckets[week])) for week in sorted(buckets)]


def load_corpus(path: str | Path, exclude_weeks: Iterable[dt.date] = ()) -> list[WeeklyCorpus]:
    """Read a newline-delimited JSON corpus and group it by week.

    Articles failing validation are skipped with a warning. Raises
    :class:`CorpusError` if the file cannot be read, an article id repeats, or
    no valid article remains.
    """
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CorpusError(f"cannot read corpus {path}: {exc}") from exc

    articles: list[ArticleRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            logger.warning("%s:%d: invalid JSON (%s); article dropped", path, lineno, exc.msg)
            continue
        if isinstance(obj, dict) and obj.get("article_id") in seen:
            raise CorpusError(f"{path}:{lineno}: duplicated article_id {obj['article_id']!r}")
        try:
            article = parse_article(obj)
        except ArticleValidationError as exc:
            logger.warning("%s:%d: %s; article dropped", path, lineno, exc)
            continue
        seen.add(article.article_id)
        articles.append(article)

    if not articles:
        raise CorpusError(f"{path}: no valid articles")
    weeks = group_by_week(articles, exclude_weeks)
    if not weeks:
        raise CorpusError(f"{path}: every week was excluded")
    return weeks


def weighted_entity_sentiment(mention: EntityMention) -> float:
    """Entity sentiment scaled by the inverse of its rank (node attribute weighting)."""
    return mention.sentiment / mention.rank


def linear_rank_weight(rank: int) -> float:
    return (MAX_RANK + 1 - rank) / MAX_RANK


def article_sentiment(article: ArticleRecord) -> float:
    """Sentiment of one article in [-1, 1].

    Entity sentiments are weighted linearly by rank (1 for rank 1 down to 0.2
    for rank 5), averaged over the entities present and divided by 0.6, the
    mean an article with five fully positive entities reaches. The result is
    clipped because short articles can exceed 1 after rescaling.
    """
    mean = sum(e.sentiment * linear_rank_weight(e.rank) for e in article.entities) / len(article.entities)
    return min(1.0, max(-1.0, mean / FULL_ARTICLE_MEAN))


def write_corpus(weeks: Sequence[WeeklyCorpus], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for week in weeks:
            for a in week.articles:
                fh.write(json.dumps(a.to_json(), sort_keys=True) + "\n")
