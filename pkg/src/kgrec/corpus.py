"""Rating and aspect-opinion records: file IO, activity filtering, statistics
and a seeded synthetic generator used by tests and the ``synth`` command.
"""
from __future__ import annotations

import io
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "AspectOpinion",
    "CorpusError",
    "DatasetStats",
    "RatingRecord",
    "SynthConfig",
    "dataset_stats",
    "filter_min_ratings",
    "generate_synthetic",
    "load_opinions",
    "load_ratings",
    "write_opinions",
    "write_ratings",
]

MIN_RATING = 1.0
MAX_RATING = 5.0


class CorpusError(ValueError):
    """Raised for malformed rating or opinion input."""


@dataclass(frozen=True)
class RatingRecord:
    user_key: str
    item_key: str
    rating: float
    timestamp: int | None = None

    def __post_init__(self):
        if not self.user_key or not self.item_key:
            raise CorpusError("empty user or item key")
        if not math.isfinite(self.rating) or not MIN_RATING <= self.rating <= MAX_RATING:
            raise CorpusError(f"rating out of range: {self.rating!r}")


@dataclass(frozen=True)
class AspectOpinion:
    user_key: str
    item_key: str
    aspect_term: str
    polarity: float

    def __post_init__(self):
        if not self.user_key or not self.item_key:
            raise CorpusError("empty user or item key")
        if not self.aspect_term.strip():
            raise CorpusError("empty aspect")
        if not math.isfinite(self.polarity):
            raise CorpusError(f"non-finite polarity: {self.polarity!r}")


@dataclass(frozen=True)
class DatasetStats:
    n_users: int
    n_items: int
    n_ratings: int
    n_opinions: int
    rating_sparsity: float


def _data_lines(path):
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            yield lineno, line.split("\t")


def load_ratings(path: str | Path) -> list[RatingRecord]:
    """Read ``user<TAB>item<TAB>rating[<TAB>timestamp]`` lines.

    Blank lines and ``#`` comments are skipped. Errors name the 1-based
    physical line number.
    """
    records = []
    for lineno, fields in _data_lines(path):
        if len(fields) not in (3, 4):
            raise CorpusError(f"malformed rating line (expected 3 or 4 fields), line {lineno}")
        user, item = fields[0].strip(), fields[1].strip()
        if not user or not item:
            raise CorpusError(f"empty user or item key, line {lineno}")
        try:
            rating = float(fields[2])
            timestamp = int(fields[3]) if len(fields) == 4 and fields[3].strip() else None
        except ValueError:
            raise CorpusError(f"malformed rating line, line {lineno}") from None
        if not math.isfinite(rating) or not MIN_RATING <= rating <= MAX_RATING:
            raise CorpusError(f"rating out of range, line {lineno}")
        records.append(RatingRecord(user, item, rating, timestamp))
    return records


def load_opinions(path: str | Path) -> list[AspectOpinion]:
    """Read ``user<TAB>item<TAB>aspect<TAB>polarity`` lines; aspects are lowercased and trimmed."""
    records = []
    for lineno, fields in _data_lines(path):
        if len(fields) != 4:
            raise CorpusError(f"malformed opinion line (expected 4 fields), line {lineno}")
        user, item = fields[0].strip(), fields[1].strip()
        aspect = fields[2].strip().lower()
        if not user or not item:
            raise CorpusError(f"empty user or item key, line {lineno}")
        if not aspect:
            raise CorpusError(f"empty aspect, line {lineno}")
        try:
            polarity = float(fields[3])
        except ValueError:
            raise CorpusError(f"malformed polarity, line {lineno}") from None
        if not math.isfinite(polarity):
            raise CorpusError(f"non-finite polarity, line {lineno}")
        records.append(AspectOpinion(user, item, aspect, polarity))
    return records


def _format_ratings(ratings: Iterable[RatingRecord]) -> str:
    out = io.StringIO()
    for r in ratings:
        fields = [r.user_key, r.item_key, repr(float(r.rating))]
        if r.timestamp is not None:
            fields.append(str(r.timestamp))
        out.write("\t".join(fields) + "\n")
    return out.getvalue()


def _format_opinions(opinions: Iterable[AspectOpinion]) -> str:
    return "".join(
        f"{o.user_key}\t{o.item_key}\t{o.aspect_term}\t{float(o.polarity)!r}\n" for o in opinions
    )


def write_ratings(ratings: Iterable[RatingRecord], path: str | Path) -> None:
    Path(path).write_text(_format_ratings(ratings), encoding="utf-8")


def write_opinions(opinions: Iterable[AspectOpinion], path: str | Path) -> None:
    Path(path).write_text(_format_opinions(opinions), encoding="utf-8")


def filter_min_ratings(ratings: Sequence[RatingRecord], min: int = 10) -> list[RatingRecord]:
    """Keep the records of users with strictly more than `min` ratings."""
    counts = Counter(r.user_key for r in ratings)
    return [r for r in ratings if counts[r.user_key] > min]


def dataset_stats(
    ratings: Sequence[RatingRecord], opinions: Sequence[AspectOpinion] = ()
) -> DatasetStats:
    """Count distinct users/items over both inputs.

    Sparsity is ``n_ratings / (n_users * n_items)``, or 0 when either count
    is zero.
    """
    users = {r.user_key for r in ratings} | {o.user_key for o in opinions}
    items = {r.item_key for r in ratings} | {o.item_key for o in opinions}
    cells = len(users) * len(items)
    sparsity = len(ratings) / cells if cells else 0.0
    return DatasetStats(len(users), len(items), len(ratings), len(opinions), sparsity)


@dataclass(frozen=True)
class SynthConfig:
    """Clustered corpus layout.

    Users of cluster ``c`` rate every item of their own cluster 4-5 and like
    its aspects; items of other clusters get 1-2 and disliked aspects.
    ``aspects`` is the total number of aspect terms, dealt round-robin to the
    clusters. Each rating comes with one opinion on a random aspect of the
    item's cluster (if it has any). Every user rates every item of their own
    cluster; ``cross_rate`` is the probability of also rating a given item of
    another cluster (1.0 rates everything).
    """

    n_user_clusters: int = 2
    users_per_cluster: int = 5
    items_per_cluster: int = 4
    aspects: int = 4
    noise_rate: float = 0.0
    seed: int = 0
    cross_rate: float = 1.0

    def __post_init__(self):
        for name in ("n_user_clusters", "users_per_cluster", "items_per_cluster", "aspects"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise ValueError("noise_rate must be in [0, 1]")
        if not 0.0 <= self.cross_rate <= 1.0:
            raise ValueError("cross_rate must be in [0, 1]")


def generate_synthetic(cfg: SynthConfig) -> tuple[list[RatingRecord], list[AspectOpinion]]:
    """Generate a clustered (ratings, opinions) corpus, deterministic in ``cfg.seed``.

    Exactly ``round(noise_rate * n)`` ratings and, separately, that fraction
    of opinions are flipped to the opposite sentiment.
    """
    rng = np.random.default_rng(cfg.seed)
    n_clusters = cfg.n_user_clusters
    n_items = n_clusters * cfg.items_per_cluster
    cluster_aspects = [
        [a for a in range(cfg.aspects) if a % n_clusters == c] for c in range(n_clusters)
    ]

    # (user, item, liked, aspect or -1)
    events = []
    for u in range(n_clusters * cfg.users_per_cluster):
        cu = u // cfg.users_per_cluster
        for i in range(n_items):
            ci = i // cfg.items_per_cluster
            if ci != cu and cfg.cross_rate < 1.0 and rng.random() >= cfg.cross_rate:
                continue
            aspects = cluster_aspects[ci]
            aspect = int(aspects[rng.integers(len(aspects))]) if aspects else -1
            events.append((u, i, ci == cu, aspect))

    n = len(events)
    flip_rating = np.zeros(n, dtype=bool)
    flip_rating[rng.choice(n, size=round(cfg.noise_rate * n), replace=False)] = True
    with_opinion = [k for k, e in enumerate(events) if e[3] >= 0]
    flip_opinion = np.zeros(n, dtype=bool)
    m = len(with_opinion)
    flip_opinion[np.asarray(with_opinion, dtype=int)[
        rng.choice(m, size=round(cfg.noise_rate * m), replace=False)
    ]] = True

    ratings, opinions = [], []
    for k, (u, i, liked, aspect) in enumerate(events):
        high = liked != flip_rating[k]
        value = float(rng.integers(4, 6) if high else rng.integers(1, 3))
        ratings.append(RatingRecord(f"u{u}", f"i{i}", value, 1_600_000_000 + k))
        if aspect >= 0:
            positive = liked != flip_opinion[k]
            magnitude = round(float(rng.uniform(0.1, 1.0)), 3)
            opinions.append(
                AspectOpinion(f"u{u}", f"i{i}", f"aspect{aspect}", magnitude if positive else -magnitude)
            )
    return ratings, opinions
