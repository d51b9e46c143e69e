"""Aspect-level explanations from the opinions of a user's nearest neighbours."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .embed import EmbeddingTable
from .kgraph import EntityKind, EntityRef, KnowledgeGraph, Relation
from .recsys import cosine_scores, recommend_embedding

__all__ = [
    "AspectCounts",
    "Explanation",
    "ExplanationStats",
    "explain_item",
    "explain_recommendations",
    "explanation_stats",
    "load_reviews",
    "render_explanation",
    "top_similar_users",
]


@dataclass(frozen=True)
class AspectCounts:
    aspect: str
    likes: int = 0
    dislikes: int = 0
    does_not_care: int = 0

    @property
    def total(self) -> int:
        return self.likes + self.dislikes + self.does_not_care


@dataclass(frozen=True)
class Explanation:
    user: EntityRef
    item: EntityRef
    aspects: tuple[AspectCounts, ...]
    cohort_size: int

    def to_dict(self) -> dict:
        return {
            "user": self.user.key,
            "item": self.item.key,
            "cohort_size": self.cohort_size,
            "aspects": [
                {"aspect": a.aspect, "likes": a.likes, "dislikes": a.dislikes,
                 "doesNotCare": a.does_not_care}
                for a in self.aspects
            ],
        }


@dataclass(frozen=True)
class ExplanationStats:
    coverage: float
    lk_other: float | None  # None when there are no dislikes or doesNotCare
    n_aspects: float
    asp_per_item: float | None  # None when nothing is covered


def top_similar_users(user: EntityRef, table: EmbeddingTable, n: int = 30) -> list[EntityRef]:
    """Other users ranked by cosine similarity, ties to the lower row."""
    if n < 1:
        raise ValueError("n must be >= 1")
    query = table.flat(user)
    others = [u for u in table.of_kind(EntityKind.USER) if u != user]
    if not others:
        return []
    rows = np.array([table.row(u) for u in others])
    scores = cosine_scores(table, query, rows)
    order = np.lexsort((rows, -scores))[:n]
    return [others[i] for i in order]


def explain_item(
    user: EntityRef, item: EntityRef, graph: KnowledgeGraph, cohort: Sequence[EntityRef]
) -> Explanation | None:
    """Count cohort opinions on the aspects attached to `item`.

    Returns None when no cohort member has an opinion on any of them.
    """
    counts = []
    members = list(dict.fromkeys(cohort))
    for a in graph.aspects_of(item):
        likes = dislikes = neutral = 0
        for v in members:
            rels = graph.opinion_relations(v, a)
            likes += Relation.LIKES in rels
            dislikes += Relation.DISLIKES in rels
            neutral += Relation.DOES_NOT_CARE in rels
        if likes or dislikes or neutral:
            counts.append(AspectCounts(a.key, likes, dislikes, neutral))
    if not counts:
        return None
    return Explanation(user, item, tuple(counts), len(members))


def explain_recommendations(
    user: EntityRef,
    table: EmbeddingTable,
    graph: KnowledgeGraph,
    k: int = 30,
    n: int = 30,
    candidates: Iterable[EntityRef] | None = None,
) -> list[tuple[EntityRef, Explanation | None]]:
    """Recommend `k` items, then explain each from the `n` most similar users.

    By default candidates are the table's items the user has not rated in
    `graph`.
    """
    if candidates is None:
        rated = graph.rated_items(user)
        candidates = [i for i in table.of_kind(EntityKind.ITEM) if i not in rated]
    recs = recommend_embedding(user, table, candidates, k)
    cohort = top_similar_users(user, table, n)
    return [(it, explain_item(user, it, graph, cohort)) for it in recs.items]


def explanation_stats(
    batch: Sequence[Sequence[tuple[EntityRef, Explanation | None]]],
) -> ExplanationStats:
    """Coverage, likes/(dislikes+doesNotCare), unique aspects per list and aspects per covered item.

    `batch` holds one explained recommendation list per user.
    """
    if not batch:
        raise ValueError("empty batch")
    total = covered = likes = others = aspects_on_covered = 0
    unique_per_list = []
    for recs in batch:
        seen = set()
        for _, exp in recs:
            total += 1
            if exp is None:
                continue
            covered += 1
            aspects_on_covered += len(exp.aspects)
            for a in exp.aspects:
                seen.add(a.aspect)
                likes += a.likes
                others += a.dislikes + a.does_not_care
        unique_per_list.append(len(seen))
    return ExplanationStats(
        coverage=covered / total if total else 0.0,
        lk_other=likes / others if others else None,
        n_aspects=float(np.mean(unique_per_list)),
        asp_per_item=aspects_on_covered / covered if covered else None,
    )


def render_explanation(exp: Explanation | None, item: EntityRef | None = None, review: str | None = None) -> str:
    """One line per item: ``item: aspect (x +, y -), ...``."""
    name = exp.item.key if exp is not None else (item.key if item else "?")
    if exp is None:
        text = f"{name}: (no aspect opinions)"
    else:
        parts = [f"{a.aspect} ({a.likes} +, {a.dislikes} -)" for a in exp.aspects]
        text = f"{name}: " + ", ".join(parts)
    if review:
        text += f"\n    review: {review}"
    return text


def explanations_json(user: EntityRef, explained) -> str:
    return json.dumps({
        "user": user.key,
        "items": [
            {"item": it.key, "explanation": None if exp is None else exp.to_dict()["aspects"]}
            for it, exp in explained
        ],
    }, indent=2)


def load_reviews(path: str | Path) -> dict[tuple[str, str], str]:
    """``user<TAB>item<TAB>text`` pass-through review snippets."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t", 2)
            if len(fields) != 3:
                raise ValueError(f"malformed review line, line {lineno}")
            out[(fields[0], fields[1])] = fields[2]
    return out
