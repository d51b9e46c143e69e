"""Typed user/item/aspect knowledge graph built from ratings and opinions."""
from __future__ import annotations

import enum
import functools
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .corpus import AspectOpinion, RatingRecord

__all__ = [
    "EntityKind",
    "EntityRef",
    "GraphError",
    "KnowledgeGraph",
    "Relation",
    "Triple",
    "Variant",
    "build_graph",
    "load_graph",
    "opinion_to_triples",
    "rating_to_triple",
    "save_graph",
]

HIGH_RATING_THRESHOLD = 3.0


class GraphError(ValueError):
    pass


class EntityKind(enum.Enum):
    USER = "u"
    ITEM = "i"
    ASPECT = "a"


class Relation(enum.Enum):
    LIKES = "likes"
    DISLIKES = "dislikes"
    DOES_NOT_CARE = "doesNotCare"
    BELONGS_TO = "belongsTo"
    HIGH_RATING = "highRating"
    LOW_RATING = "lowRating"

    @property
    def index(self) -> int:
        return _RELATION_INDEX[self]

    @property
    def signature(self) -> tuple[EntityKind, EntityKind]:
        return SIGNATURES[self]


RELATIONS: tuple[Relation, ...] = tuple(Relation)
_RELATION_INDEX = {r: k for k, r in enumerate(RELATIONS)}
OPINION_RELATIONS = frozenset({Relation.LIKES, Relation.DISLIKES, Relation.DOES_NOT_CARE})
RATING_RELATIONS = frozenset({Relation.HIGH_RATING, Relation.LOW_RATING})
ASPECT_RELATIONS = OPINION_RELATIONS | {Relation.BELONGS_TO}

SIGNATURES = {
    Relation.LIKES: (EntityKind.USER, EntityKind.ASPECT),
    Relation.DISLIKES: (EntityKind.USER, EntityKind.ASPECT),
    Relation.DOES_NOT_CARE: (EntityKind.USER, EntityKind.ASPECT),
    Relation.BELONGS_TO: (EntityKind.ASPECT, EntityKind.ITEM),
    Relation.HIGH_RATING: (EntityKind.USER, EntityKind.ITEM),
    Relation.LOW_RATING: (EntityKind.USER, EntityKind.ITEM),
}

KINDS: tuple[EntityKind, ...] = (EntityKind.USER, EntityKind.ITEM, EntityKind.ASPECT)


class Variant(enum.Enum):
    GER = "ger"
    GEA = "gea"
    GERA = "gera"

    @property
    def relations(self) -> frozenset[Relation]:
        if self is Variant.GER:
            return RATING_RELATIONS
        if self is Variant.GEA:
            return ASPECT_RELATIONS
        return frozenset(RELATIONS)


@functools.total_ordering
@dataclass(frozen=True)
class EntityRef:
    """A node identity. Dense integer ids live in the owning graph's tables."""

    kind: EntityKind
    key: str

    def __str__(self):
        return f"{self.kind.value}:{self.key}"

    @classmethod
    def parse(cls, token: str) -> "EntityRef":
        kind, sep, key = token.partition(":")
        if not sep or not key:
            raise GraphError(f"bad entity token {token!r}")
        try:
            return cls(EntityKind(kind), key)
        except ValueError:
            raise GraphError(f"unknown entity kind in {token!r}") from None

    # enums are not orderable; order by (kind position, key)
    def __lt__(self, other):
        return (KINDS.index(self.kind), self.key) < (KINDS.index(other.kind), other.key)


def user(key: str) -> EntityRef:
    return EntityRef(EntityKind.USER, key)


def item(key: str) -> EntityRef:
    return EntityRef(EntityKind.ITEM, key)


def aspect(key: str) -> EntityRef:
    return EntityRef(EntityKind.ASPECT, key)


@dataclass(frozen=True)
class Triple:
    source: EntityRef
    relation: Relation
    destination: EntityRef

    def __post_init__(self):
        src_kind, dst_kind = self.relation.signature
        if self.source.kind is not src_kind or self.destination.kind is not dst_kind:
            raise GraphError(
                f"{self.relation.value} expects {src_kind.name}->{dst_kind.name}, "
                f"got {self.source} -> {self.destination}"
            )

    def __str__(self):
        return f"{self.source}\t{self.relation.value}\t{self.destination}"


def rating_to_triple(r: RatingRecord) -> Triple:
    relation = Relation.LOW_RATING if r.rating <= HIGH_RATING_THRESHOLD else Relation.HIGH_RATING
    return Triple(user(r.user_key), relation, item(r.item_key))


def opinion_to_triples(o: AspectOpinion) -> tuple[Triple, Triple]:
    if o.polarity > 0:
        relation = Relation.LIKES
    elif o.polarity < 0:
        relation = Relation.DISLIKES
    else:
        relation = Relation.DOES_NOT_CARE
    a = aspect(o.aspect_term)
    return Triple(user(o.user_key), relation, a), Triple(a, Relation.BELONGS_TO, item(o.item_key))


class KnowledgeGraph:
    """Immutable deduplicated edge list plus per-kind entity tables.

    Entity ids are contiguous from 0 within each kind, in first-occurrence
    order over the edges unless explicit tables are passed (used to keep ids
    stable when a graph is restricted to a subset of its edges). The global
    row order used by embedding tables is users, then items, then aspects.
    """

    def __init__(
        self,
        variant: Variant,
        edges: Iterable[Triple] = (),
        entities: dict[EntityKind, Sequence[str]] | None = None,
    ):
        self.variant = Variant(variant)
        allowed = self.variant.relations
        tables: dict[EntityKind, dict[str, int]] = {k: {} for k in KINDS}
        if entities is not None:
            for kind in KINDS:
                for key in entities.get(kind, ()):
                    tables[kind].setdefault(key, len(tables[kind]))
        seen = set()
        kept = []
        for e in edges:
            if e.relation not in allowed:
                raise GraphError(f"relation {e.relation.value} not allowed in {self.variant.name}")
            if e in seen:
                continue
            seen.add(e)
            kept.append(e)
            for ref in (e.source, e.destination):
                table = tables[ref.kind]
                if ref.key not in table:
                    if entities is not None:
                        raise GraphError(f"edge entity {ref} missing from the entity table")
                    table[ref.key] = len(table)
        self._ids = tables
        self._keys = {k: tuple(t) for k, t in tables.items()}
        self.edges: tuple[Triple, ...] = tuple(kept)
        self._edge_set = frozenset(seen)

    def __len__(self):
        return len(self.edges)

    def __iter__(self) -> Iterator[Triple]:
        return iter(self.edges)

    def __contains__(self, triple) -> bool:
        return triple in self._edge_set

    def __eq__(self, other):
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return (
            self.variant is other.variant
            and self._keys == other._keys
            and self.edges == other.edges
        )

    def __repr__(self):
        counts = ", ".join(f"{k.name.lower()}s={len(self._keys[k])}" for k in KINDS)
        return f"KnowledgeGraph({self.variant.name}, edges={len(self.edges)}, {counts})"

    def keys(self, kind: EntityKind) -> tuple[str, ...]:
        return self._keys[kind]

    def entities(self, kind: EntityKind | None = None) -> list[EntityRef]:
        kinds = KINDS if kind is None else (kind,)
        return [EntityRef(k, key) for k in kinds for key in self._keys[k]]

    def count(self, kind: EntityKind) -> int:
        return len(self._keys[kind])

    def id_of(self, ref: EntityRef) -> int:
        return self._ids[ref.kind][ref.key]

    def has_entity(self, ref: EntityRef) -> bool:
        return ref.key in self._ids[ref.kind]

    @cached_property
    def offsets(self) -> dict[EntityKind, int]:
        out, acc = {}, 0
        for k in KINDS:
            out[k] = acc
            acc += len(self._keys[k])
        return out

    def global_index(self, ref: EntityRef) -> int:
        return self.offsets[ref.kind] + self.id_of(ref)

    @cached_property
    def edge_index(self) -> np.ndarray:
        """``(E, 3)`` int64 array of (source row, relation index, destination row)."""
        out = np.empty((len(self.edges), 3), dtype=np.int64)
        for n, e in enumerate(self.edges):
            out[n] = (self.global_index(e.source), e.relation.index, self.global_index(e.destination))
        return out

    def restrict(self, edges: Iterable[Triple]) -> "KnowledgeGraph":
        """Same entity tables, a subset of edges."""
        return KnowledgeGraph(self.variant, edges, entities=self._keys)

    @cached_property
    def _aspects_by_item(self) -> dict[EntityRef, list[EntityRef]]:
        out = defaultdict(list)
        for e in self.edges:
            if e.relation is Relation.BELONGS_TO:
                out[e.destination].append(e.source)
        return out

    @cached_property
    def _opinions_by_user(self) -> dict[EntityRef, dict[EntityRef, set[Relation]]]:
        out: dict = defaultdict(lambda: defaultdict(set))
        for e in self.edges:
            if e.relation in OPINION_RELATIONS:
                out[e.source][e.destination].add(e.relation)
        return out

    @cached_property
    def _rated_by_user(self) -> dict[EntityRef, set[EntityRef]]:
        out = defaultdict(set)
        for e in self.edges:
            if e.relation in RATING_RELATIONS:
                out[e.source].add(e.destination)
        return out

    def aspects_of(self, item_ref: EntityRef) -> list[EntityRef]:
        """Aspects with a belongsTo edge to `item_ref`, in aspect-id order."""
        return sorted(self._aspects_by_item.get(item_ref, ()), key=self.id_of)

    def opinion_relations(self, user_ref: EntityRef, aspect_ref: EntityRef) -> set[Relation]:
        by_aspect = self._opinions_by_user.get(user_ref)
        if by_aspect is None:
            return set()
        return set(by_aspect.get(aspect_ref, ()))

    def rated_items(self, user_ref: EntityRef) -> set[EntityRef]:
        return set(self._rated_by_user.get(user_ref, ()))


def build_graph(
    ratings: Iterable[RatingRecord],
    opinions: Iterable[AspectOpinion],
    variant: Variant | str = Variant.GERA,
) -> KnowledgeGraph:
    """Convert records into the edges of `variant`.

    Ratings are converted first, then opinions (user->aspect before
    aspect->item), so ids follow first occurrence in that order.
    """
    variant = Variant(variant)
    edges: list[Triple] = []
    if variant in (Variant.GER, Variant.GERA):
        edges.extend(rating_to_triple(r) for r in ratings)
    if variant in (Variant.GEA, Variant.GERA):
        for o in opinions:
            edges.extend(opinion_to_triples(o))
    return KnowledgeGraph(variant, edges)


def save_graph(g: KnowledgeGraph, path: str | Path) -> None:
    lines = [f"#variant={g.variant.value}"]
    lines.extend(str(e) for e in g.edges)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_graph(path: str | Path) -> KnowledgeGraph:
    variant = None
    edges = []
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                if line.startswith("#variant="):
                    try:
                        variant = Variant(line.split("=", 1)[1].strip().lower())
                    except ValueError:
                        raise GraphError(f"unknown variant, line {lineno}") from None
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise GraphError(f"malformed edge (expected 3 fields), line {lineno}")
            try:
                relation = Relation(fields[1])
            except ValueError:
                raise GraphError(f"unknown relation {fields[1]!r}, line {lineno}") from None
            try:
                edges.append(Triple(EntityRef.parse(fields[0]), relation, EntityRef.parse(fields[2])))
            except GraphError as exc:
                raise GraphError(f"{exc}, line {lineno}") from None
    if variant is None:
        raise GraphError("missing #variant header")
    try:
        return KnowledgeGraph(variant, edges)
    except GraphError as exc:
        raise GraphError(f"{exc} in {path}") from None
