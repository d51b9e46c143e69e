"""Top-N recommenders: embedding cosine ranking and the RDM / POP / MF baselines."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import RatingRecord
from .embed import ComplexVec, EmbeddingTable
from .kgraph import EntityKind, EntityRef

__all__ = [
    "FactorModel",
    "RecommendationList",
    "als_objective",
    "cosine",
    "flatten",
    "mf_als_train",
    "recommend_embedding",
    "recommend_mf",
    "recommend_pop",
    "recommend_random",
    "write_recommendations",
]

_logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RecommendationList:
    user: EntityRef
    entries: tuple[tuple[EntityRef, float], ...]

    @property
    def items(self) -> list[EntityRef]:
        return [i for i, _ in self.entries]

    def __len__(self):
        return len(self.entries)


def cosine(u, v) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"length mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        raise ValueError("cosine undefined for a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def flatten(v: ComplexVec) -> np.ndarray:
    """``[re || im]``, length ``2 * dim``."""
    return np.concatenate([v.re, v.im])


def _check_k(k):
    if k < 1:
        raise ValueError("k must be >= 1")


def _top_k(refs, scores, tiebreak, k):
    scores = np.asarray(scores, dtype=np.float64)
    order = np.lexsort((np.asarray(tiebreak), -scores))[:k]
    return tuple((refs[n], float(scores[n])) for n in order)


def cosine_scores(table: EmbeddingTable, query: np.ndarray, rows: np.ndarray) -> np.ndarray:
    """Cosine of `query` against the given table rows."""
    mat = table.vectors[rows]
    norms = np.linalg.norm(mat, axis=1)
    qn = np.linalg.norm(query)
    if qn == 0 or (norms == 0).any():
        raise ValueError("cosine undefined for a zero vector")
    return np.clip(mat @ query / (norms * qn), -1.0, 1.0)


def recommend_embedding(
    user: EntityRef, table: EmbeddingTable, candidates: Iterable[EntityRef], k: int
) -> RecommendationList:
    """Rank candidates by cosine to the user's flattened embedding.

    Ties go to the lower table row, which within a kind is the graph id.
    """
    _check_k(k)
    query = table.flat(user)
    refs = sorted(set(candidates), key=table.row)
    if not refs:
        return RecommendationList(user, ())
    rows = np.array([table.row(c) for c in refs])
    scores = cosine_scores(table, query, rows)
    return RecommendationList(user, _top_k(refs, scores, rows, k))


def _canonical(candidates):
    return sorted(set(candidates))


def recommend_random(
    candidates: Iterable[EntityRef], k: int, seed: int, user: EntityRef | None = None
) -> RecommendationList:
    """Uniform random k-subset in random order; scores are the drawn uniforms."""
    _check_k(k)
    refs = _canonical(candidates)
    draws = np.random.default_rng(seed).random(len(refs))
    return RecommendationList(user, _top_k(refs, draws, np.arange(len(refs)), k))


def recommend_pop(
    train_interactions: Iterable[RatingRecord | str],
    candidates: Iterable[EntityRef],
    k: int,
    user: EntityRef | None = None,
) -> RecommendationList:
    """Rank by training interaction count.

    Ties go to the item seen first in `train_interactions`; unseen items
    (count 0) follow, ordered by key.
    """
    _check_k(k)
    counts: Counter = Counter()
    first: dict[str, int] = {}
    for rec in train_interactions:
        key = rec if isinstance(rec, str) else rec.item_key
        counts[key] += 1
        first.setdefault(key, len(first))
    refs = _canonical(candidates)
    unseen = len(first)
    tiebreak = [first.get(r.key, unseen + n) for n, r in enumerate(refs)]
    scores = [counts[r.key] for r in refs]
    return RecommendationList(user, _top_k(refs, scores, tiebreak, k))


@dataclass
class FactorModel:
    users: tuple[str, ...]
    items: tuple[str, ...]
    user_factors: np.ndarray
    item_factors: np.ndarray
    objective_trace: list[float] = field(default_factory=list)

    def __post_init__(self):
        self._uidx = {u: n for n, u in enumerate(self.users)}
        self._iidx = {i: n for n, i in enumerate(self.items)}

    @property
    def factors(self) -> int:
        return self.user_factors.shape[1]

    def predict(self, user_key: str, item_key: str) -> float:
        u = self.user_factors[self._uidx[user_key]]
        i = self._iidx.get(item_key)
        return 0.0 if i is None else float(u @ self.item_factors[i])


def _index_ratings(ratings):
    users, items = {}, {}
    rows, cols, vals = [], [], []
    for r in ratings:
        rows.append(users.setdefault(r.user_key, len(users)))
        cols.append(items.setdefault(r.item_key, len(items)))
        vals.append(r.rating)
    return users, items, np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64), np.array(vals)


def als_objective(rows, cols, vals, P, Q, reg) -> float:
    """Squared error on observed entries plus ``reg * (|P|_F^2 + |Q|_F^2)``."""
    err = vals - (P[rows] * Q[cols]).sum(axis=1)
    return float(err @ err + reg * ((P**2).sum() + (Q**2).sum()))


def _solve_rows(target, other, own_idx, other_idx, vals, reg):
    """Exact ridge solution for every row of `target` with `other` fixed."""
    f = other.shape[1]
    order = np.argsort(own_idx, kind="stable")
    own_sorted = own_idx[order]
    bounds = np.searchsorted(own_sorted, np.arange(len(target) + 1))
    eye = reg * np.eye(f)
    for n in range(len(target)):
        sel = order[bounds[n]:bounds[n + 1]]
        if not len(sel):
            continue
        M = other[other_idx[sel]]
        A = M.T @ M + eye
        b = M.T @ vals[sel]
        try:
            if reg == 0 and np.linalg.matrix_rank(A) < f:
                raise np.linalg.LinAlgError
            target[n] = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            raise ValueError(
                "singular normal equations in ALS; use a regularization > 0"
            ) from None


def mf_als_train(
    ratings: Sequence[RatingRecord],
    factors: int = 200,
    regularization: float = 0.1,
    iterations: int = 15,
    seed: int = 0,
) -> FactorModel:
    """Matrix factorization by alternating least squares on raw rating values.

    Each half-sweep solves the ridge problem exactly for all user rows (items
    fixed), then all item rows, so the objective never increases. The
    objective after every half-sweep is kept in ``objective_trace`` (entry 0
    is the initial value).
    """
    if factors < 1:
        raise ValueError("factors must be >= 1")
    if regularization < 0:
        raise ValueError("regularization must be >= 0")
    users, items, rows, cols, vals = _index_ratings(ratings)
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(factors)
    P = rng.normal(0.0, scale, size=(len(users), factors))
    Q = rng.normal(0.0, scale, size=(len(items), factors))
    trace = [als_objective(rows, cols, vals, P, Q, regularization)]
    for it in range(iterations):
        _solve_rows(P, Q, rows, cols, vals, regularization)
        trace.append(als_objective(rows, cols, vals, P, Q, regularization))
        _solve_rows(Q, P, cols, rows, vals, regularization)
        trace.append(als_objective(rows, cols, vals, P, Q, regularization))
        _logger.debug("als iteration %d objective %.6g", it, trace[-1])
    return FactorModel(tuple(users), tuple(items), P, Q, trace)


def recommend_mf(
    model: FactorModel, user: EntityRef | str, candidates: Iterable[EntityRef], k: int
) -> RecommendationList:
    """Rank by predicted rating; items unknown to the model score 0 and ties go to
    the lower model item index (unknown items last, by key)."""
    _check_k(k)
    key = user.key if isinstance(user, EntityRef) else user
    if key not in model._uidx:
        raise KeyError(f"user {key!r} not in factor model")
    refs = _canonical(candidates)
    n_items = len(model.items)
    scores = [model.predict(key, r.key) for r in refs]
    tiebreak = [model._iidx.get(r.key, n_items + n) for n, r in enumerate(refs)]
    ref = user if isinstance(user, EntityRef) else EntityRef(EntityKind.USER, key)
    return RecommendationList(ref, _top_k(refs, scores, tiebreak, k))


def write_recommendations(lists: Iterable[RecommendationList], path: str | Path) -> None:
    """``user<TAB>rank<TAB>item<TAB>score`` with 1-based ranks."""
    lines = []
    for rec in lists:
        for rank, (it, s) in enumerate(rec.entries, start=1):
            lines.append(f"{rec.user.key}\t{rank}\t{it.key}\t{s!r}")
    Path(path).write_text("".join(l + "\n" for l in lines), encoding="utf-8")
