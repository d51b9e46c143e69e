"""Complex-valued knowledge-graph embeddings trained with a margin ranking loss.

Vectors are stored as real rows of length ``2 * dim``: real parts first,
then imaginary parts. The same layout is used on disk and for cosine
similarity at query time.

Loss per positive edge ``e`` with negatives ``S'``::

    sum over e' in S' of max(f(e') - f(e) + margin, 0)

so minimizing it pushes positive scores above negative ones.
"""
from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .kgraph import (
    KINDS,
    RELATIONS,
    EntityKind,
    EntityRef,
    KnowledgeGraph,
    Relation,
    Triple,
)

__all__ = [
    "ComplexVec",
    "EmbeddingError",
    "EmbeddingTable",
    "NegativeSampler",
    "Scorer",
    "SparseGradient",
    "TrainConfig",
    "Trainer",
    "TrainingError",
    "batch_loss_and_gradient",
    "link_prediction_report",
    "load_embeddings",
    "loss_gradient",
    "margin_loss",
    "sample_negatives",
    "save_embeddings",
    "score",
    "score_rows",
    "train",
]

_logger = logging.getLogger(__name__)

ADAGRAD_EPS = 1e-10
MAX_RESAMPLE = 10
DENSE_LOOKUP_LIMIT = 50_000_000


class EmbeddingError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


class Scorer(enum.Enum):
    COMPLEX = "complex"
    TRANSE = "transe"
    DISTMULT = "distmult"


@dataclass(frozen=True)
class ComplexVec:
    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        re = np.asarray(self.re, dtype=np.float64)
        im = np.asarray(self.im, dtype=np.float64)
        if re.ndim != 1 or re.shape != im.shape:
            raise EmbeddingError("re and im must be 1-d arrays of equal length")
        if not (np.isfinite(re).all() and np.isfinite(im).all()):
            raise EmbeddingError("non-finite entries")
        object.__setattr__(self, "re", re)
        object.__setattr__(self, "im", im)

    @property
    def dim(self) -> int:
        return len(self.re)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.re, self.im])

    @classmethod
    def from_flat(cls, row) -> "ComplexVec":
        row = np.asarray(row, dtype=np.float64)
        d = len(row) // 2
        return cls(row[:d], row[d:])


def _halves(x):
    d = x.shape[-1] // 2
    return x[..., :d], x[..., d:]


def score_rows(scorer: Scorer, s: np.ndarray, r: np.ndarray, d: np.ndarray) -> np.ndarray:
    """Vectorized scores over the last axis of flattened ``(..., 2*dim)`` rows."""
    if scorer is Scorer.COMPLEX:
        a, b = _halves(s)
        c, e = _halves(r)
        x, y = _halves(d)
        return ((a * c - b * e) * x + (a * e + b * c) * y).sum(axis=-1)
    if scorer is Scorer.DISTMULT:
        a, c, x = _halves(s)[0], _halves(r)[0], _halves(d)[0]
        return (a * c * x).sum(axis=-1)
    if scorer is Scorer.TRANSE:
        return -np.sqrt(((s + r - d) ** 2).sum(axis=-1))
    raise ValueError(f"unknown scorer {scorer!r}")


def score_grads(scorer: Scorer, s, r, d):
    """Partial derivatives of :func:`score_rows` w.r.t. s, r and d."""
    if scorer is Scorer.COMPLEX:
        a, b = _halves(s)
        c, e = _halves(r)
        x, y = _halves(d)
        gs = np.concatenate([c * x + e * y, c * y - e * x], axis=-1)
        gr = np.concatenate([a * x + b * y, a * y - b * x], axis=-1)
        gd = np.concatenate([a * c - b * e, a * e + b * c], axis=-1)
        return gs, gr, gd
    if scorer is Scorer.DISTMULT:
        a, c, x = _halves(s)[0], _halves(r)[0], _halves(d)[0]
        zero = np.zeros_like(a)
        return (
            np.concatenate([c * x, zero], axis=-1),
            np.concatenate([a * x, zero], axis=-1),
            np.concatenate([a * c, zero], axis=-1),
        )
    if scorer is Scorer.TRANSE:
        v = s + r - d
        norm = np.sqrt((v**2).sum(axis=-1, keepdims=True))
        # subgradient 0 at the non-differentiable point v == 0
        unit = np.divide(v, norm, out=np.zeros_like(v), where=norm > 0)
        return -unit, -unit, unit
    raise ValueError(f"unknown scorer {scorer!r}")


def score(scorer: Scorer | str, s: ComplexVec, r: ComplexVec, d: ComplexVec) -> float:
    if not s.dim == r.dim == d.dim:
        raise EmbeddingError(f"dimension mismatch: {s.dim}, {r.dim}, {d.dim}")
    return float(score_rows(Scorer(scorer), s.flat(), r.flat(), d.flat()))


def margin_loss(pos_score: float, neg_scores: Sequence[float], margin: float) -> float:
    if margin <= 0:
        raise ValueError("margin must be > 0")
    neg = np.asarray(neg_scores, dtype=np.float64)
    return float(np.maximum(neg - pos_score + margin, 0.0).sum())


@dataclass
class SparseGradient:
    """Gradient rows keyed by entity row / relation index; absent rows are zero."""

    entities: dict[int, np.ndarray] = field(default_factory=dict)
    relations: dict[int, np.ndarray] = field(default_factory=dict)

    def is_zero(self) -> bool:
        return all(not g.any() for g in (*self.entities.values(), *self.relations.values()))


def _accumulate(rows: np.ndarray, grads: np.ndarray):
    """Sum gradient rows sharing an index; returns (unique rows, summed grads)."""
    if not len(rows):
        return rows, grads.reshape(0, grads.shape[-1])
    order = np.argsort(rows, kind="stable")
    rows = rows[order]
    starts = np.flatnonzero(np.r_[True, rows[1:] != rows[:-1]])
    return rows[starts], np.add.reduceat(grads[order], starts, axis=0)


def batch_loss_and_gradient(
    scorer: Scorer,
    entities: np.ndarray,
    relations: np.ndarray,
    pos: np.ndarray,
    neg: np.ndarray,
    margin: float,
):
    """Margin loss and its gradient for a batch.

    Parameters
    ----------
    pos : ``(B, 3)`` int array of (source row, relation, destination row).
    neg : ``(B, n, 3)`` int array of negatives for each positive.

    Returns
    -------
    loss, (entity_rows, entity_grads), (relation_rows, relation_grads)
        Gradient rows are unique; rows entering only inactive hinge terms
        carry zeros.
    """
    ps, pr, pd = entities[pos[:, 0]], relations[pos[:, 1]], entities[pos[:, 2]]
    f_pos = score_rows(scorer, ps, pr, pd)
    f_neg = score_rows(
        scorer, entities[neg[..., 0]], relations[neg[..., 1]], entities[neg[..., 2]]
    )
    hinge = f_neg - f_pos[:, None] + margin
    active = hinge > 0
    # NaN never compares > 0; surface it instead of silently dropping the term
    loss = float(hinge[active].sum()) if np.isfinite(hinge).all() else math.nan

    # only active hinge terms contribute; skip the rest entirely
    b, j = np.nonzero(active)
    live = np.flatnonzero(active.any(axis=1))
    n_active = -active.sum(axis=1)[live, None].astype(np.float64)
    gps, gpr, gpd = score_grads(scorer, ps[live], pr[live], pd[live])
    act = neg[b, j]
    gns, gnr, gnd = score_grads(
        scorer, entities[act[:, 0]], relations[act[:, 1]], entities[act[:, 2]]
    )
    ent_rows = np.concatenate([pos[live, 0], pos[live, 2], act[:, 0], act[:, 2]])
    ent_grads = np.concatenate([gps * n_active, gpd * n_active, gns, gnd])
    rel_rows = np.concatenate([pos[live, 1], act[:, 1]])
    rel_grads = np.concatenate([gpr * n_active, gnr])
    return loss, _accumulate(ent_rows, ent_grads), _accumulate(rel_rows, rel_grads)


def loss_gradient(
    scorer: Scorer | str,
    edge: Sequence[int],
    negatives: np.ndarray,
    entities: np.ndarray,
    relations: np.ndarray,
    margin: float,
) -> tuple[float, SparseGradient]:
    """Loss and sparse gradient for one positive edge given as row indices."""
    pos = np.asarray(edge, dtype=np.int64).reshape(1, 3)
    neg = np.asarray(negatives, dtype=np.int64).reshape(1, -1, 3)
    loss, (er, eg), (rr, rg) = batch_loss_and_gradient(
        Scorer(scorer), entities, relations, pos, neg, margin
    )
    grad = SparseGradient(
        {int(k): g for k, g in zip(er, eg)}, {int(k): g for k, g in zip(rr, rg)}
    )
    return loss, grad


class NegativeSampler:
    """Vectorized negative sampler over a graph's global entity rows.

    For each positive, the first ``n/2`` negatives corrupt the source or the
    destination (fair coin) with a uniform entity of the matching kind; the
    last ``n/2`` draw both endpoints uniformly from the relation's kinds and
    keep the relation. Candidates that coincide with a positive edge are
    redrawn up to ``max_retries`` times, then accepted.
    """

    def __init__(self, graph: KnowledgeGraph, max_retries: int = MAX_RESAMPLE):
        self.max_retries = max_retries
        self.n_entities = sum(graph.count(k) for k in KINDS)
        kind_pos = {k: n for n, k in enumerate(KINDS)}
        self._offset = np.array([graph.offsets[k] for k in KINDS], dtype=np.int64)
        self._count = np.array([graph.count(k) for k in KINDS], dtype=np.int64)
        self._src_kind = np.array([kind_pos[r.signature[0]] for r in RELATIONS])
        self._dst_kind = np.array([kind_pos[r.signature[1]] for r in RELATIONS])
        keys = self._keys(graph.edge_index)
        space = self.n_entities * len(RELATIONS) * self.n_entities
        if space <= DENSE_LOOKUP_LIMIT:
            self._dense = np.zeros(space, dtype=bool)
            self._dense[keys] = True
        else:
            self._dense = None
            self._positive = np.sort(keys)

    def _keys(self, triples):
        n_rel = len(RELATIONS)
        return (triples[..., 0] * n_rel + triples[..., 1]) * self.n_entities + triples[..., 2]

    def _is_positive(self, triples):
        keys = self._keys(triples)
        if self._dense is not None:
            return self._dense[keys]
        if not len(self._positive):
            return np.zeros(keys.shape, dtype=bool)
        at = np.searchsorted(self._positive, keys).clip(max=len(self._positive) - 1)
        return self._positive[at] == keys

    def _draw(self, kind, rng):
        count = self._count[kind]
        if (count == 0).any():
            raise EmbeddingError("no type-compatible entity to sample from")
        return self._offset[kind] + rng.integers(0, count)

    def _fill(self, pos, out, mask, n_half, rng):
        """Draw fresh candidates into ``out`` wherever ``mask`` is set."""
        b, j = np.nonzero(mask)
        if not len(b):
            return
        rel = pos[b, 1]
        src_kind, dst_kind = self._src_kind[rel], self._dst_kind[rel]
        corrupt = j < n_half
        # one coin per corrupted slot: 0 replaces the source, 1 the destination
        side = rng.integers(0, 2, size=len(b))
        new_src = self._draw(src_kind, rng)
        new_dst = self._draw(dst_kind, rng)
        out[b, j, 0] = np.where(corrupt & (side == 1), pos[b, 0], new_src)
        out[b, j, 1] = rel
        out[b, j, 2] = np.where(corrupt & (side == 0), pos[b, 2], new_dst)

    def sample(self, pos: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        """``(B, n, 3)`` negatives for ``(B, 3)`` positives."""
        if n < 2 or n % 2:
            raise ValueError("number of negatives must be even and >= 2")
        pos = np.asarray(pos, dtype=np.int64).reshape(-1, 3)
        out = np.empty((len(pos), n, 3), dtype=np.int64)
        self._fill(pos, out, np.ones((len(pos), n), dtype=bool), n // 2, rng)
        for _ in range(self.max_retries):
            clash = self._is_positive(out)
            if not clash.any():
                break
            self._fill(pos, out, clash, n // 2, rng)
        return out


def sample_negatives(
    edge: Triple, graph: KnowledgeGraph, n: int, rng: np.random.Generator,
    sampler: NegativeSampler | None = None,
) -> list[Triple]:
    """`n` negatives for `edge`: first half corrupted, second half random."""
    if not len(graph):
        raise EmbeddingError("graph has no edges")
    sampler = sampler or NegativeSampler(graph)
    pos = np.array([[graph.global_index(edge.source), edge.relation.index,
                     graph.global_index(edge.destination)]])
    refs = graph.entities()
    return [
        Triple(refs[s], RELATIONS[r], refs[d]) for s, r, d in sampler.sample(pos, n, rng)[0]
    ]


RELATION_INITS = ("gaussian", "identity")


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 400
    learning_rate: float = 0.01
    margin: float = 0.1
    epochs: int = 10
    negatives: int = 10
    batch_size: int = 1000
    seed: int = 0
    optimizer: str = "adagrad"
    scorer: Scorer = Scorer.COMPLEX
    workers: int = 1
    relation_init: str = "gaussian"

    def __post_init__(self):
        object.__setattr__(self, "scorer", Scorer(self.scorer))
        if self.relation_init not in RELATION_INITS:
            raise ValueError(f"unknown relation_init {self.relation_init!r}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.margin <= 0:
            raise ValueError("margin must be > 0")
        if self.negatives < 2 or self.negatives % 2:
            raise ValueError("negatives must be even and >= 2")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0 or self.batch_size < 1 or self.workers < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and workers >= 1 required")
        if self.optimizer not in ("adagrad", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


class EmbeddingTable:
    """Entity rows (graph order: users, items, aspects) and one row per relation."""

    def __init__(
        self,
        entities: Sequence[EntityRef],
        vectors: np.ndarray,
        relations: np.ndarray,
        scorer: Scorer | str = Scorer.COMPLEX,
        loss_trace: Sequence[float] = (),
    ):
        self.entities = tuple(entities)
        self.vectors = np.asarray(vectors, dtype=np.float64)
        self.relations = np.asarray(relations, dtype=np.float64)
        self.scorer = Scorer(scorer)
        self.loss_trace = tuple(loss_trace)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.entities):
            raise EmbeddingError("one vector row per entity required")
        if self.vectors.shape[1] % 2 or self.relations.shape != (len(RELATIONS), self.vectors.shape[1]):
            raise EmbeddingError("inconsistent vector widths")
        self._index = {ref: n for n, ref in enumerate(self.entities)}
        if len(self._index) != len(self.entities):
            raise EmbeddingError("duplicate entity rows")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1] // 2

    def __len__(self):
        return len(self.entities)

    def __contains__(self, ref):
        return ref in self._index

    def __eq__(self, other):
        if not isinstance(other, EmbeddingTable):
            return NotImplemented
        return (
            self.scorer is other.scorer
            and self.entities == other.entities
            and self.vectors.shape == other.vectors.shape
            and np.array_equal(self.vectors, other.vectors)
            and np.array_equal(self.relations, other.relations)
        )

    def row(self, ref: EntityRef) -> int:
        try:
            return self._index[ref]
        except KeyError:
            raise KeyError(f"{ref} not in embedding table") from None

    def flat(self, ref: EntityRef) -> np.ndarray:
        return self.vectors[self.row(ref)]

    def vector(self, ref: EntityRef) -> ComplexVec:
        return ComplexVec.from_flat(self.vectors[self.row(ref)])

    def relation_vector(self, relation: Relation) -> ComplexVec:
        return ComplexVec.from_flat(self.relations[relation.index])

    def of_kind(self, kind: EntityKind) -> list[EntityRef]:
        return [e for e in self.entities if e.kind is kind]

    def score(self, triple: Triple) -> float:
        return float(score_rows(
            self.scorer, self.flat(triple.source), self.relations[triple.relation.index],
            self.flat(triple.destination),
        ))


def init_table(
    graph: KnowledgeGraph,
    dim: int,
    scorer: Scorer,
    rng: np.random.Generator,
    relation_init: str = "gaussian",
) -> EmbeddingTable:
    """Entity rows ~ N(0, 1/dim); relation rows likewise, or the identity.

    ``relation_init="identity"`` starts every relation at ``1 + 0i`` (a zero
    translation for TransE). That keeps user and item rows comparable by
    cosine from the start, at the cost of slower separation of relations.
    DistMult ignores imaginary parts, so they are zero for that scorer.
    """
    if relation_init not in RELATION_INITS:
        raise ValueError(f"unknown relation_init {relation_init!r}")
    sigma = 1.0 / math.sqrt(dim)
    refs = graph.entities()
    vectors = rng.normal(0.0, sigma, size=(len(refs), 2 * dim))
    if relation_init == "gaussian":
        relations = rng.normal(0.0, sigma, size=(len(RELATIONS), 2 * dim))
    else:
        relations = np.zeros((len(RELATIONS), 2 * dim))
        if scorer is not Scorer.TRANSE:
            relations[:, :dim] = 1.0
    if scorer is Scorer.DISTMULT:
        vectors[:, dim:] = 0.0
        relations[:, dim:] = 0.0
    return EmbeddingTable(refs, vectors, relations, scorer)


class Trainer:
    """Mutable training state over an :class:`EmbeddingTable`'s arrays."""

    def __init__(self, graph: KnowledgeGraph, cfg: TrainConfig, table: EmbeddingTable | None = None):
        if not len(graph):
            raise EmbeddingError("cannot train on an empty graph")
        self.graph = graph
        self.cfg = cfg
        self.rng = np.random.default_rng(cfg.seed)
        self.table = table if table is not None else init_table(graph, cfg.dim, cfg.scorer, self.rng, cfg.relation_init)
        self.entities = self.table.vectors.copy()
        self.relations = self.table.relations.copy()
        self.sampler = NegativeSampler(graph)
        self.edges = graph.edge_index
        if cfg.optimizer == "adagrad":
            self._ent_sq = np.zeros_like(self.entities)
            self._rel_sq = np.zeros_like(self.relations)

    def _apply(self, params, sq, rows, grads):
        lr = self.cfg.learning_rate
        if self.cfg.optimizer == "sgd":
            params[rows] -= lr * grads
            return
        acc = sq[rows] + grads**2
        sq[rows] = acc
        params[rows] -= lr * grads / (np.sqrt(acc) + ADAGRAD_EPS)

    def step(self, pos: np.ndarray, neg: np.ndarray) -> float:
        """One optimizer step on explicit positives/negatives; returns the batch loss."""
        loss, (er, eg), (rr, rg) = batch_loss_and_gradient(
            self.cfg.scorer, self.entities, self.relations, pos, neg, self.cfg.margin
        )
        if not math.isfinite(loss):
            return loss
        if self.cfg.scorer is Scorer.DISTMULT:
            eg[:, self.cfg.dim:] = 0.0
            rg[:, self.cfg.dim:] = 0.0
        self._apply(self.entities, getattr(self, "_ent_sq", None), er, eg)
        self._apply(self.relations, getattr(self, "_rel_sq", None), rr, rg)
        return loss

    def _run_batches(self, order, rng, epoch, first_batch=0):
        total = 0.0
        bs = self.cfg.batch_size
        for n, start in enumerate(range(0, len(order), bs)):
            pos = self.edges[order[start:start + bs]]
            neg = self.sampler.sample(pos, self.cfg.negatives, rng)
            loss = self.step(pos, neg)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {first_batch + n}")
            total += loss
        return total

    def epoch(self, epoch: int) -> float:
        """Shuffle, run all batches, return mean loss per positive edge."""
        order = self.rng.permutation(len(self.edges))
        workers = self.cfg.workers
        if workers == 1:
            total = self._run_batches(order, self.rng, epoch)
        else:
            # lock-free: workers write shared arrays without synchronization
            bs = self.cfg.batch_size
            n_batches = -(-len(order) // bs)
            per = -(-n_batches // workers)
            seeds = self.rng.spawn(workers)
            chunks = [(order[w * per * bs:(w + 1) * per * bs], seeds[w], w * per) for w in range(workers)]
            with ThreadPoolExecutor(max_workers=workers) as pool:
                totals = pool.map(lambda c: self._run_batches(c[0], c[1], epoch, c[2]), chunks)
                total = sum(totals)
        return total / len(self.edges)

    def run(self) -> EmbeddingTable:
        trace = []
        for epoch in range(self.cfg.epochs):
            mean = self.epoch(epoch)
            trace.append(mean)
            _logger.info("epoch %d mean loss %.6f", epoch, mean)
        t = self.table
        return EmbeddingTable(t.entities, self.entities, self.relations, t.scorer, trace)


def train(graph: KnowledgeGraph, cfg: TrainConfig) -> EmbeddingTable:
    """Learn embeddings for every entity and relation of `graph`.

    With ``cfg.workers == 1`` the result is bit-reproducible for a given seed.
    The returned table carries the per-epoch mean loss in ``loss_trace``.
    """
    return Trainer(graph, cfg).run()


def save_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    lines = [f"#dim={table.dim} scorer={table.scorer.value}"]
    for ref, row in zip(table.entities, table.vectors):
        lines.append(f"{ref}\t" + " ".join(map(repr, row.tolist())))
    for rel, row in zip(RELATIONS, table.relations):
        lines.append(f"r:{rel.value}\t" + " ".join(map(repr, row.tolist())))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_embeddings(path: str | Path) -> EmbeddingTable:
    dim = scorer = None
    refs, rows = [], []
    relations: dict[Relation, list[float]] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                if dim is None:
                    try:
                        meta = dict(tok.split("=", 1) for tok in line[1:].split())
                        dim, scorer = int(meta["dim"]), Scorer(meta["scorer"])
                    except (KeyError, ValueError):
                        raise EmbeddingError(f"bad header, line {lineno}") from None
                continue
            if dim is None:
                raise EmbeddingError(f"row before header, line {lineno}")
            token, sep, values = line.partition("\t")
            try:
                vec = [float(v) for v in values.split()]
            except ValueError:
                raise EmbeddingError(f"non-numeric value, line {lineno}") from None
            if not sep or len(vec) != 2 * dim:
                raise EmbeddingError(
                    f"expected {2 * dim} values for dim={dim}, got {len(vec)}, line {lineno}"
                )
            if token.startswith("r:"):
                try:
                    relations[Relation(token[2:])] = vec
                except ValueError:
                    raise EmbeddingError(f"unknown relation {token!r}, line {lineno}") from None
            else:
                try:
                    refs.append(EntityRef.parse(token))
                except ValueError as exc:
                    raise EmbeddingError(f"{exc}, line {lineno}") from None
                rows.append(vec)
    if dim is None:
        raise EmbeddingError("missing header")
    missing = [r.value for r in RELATIONS if r not in relations]
    if missing:
        raise EmbeddingError(f"missing relation rows: {', '.join(missing)}")
    vectors = np.array(rows, dtype=np.float64).reshape(len(rows), 2 * dim)
    rel = np.array([relations[r] for r in RELATIONS], dtype=np.float64)
    return EmbeddingTable(refs, vectors, rel, scorer)


def pairwise_auc(pos_scores, neg_scores) -> float:
    """Probability a positive outscores a negative (ties count half), over all pairs."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.sort(np.asarray(neg_scores, dtype=np.float64))
    if not len(pos) or not len(neg):
        raise ValueError("need positive and negative scores")
    below = np.searchsorted(neg, pos, side="left")
    upto = np.searchsorted(neg, pos, side="right")
    return float((below + 0.5 * (upto - below)).sum() / (len(pos) * len(neg)))


def link_prediction_report(
    table: EmbeddingTable,
    graph: KnowledgeGraph,
    test_edges: Sequence[Triple],
    known: Sequence[Triple] | None = None,
    n_negatives: int = 10,
    hits_at: int = 10,
    seed: int = 0,
) -> dict[str, float]:
    """AUC of held-out edges against corrupted negatives, and filtered Hits@k.

    Negatives corrupt the source or destination (coin flip) with a random
    entity of the right kind, skipping corruptions that are known edges.
    Filtered ranking scores the true destination against every entity of the
    destination kind, after removing other known true destinations.
    """
    known_set = set(known if known is not None else graph.edges) | set(test_edges)
    rng = np.random.default_rng(seed)
    pools = {k: table.of_kind(k) for k in KINDS}
    pos_scores, neg_scores, hits = [], [], 0
    for e in test_edges:
        pos_scores.append(table.score(e))
        src_kind, dst_kind = e.relation.signature
        for _ in range(n_negatives):
            for _ in range(100):
                if rng.integers(2):
                    cand = Triple(e.source, e.relation, pools[dst_kind][rng.integers(len(pools[dst_kind]))])
                else:
                    cand = Triple(pools[src_kind][rng.integers(len(pools[src_kind]))], e.relation, e.destination)
                if cand not in known_set:
                    neg_scores.append(table.score(cand))
                    break
        others = [d for d in pools[dst_kind] if d == e.destination or Triple(e.source, e.relation, d) not in known_set]
        rows = np.array([table.row(d) for d in others])
        s = np.broadcast_to(table.flat(e.source), (len(rows), 2 * table.dim))
        r = np.broadcast_to(table.relations[e.relation.index], s.shape)
        scores = score_rows(table.scorer, s, r, table.vectors[rows])
        true = scores[others.index(e.destination)]
        rank = 1 + int((scores > true).sum())
        hits += rank <= hits_at
    return {
        "auc": pairwise_auc(pos_scores, neg_scores),
        f"hits@{hits_at}": hits / len(test_edges),
    }
