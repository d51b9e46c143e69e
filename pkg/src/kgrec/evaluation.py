"""Cross-validated top-N evaluation with paired significance testing.

Per fold, every model is trained on the complement of the fold and asked to
rank each test user's own test-fold items. Relevant items are test items
rated above 3. Metrics are averaged over users, then over folds.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np
from scipy import stats

from .corpus import AspectOpinion, RatingRecord
from .embed import EmbeddingTable, TrainConfig, train
from .kgraph import EntityKind, EntityRef, Variant, build_graph
from .recsys import mf_als_train, recommend_embedding, recommend_mf, recommend_pop, recommend_random

__all__ = [
    "FoldData",
    "FoldSplit",
    "MetricRecord",
    "MetricsReport",
    "Ranker",
    "builtin_models",
    "evaluate",
    "f1_at_k",
    "kfold_split",
    "ndcg_at_k",
    "paired_significance",
    "precision_at_k",
    "recall_at_k",
]

_logger = logging.getLogger(__name__)

RELEVANCE_THRESHOLD = 3.0
METRICS = ("precision", "recall", "f1", "ndcg")


@dataclass(frozen=True)
class FoldSplit:
    folds: np.ndarray  # fold id per rating-record index
    k: int

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.folds == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.folds != fold)


def kfold_split(ratings: Sequence[RatingRecord], K: int = 5, seed: int = 0) -> FoldSplit:
    """Shuffle each user's records and deal them round-robin into `K` folds."""
    if K < 2:
        raise ValueError("K must be >= 2")
    rng = np.random.default_rng(seed)
    by_user: dict[str, list[int]] = defaultdict(list)
    for n, r in enumerate(ratings):
        by_user[r.user_key].append(n)
    folds = np.empty(len(ratings), dtype=np.int64)
    for indices in by_user.values():
        shuffled = rng.permutation(indices)
        folds[shuffled] = np.arange(len(shuffled)) % K
    return FoldSplit(folds, K)


def _hits(ranked, relevant, k):
    return sum(1 for x in ranked[:k] if x in relevant)


def precision_at_k(ranked: Sequence, relevant: set, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    denom = min(k, len(ranked))
    return _hits(ranked, relevant, k) / denom if denom else 0.0


def recall_at_k(ranked: Sequence, relevant: set, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    return _hits(ranked, relevant, k) / len(relevant) if relevant else 0.0


def f1_at_k(ranked: Sequence, relevant: set, k: int) -> float:
    p = precision_at_k(ranked, relevant, k)
    r = recall_at_k(ranked, relevant, k)
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def ndcg_at_k(ranked: Sequence, relevant: set | Mapping, k: int) -> float:
    """nDCG with ``log2(rank + 1)`` discount; a set means binary gains."""
    if k < 1:
        raise ValueError("k must be >= 1")
    gains = relevant if isinstance(relevant, Mapping) else dict.fromkeys(relevant, 1.0)
    dcg = sum(gains.get(x, 0.0) / math.log2(i + 2) for i, x in enumerate(ranked[:k]))
    ideal = sorted(gains.values(), reverse=True)[:k]
    idcg = sum(g / math.log2(i + 2) for i, g in enumerate(ideal))
    return dcg / idcg if idcg > 0 else 0.0


def paired_significance(
    samples_a: Sequence[float], samples_b: Sequence[float], n_comparisons: int = 1, alpha: float = 0.05
) -> tuple[float, bool]:
    """Two-sided paired t-test with Bonferroni-corrected threshold ``alpha / n_comparisons``."""
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("need two equal-length samples of size >= 2")
    if n_comparisons < 1:
        raise ValueError("n_comparisons must be >= 1")
    diff = a - b
    if np.all(diff == diff[0]):
        p = 1.0 if diff[0] == 0 else 0.0
    else:
        p = float(stats.ttest_rel(a, b).pvalue)
    return p, p < alpha / n_comparisons


class Ranker(Protocol):
    def rank(self, user: str, candidates: Sequence[str]) -> list[str]: ...


@dataclass(frozen=True)
class FoldData:
    ratings: list[RatingRecord]
    opinions: list[AspectOpinion]
    fold: int
    seed: int


ModelFactory = Callable[[FoldData], Ranker]


def _items(keys):
    return [EntityRef(EntityKind.ITEM, k) for k in keys]


def _fallback(candidates):
    return sorted(candidates)


class EmbeddingRanker:
    def __init__(self, table: EmbeddingTable):
        self.table = table

    def rank(self, user, candidates):
        u = EntityRef(EntityKind.USER, user)
        if u not in self.table:
            return _fallback(candidates)
        known = [c for c in _items(candidates) if c in self.table]
        unknown = sorted(c for c in candidates if EntityRef(EntityKind.ITEM, c) not in self.table)
        ranked = recommend_embedding(u, self.table, known, max(1, len(known))).items if known else []
        return [r.key for r in ranked] + unknown


class PopRanker:
    def __init__(self, ratings):
        self.ratings = ratings

    def rank(self, user, candidates):
        return [r.key for r in recommend_pop(self.ratings, _items(candidates), max(1, len(candidates))).items]


class RandomRanker:
    def __init__(self, seed):
        self.seed = seed

    def rank(self, user, candidates):
        # stable per-user seed so results do not depend on evaluation order
        seed = np.random.SeedSequence([self.seed, *user.encode()]).generate_state(1)[0]
        return [r.key for r in recommend_random(_items(candidates), max(1, len(candidates)), int(seed)).items]


class MFRanker:
    def __init__(self, model):
        self.model = model

    def rank(self, user, candidates):
        if user not in self.model._uidx:
            return _fallback(candidates)
        return [r.key for r in recommend_mf(self.model, user, _items(candidates), max(1, len(candidates))).items]


def builtin_models(
    train_config: TrainConfig | None = None,
    mf_factors: int = 200,
    mf_regularization: float = 0.1,
    mf_iterations: int = 15,
) -> dict[str, ModelFactory]:
    """Factories for gera, ger, gea, mf, pop and rdm."""
    cfg = train_config or TrainConfig()

    def graph_model(variant):
        def factory(data: FoldData):
            graph = build_graph(data.ratings, data.opinions, variant)
            fold_cfg = dataclasses.replace(cfg, seed=data.seed)
            return EmbeddingRanker(train(graph, fold_cfg))
        return factory

    return {
        "gera": graph_model(Variant.GERA),
        "ger": graph_model(Variant.GER),
        "gea": graph_model(Variant.GEA),
        "mf": lambda d: MFRanker(mf_als_train(d.ratings, mf_factors, mf_regularization, mf_iterations, d.seed)),
        "pop": lambda d: PopRanker(d.ratings),
        "rdm": lambda d: RandomRanker(d.seed),
    }


@dataclass
class MetricRecord:
    model: str
    metric: str
    k: int
    folds: list[float]
    mean: float
    std: float
    significant: bool = False
    p_values: dict[str, float] = field(default_factory=dict)

    def to_dict(self):
        return {
            "model": self.model, "metric": self.metric, "k": self.k, "folds": self.folds,
            "mean": self.mean, "std": self.std, "significant": self.significant,
            "p_values": self.p_values,
        }


@dataclass
class MetricsReport:
    config: dict
    records: list[MetricRecord]
    errors: dict[str, str] = field(default_factory=dict)
    user_samples: dict = field(default_factory=dict, repr=False)

    @property
    def models(self) -> list[str]:
        return list(dict.fromkeys(r.model for r in self.records))

    def get(self, model: str, metric: str, k: int) -> MetricRecord:
        for r in self.records:
            if (r.model, r.metric, r.k) == (model, metric, k):
                return r
        raise KeyError((model, metric, k))

    def to_dict(self):
        return {
            "config": self.config,
            "results": [r.to_dict() for r in self.records],
            "errors": self.errors,
        }


def fold_data(ratings, opinions, split: FoldSplit, fold: int, seed: int):
    """Training data for `fold` and the test records.

    Ratings and opinions of any (user, item) pair present in the test fold
    are withheld from training.
    """
    test_idx = split.test_indices(fold)
    test = [ratings[n] for n in test_idx]
    test_pairs = {(r.user_key, r.item_key) for r in test}
    train_r = [ratings[n] for n in split.train_indices(fold)
               if (ratings[n].user_key, ratings[n].item_key) not in test_pairs]
    train_o = [o for o in opinions if (o.user_key, o.item_key) not in test_pairs]
    return FoldData(train_r, train_o, fold, seed + fold), test


def _test_users(test):
    """user -> (candidate items in first-occurrence order, relevant set)."""
    best: dict[str, dict[str, float]] = defaultdict(dict)
    for r in test:
        items = best[r.user_key]
        items[r.item_key] = max(items.get(r.item_key, -math.inf), r.rating)
    return {
        u: (list(items), {i for i, v in items.items() if v > RELEVANCE_THRESHOLD})
        for u, items in best.items()
    }


def _user_metrics(ranked, relevant, ks):
    out = {}
    for k in ks:
        out[("precision", k)] = precision_at_k(ranked, relevant, k)
        out[("recall", k)] = recall_at_k(ranked, relevant, k)
        out[("f1", k)] = f1_at_k(ranked, relevant, k)
        out[("ndcg", k)] = ndcg_at_k(ranked, relevant, k)
    return out


def evaluate(
    models: Mapping[str, ModelFactory] | Sequence[str],
    ratings: Sequence[RatingRecord],
    opinions: Sequence[AspectOpinion] = (),
    K: int = 5,
    ks: Iterable[int] = (10, 20, 30),
    seed: int = 0,
    alpha: float = 0.05,
    significance_over: str = "folds",
    **model_options,
) -> MetricsReport:
    """Run K-fold evaluation of every model.

    `models` is either a mapping of name to factory, or names resolved with
    :func:`builtin_models` (``model_options`` are forwarded to it). A model
    whose training fails in any fold is reported in ``errors`` and left out
    of the results.

    Significance compares, for each metric and k, the best model by mean
    against every other model with a paired t-test over fold means (or, with
    ``significance_over="users"``, over per-user values pooled across folds),
    Bonferroni-corrected by the number of comparisons. Only the best model's
    record can be flagged.
    """
    ks = sorted(set(ks))
    if not ks:
        raise ValueError("ks must be non-empty")
    if significance_over not in ("folds", "users"):
        raise ValueError("significance_over must be 'folds' or 'users'")
    if not isinstance(models, Mapping):
        registry = builtin_models(**model_options)
        unknown = [m for m in models if m not in registry]
        if unknown:
            raise ValueError(f"unknown models: {', '.join(unknown)}")
        models = {m: registry[m] for m in models}

    split = kfold_split(ratings, K, seed)
    fold_values: dict[str, dict] = {m: defaultdict(list) for m in models}
    user_values: dict[str, dict] = {m: defaultdict(list) for m in models}
    errors: dict[str, str] = {}
    for fold in range(K):
        data, test = fold_data(ratings, opinions, split, fold, seed)
        users = _test_users(test)
        for name, factory in models.items():
            if name in errors:
                continue
            try:
                ranker = factory(data)
            except Exception as exc:  # reported per model, others continue
                _logger.exception("model %s failed on fold %d", name, fold)
                errors[name] = f"fold {fold}: {type(exc).__name__}: {exc}"
                continue
            per_user = [
                _user_metrics(ranker.rank(u, cands), rel, ks) for u, (cands, rel) in users.items()
            ]
            for key in per_user[0] if per_user else ():
                vals = [m[key] for m in per_user]
                fold_values[name][key].append(float(np.mean(vals)))
                user_values[name][key].extend(vals)
            _logger.info("fold %d model %s done (%d users)", fold, name, len(users))

    ok = [m for m in models if m not in errors]
    records = []
    for name in ok:
        for metric in METRICS:
            for k in ks:
                vals = fold_values[name][(metric, k)]
                records.append(MetricRecord(
                    name, metric, k, vals, float(np.mean(vals)),
                    float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0,
                ))
    report = MetricsReport(
        {"K": K, "ks": ks, "seed": seed, "alpha": alpha, "models": list(models),
         "significance_over": significance_over},
        records, errors, user_values,
    )
    samples = fold_values if significance_over == "folds" else user_values
    if len(ok) > 1:
        for metric in METRICS:
            for k in ks:
                _flag_best(report, samples, ok, metric, k, alpha)
    return report


def _flag_best(report, samples, names, metric, k, alpha):
    recs = {n: report.get(n, metric, k) for n in names}
    best = max(names, key=lambda n: recs[n].mean)
    others = [n for n in names if n != best]
    significant = True
    for other in others:
        a, b = samples[best][(metric, k)], samples[other][(metric, k)]
        if len(a) < 2:
            significant = False
            continue
        p, sig = paired_significance(a, b, len(others), alpha)
        recs[best].p_values[other] = p
        significant &= sig
    recs[best].significant = significant
