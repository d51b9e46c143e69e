import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgrec.corpus import RatingRecord, SynthConfig, generate_synthetic
from kgrec.embed import (
    ComplexVec,
    EmbeddingError,
    EmbeddingTable,
    NegativeSampler,
    Scorer,
    TrainConfig,
    Trainer,
    TrainingError,
    init_table,
    link_prediction_report,
    load_embeddings,
    loss_gradient,
    margin_loss,
    pairwise_auc,
    sample_negatives,
    save_embeddings,
    score,
    score_rows,
    train,
)
from kgrec.kgraph import (
    RELATIONS,
    EntityKind,
    Relation,
    Triple,
    build_graph,
    item,
    user,
)


def complex_oracle(scorer, s, r, d):
    """Score from Python complex arithmetic, one coordinate at a time."""
    zs = [complex(a, b) for a, b in zip(s.re, s.im)]
    zr = [complex(a, b) for a, b in zip(r.re, r.im)]
    zd = [complex(a, b) for a, b in zip(d.re, d.im)]
    if scorer is Scorer.DISTMULT:
        zs, zr, zd = ([complex(z.real, 0) for z in v] for v in (zs, zr, zd))
    if scorer is Scorer.TRANSE:
        sq = sum(abs(a + b - c) ** 2 for a, b, c in zip(zs, zr, zd))
        return -sq ** 0.5
    return sum((a * b * c.conjugate()).real for a, b, c in zip(zs, zr, zd))


def rand_vec(rng, d):
    return ComplexVec(rng.normal(size=d), rng.normal(size=d))


@pytest.fixture(scope="module")
def toy_graph():
    ratings, opinions = generate_synthetic(SynthConfig(2, 4, 3, 4, seed=0))
    return build_graph(ratings, opinions, "gera")


class TestScore:
    def test_zero_relation(self):
        rng = np.random.default_rng(0)
        zero = ComplexVec(np.zeros(4), np.zeros(4))
        assert score(Scorer.COMPLEX, rand_vec(rng, 4), zero, rand_vec(rng, 4)) == 0.0

    def test_hand_example(self):
        s = ComplexVec(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        r = ComplexVec(np.array([1.0, 1.0]), np.array([0.0, 0.0]))
        assert score("complex", s, r, s) == pytest.approx(2.0, abs=1e-15)
        assert complex_oracle(Scorer.COMPLEX, s, r, s) == pytest.approx(2.0, abs=1e-15)

    def test_transe_translation_is_max(self):
        rng = np.random.default_rng(1)
        s, r = rand_vec(rng, 3), rand_vec(rng, 3)
        d = ComplexVec(s.re + r.re, s.im + r.im)
        assert score(Scorer.TRANSE, s, r, d) == pytest.approx(0.0, abs=1e-12)
        assert score(Scorer.TRANSE, s, r, rand_vec(rng, 3)) < 0

    @pytest.mark.parametrize("scorer", list(Scorer))
    def test_matches_complex_oracle(self, scorer):
        rng = np.random.default_rng(2)
        for _ in range(50):
            d = int(rng.integers(1, 9))
            s, r, t = rand_vec(rng, d), rand_vec(rng, d), rand_vec(rng, d)
            assert score(scorer, s, r, t) == pytest.approx(complex_oracle(scorer, s, r, t), rel=1e-12, abs=1e-12)

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(0)
        with pytest.raises(EmbeddingError):
            score(Scorer.COMPLEX, rand_vec(rng, 2), rand_vec(rng, 3), rand_vec(rng, 2))

    @given(st.floats(-10, 10), st.integers(0, 2**32 - 1))
    def test_complex_linear_in_source(self, alpha, seed):
        rng = np.random.default_rng(seed)
        s, r, d = rand_vec(rng, 4), rand_vec(rng, 4), rand_vec(rng, 4)
        scaled = ComplexVec(alpha * s.re, alpha * s.im)
        assert score("complex", scaled, r, d) == pytest.approx(alpha * score("complex", s, r, d), abs=1e-9)

    @given(st.integers(0, 2**32 - 1))
    def test_distmult_symmetric(self, seed):
        rng = np.random.default_rng(seed)
        s, r, d = rand_vec(rng, 5), rand_vec(rng, 5), rand_vec(rng, 5)
        assert score("distmult", s, r, d) == pytest.approx(score("distmult", d, r, s), abs=1e-12)

    def test_complex_asymmetric(self):
        rng = np.random.default_rng(3)
        s, r, d = rand_vec(rng, 5), rand_vec(rng, 5), rand_vec(rng, 5)
        assert abs(score("complex", s, r, d) - score("complex", d, r, s)) > 1e-3

    def test_complexvec_invariants(self):
        with pytest.raises(EmbeddingError):
            ComplexVec(np.zeros(2), np.zeros(3))
        with pytest.raises(EmbeddingError):
            ComplexVec(np.array([np.nan]), np.zeros(1))
        v = ComplexVec.from_flat(np.array([2.0, 3.0]))
        assert (v.re.tolist(), v.im.tolist()) == ([2.0], [3.0])


class TestMarginLoss:
    def test_examples(self):
        assert margin_loss(1.0, [0.2], 0.5) == 0.0
        assert margin_loss(0.2, [1.0], 0.5) == pytest.approx(1.3)
        assert margin_loss(0.4, [0.4], 0.1) == pytest.approx(0.1)

    @given(st.floats(-5, 5), st.lists(st.floats(-5, 5), max_size=10), st.floats(0.01, 2))
    def test_nonnegative_and_zero_iff_margin(self, pos, negs, lam):
        loss = margin_loss(pos, negs, lam)
        assert loss >= 0
        assert (loss == 0) == all(n - pos + lam <= 0 for n in negs)

    def test_margin_must_be_positive(self):
        with pytest.raises(ValueError):
            margin_loss(0.0, [0.0], 0.0)


def finite_difference(scorer, edge, negs, ent, rel, lam, h=1e-5):
    """Central differences of the loss w.r.t. every parameter, dense."""
    def loss():
        return loss_gradient(scorer, edge, negs, ent, rel, lam)[0]

    out = []
    for arr in (ent, rel):
        g = np.zeros_like(arr)
        for idx in itertools.product(*map(range, arr.shape)):
            old = arr[idx]
            arr[idx] = old + h
            up = loss()
            arr[idx] = old - h
            down = loss()
            arr[idx] = old
            g[idx] = (up - down) / (2 * h)
        out.append(g)
    return out


def dense(grad, ent, rel):
    ge, gr = np.zeros_like(ent), np.zeros_like(rel)
    for k, v in grad.entities.items():
        ge[k] = v
    for k, v in grad.relations.items():
        gr[k] = v
    return ge, gr


class TestGradient:
    def test_inactive_terms_give_zero(self):
        ent = np.array([[1.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
        rel = np.tile([1.0, 0.0], (6, 1))
        # positive scores 1, negative -1: margin 0.1 satisfied
        loss, grad = loss_gradient("complex", (0, 0, 1), [(0, 0, 2)], ent, rel, 0.1)
        assert loss == 0.0 and grad.is_zero()

    def test_single_term_d1(self):
        rng = np.random.default_rng(5)
        ent = rng.normal(size=(3, 2))
        rel = rng.normal(size=(6, 2))
        edge, negs = (0, 4, 1), [(0, 4, 2)]
        lam = 10.0  # guarantees the single hinge term is active
        loss, grad = loss_gradient("complex", edge, negs, ent, rel, lam)
        assert loss > 0
        ge, gr = dense(grad, ent, rel)
        fe, fr = finite_difference(Scorer.COMPLEX, edge, negs, ent, rel, lam)
        np.testing.assert_allclose(ge, fe, atol=1e-6)
        np.testing.assert_allclose(gr, fr, atol=1e-6)

    def test_sparsity(self):
        rng = np.random.default_rng(6)
        ent = rng.normal(size=(8, 4))
        rel = rng.normal(size=(6, 4))
        edge, negs = (0, 4, 1), [(0, 4, 2), (3, 4, 1)]
        _, grad = loss_gradient("complex", edge, negs, ent, rel, 100.0)
        assert set(grad.entities) == {0, 1, 2, 3}
        assert set(grad.relations) == {4}

    @pytest.mark.parametrize("scorer", list(Scorer))
    def test_random_configurations(self, scorer):
        rng = np.random.default_rng(7)
        checked = 0
        while checked < 20:
            d = int(rng.integers(1, 9))
            ent = rng.normal(size=(6, 2 * d))
            rel = rng.normal(size=(6, 2 * d))
            edge = (int(rng.integers(6)), int(rng.integers(6)), int(rng.integers(6)))
            negs = rng.integers(0, 6, size=(4, 3))
            negs[:, 1] = edge[1]
            lam = float(rng.uniform(0.05, 2.0))
            f = score_rows(scorer, ent[[edge[0], *negs[:, 0]]], rel[[edge[1], *negs[:, 1]]], ent[[edge[2], *negs[:, 2]]])
            # skip configurations sitting on a hinge kink
            if np.min(np.abs(f[1:] - f[0] + lam)) < 1e-3:
                continue
            _, grad = loss_gradient(scorer, edge, negs, ent, rel, lam)
            ge, gr = dense(grad, ent, rel)
            fe, fr = finite_difference(scorer, edge, negs, ent, rel, lam)
            a, b = np.concatenate([ge.ravel(), gr.ravel()]), np.concatenate([fe.ravel(), fr.ravel()])
            scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
            assert np.linalg.norm(a - b) / scale < 1e-4
            checked += 1


class TestNegativeSampling:
    def test_half_corrupted_half_random(self, toy_graph):
        rng = np.random.default_rng(0)
        edge = toy_graph.edges[0]
        for _ in range(50):
            negs = sample_negatives(edge, toy_graph, 4, rng)
            assert len(negs) == 4
            assert all(n.relation is edge.relation for n in negs)
            for n in negs[:2]:
                assert (n.source == edge.source) != (n.destination == edge.destination)

    def test_corrupting_rating_edge_keeps_types(self, toy_graph):
        rng = np.random.default_rng(1)
        edge = next(e for e in toy_graph if e.relation is Relation.HIGH_RATING)
        for _ in range(100):
            for n in sample_negatives(edge, toy_graph, 4, rng):
                assert n.destination.kind is EntityKind.ITEM
                assert n.source.kind is EntityKind.USER

    def test_deterministic(self, toy_graph):
        edge = toy_graph.edges[3]
        a = [sample_negatives(edge, toy_graph, 6, np.random.default_rng(9)) for _ in range(2)]
        assert a[0] == a[1]

    def test_avoids_positives(self, toy_graph):
        sampler = NegativeSampler(toy_graph)
        negs = sampler.sample(toy_graph.edge_index, 10, np.random.default_rng(0))
        edges = {tuple(e) for e in toy_graph.edge_index.tolist()}
        clashes = sum(tuple(t) in edges for t in negs.reshape(-1, 3).tolist())
        # the dense toy graph leaves few free slots, so some retries may run out
        assert clashes / negs.shape[0] / negs.shape[1] < 0.05

    def test_n_must_be_even(self, toy_graph):
        with pytest.raises(ValueError):
            sample_negatives(toy_graph.edges[0], toy_graph, 3, np.random.default_rng(0))

    def test_no_compatible_entity(self):
        g = build_graph([RatingRecord("u", "i", 5.0)], [], "ger")
        sampler = NegativeSampler(g)
        with pytest.raises(EmbeddingError):
            sampler.sample(np.array([[0, Relation.LIKES.index, 1]]), 2, np.random.default_rng(0))


class TestTrain:
    def test_bit_identical(self, toy_graph):
        cfg = TrainConfig(dim=8, epochs=5, seed=3)
        assert train(toy_graph, cfg) == train(toy_graph, cfg)

    def test_loss_decreases_on_toy(self):
        ratings = [RatingRecord(f"u{n % 3}", f"i{n}", 5.0 if n % 2 else 1.0) for n in range(10)]
        g = build_graph(ratings, [], "ger")
        assert len(g) == 10
        table = train(g, TrainConfig(dim=8, epochs=200, batch_size=5, seed=0))
        assert len(table.loss_trace) == 200
        assert table.loss_trace[-1] < table.loss_trace[0]

    def test_init_scale(self, toy_graph):
        t = init_table(toy_graph, 64, Scorer.COMPLEX, np.random.default_rng(0))
        assert t.vectors.std() == pytest.approx(1 / 8, rel=0.1)
        assert t.relations.std() == pytest.approx(1 / 8, rel=0.2)
        ident = init_table(toy_graph, 4, Scorer.COMPLEX, np.random.default_rng(0), "identity")
        np.testing.assert_array_equal(ident.relations, np.tile([1, 1, 1, 1, 0, 0, 0, 0], (6, 1)))

    def test_sparse_update(self, toy_graph):
        for optimizer in ("adagrad", "sgd"):
            trainer = Trainer(toy_graph, TrainConfig(dim=4, margin=100.0, optimizer=optimizer))
            before = trainer.entities.copy()
            pos = np.array([[0, Relation.HIGH_RATING.index, 8]])
            neg = np.array([[[1, Relation.HIGH_RATING.index, 9], [0, Relation.HIGH_RATING.index, 10]]])
            trainer.step(pos, neg)
            moved = set(np.flatnonzero((trainer.entities != before).any(axis=1)).tolist())
            assert moved == {0, 1, 8, 9, 10}

    def test_distmult_imaginary_stays_zero(self, toy_graph):
        t = train(toy_graph, TrainConfig(dim=4, epochs=3, scorer="distmult"))
        assert not t.vectors[:, 4:].any() and not t.relations[:, 4:].any()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_non_finite_loss_aborts(self, toy_graph):
        table = init_table(toy_graph, 4, Scorer.COMPLEX, np.random.default_rng(0))
        table.vectors[:] = np.inf
        with pytest.raises(TrainingError, match="epoch 0, batch 0"):
            Trainer(toy_graph, TrainConfig(dim=4, epochs=1), table).run()

    def test_empty_graph(self):
        with pytest.raises(EmbeddingError):
            train(build_graph([], [], "ger"), TrainConfig(dim=2))

    @pytest.mark.parametrize("scorer", list(Scorer))
    def test_parallel_mode_keeps_invariants(self, toy_graph, scorer):
        t = train(toy_graph, TrainConfig(dim=8, epochs=30, batch_size=16, workers=3, scorer=scorer))
        assert np.isfinite(t.vectors).all() and np.isfinite(t.relations).all()
        assert len(t) == len(toy_graph.entities())
        assert t.loss_trace[-1] < t.loss_trace[0]

    @pytest.mark.parametrize("kwargs", [
        {"dim": 0}, {"margin": 0.0}, {"negatives": 3}, {"learning_rate": 0.0},
        {"optimizer": "adam"}, {"workers": 0}, {"relation_init": "zeros"},
    ])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


class TestPersistence:
    def test_round_trip(self, tmp_path, toy_graph):
        t = train(toy_graph, TrainConfig(dim=3, epochs=2, scorer="transe"))
        save_embeddings(t, tmp_path / "e.tsv")
        back = load_embeddings(tmp_path / "e.tsv")
        assert back == t
        assert back.scorer is Scorer.TRANSE

    def test_empty_table(self, tmp_path):
        t = EmbeddingTable([], np.zeros((0, 4)), np.zeros((6, 4)))
        save_embeddings(t, tmp_path / "e.tsv")
        back = load_embeddings(tmp_path / "e.tsv")
        assert len(back) == 0 and back == t

    def test_truncated_row(self, tmp_path, toy_graph):
        t = init_table(toy_graph, 2, Scorer.COMPLEX, np.random.default_rng(0))
        save_embeddings(t, tmp_path / "e.tsv")
        lines = (tmp_path / "e.tsv").read_text().splitlines()
        lines[2] = lines[2].rsplit(" ", 1)[0]
        (tmp_path / "e.tsv").write_text("\n".join(lines) + "\n")
        with pytest.raises(EmbeddingError, match="line 3"):
            load_embeddings(tmp_path / "e.tsv")

    def test_missing_relation_rows(self, tmp_path):
        (tmp_path / "e.tsv").write_text("#dim=1 scorer=complex\nu:a\t1.0 2.0\n")
        with pytest.raises(EmbeddingError, match="missing relation"):
            load_embeddings(tmp_path / "e.tsv")

    @settings(max_examples=25)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 5))
    def test_round_trip_exact_random(self, tmp_path_factory, seed, dim):
        rng = np.random.default_rng(seed)
        refs = [user("a"), user("b"), item("x")]
        t = EmbeddingTable(refs, rng.normal(size=(3, 2 * dim)) * 10.0 ** rng.integers(-300, 300),
                           rng.normal(size=(6, 2 * dim)))
        p = tmp_path_factory.mktemp("e") / "e.tsv"
        save_embeddings(t, p)
        assert load_embeddings(p) == t


class TestLinkPrediction:
    def test_auc_matches_brute_force(self):
        rng = np.random.default_rng(0)
        pos = rng.integers(0, 5, size=30).astype(float)
        neg = rng.integers(0, 5, size=40).astype(float)
        brute = np.mean([1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg])
        assert pairwise_auc(pos, neg) == pytest.approx(brute, abs=1e-12)

    def test_report_on_trained_graph(self, toy_graph):
        rng = np.random.default_rng(0)
        idx = rng.permutation(len(toy_graph))
        test = [toy_graph.edges[i] for i in idx[:5]]
        sub = toy_graph.restrict([toy_graph.edges[i] for i in idx[5:]])
        table = train(sub, TrainConfig(dim=8, epochs=20))
        rep = link_prediction_report(table, toy_graph, test)
        assert 0.0 <= rep["auc"] <= 1.0 and 0.0 <= rep["hits@10"] <= 1.0

    def test_perfect_embedding_scores_one(self):
        # positives s + r = d exactly under TransE; any corruption scores lower
        refs = [user("a"), user("b"), item("x"), item("y")]
        vec = np.array([[0.0, 0.0], [5.0, 0.0], [1.0, 0.0], [9.0, 0.0]])
        rel = np.zeros((len(RELATIONS), 2))
        rel[Relation.HIGH_RATING.index] = [1.0, 0.0]
        t = EmbeddingTable(refs, vec, rel, Scorer.TRANSE)
        g = build_graph([RatingRecord("a", "x", 5.0), RatingRecord("b", "y", 1.0)], [], "ger")
        test = [Triple(user("a"), Relation.HIGH_RATING, item("x"))]
        rep = link_prediction_report(t, g, test, n_negatives=4)
        assert rep["auc"] == 1.0 and rep["hits@10"] == 1.0
