import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from docre import autodiff as ad
from docre import head as hd
from docre.autodiff import Parameter, Tensor
from docre.corpus import Label
from docre.head import HeadConfig
from docre.model import named_rng

from conftest import analytic_grad, make_model, numeric_grad, rel_err, tiny_schema


def _params(hidden=4, enc_dim=6, classes=3, seed=0):
    return hd.init_head_params(HeadConfig(hidden=hidden), enc_dim, classes, np.random.default_rng(seed))


class TestPooling:
    def test_one_mention_unchanged(self):
        v = np.array([[0.5, -1.0]])
        np.testing.assert_array_equal(hd.pool_entity(Tensor(v)).data, v[0])

    def test_identical_mentions(self):
        v = np.array([0.5, -1.0])
        np.testing.assert_allclose(hd.pool_entity(Tensor(np.stack([v] * 3))).data, v + math.log(3), rtol=1e-15)

    def test_pooled_exceeds_max_by_less_than_log_k(self):
        m = np.random.default_rng(0).normal(size=(5, 7))
        gap = hd.pool_entity(Tensor(m)).data - m.max(axis=0)
        assert np.all(gap >= 0) and np.all(gap < math.log(5))


class TestProjection:
    def test_zero_weights(self):
        p = _params()
        for k in ("head.w", "head.b"):
            p[k].data[...] = 0
        np.testing.assert_array_equal(hd.project(Tensor(np.ones((2, 6))), p, "head").data, 0.0)

    def test_range_and_roles(self):
        p = _params()
        x = Tensor(np.random.default_rng(1).normal(size=(4, 6)) * 10)
        h, t = hd.project(x, p, "head").data, hd.project(x, p, "tail").data
        assert np.all(np.abs(h) < 1) and not np.array_equal(h, t)
        with pytest.raises(ValueError):
            hd.project(x, p, "middle")

    def test_gradient(self):
        p = _params()
        x = Parameter(np.random.default_rng(2).normal(size=(3, 6)), "x")
        build = lambda: ad.tsum(ad.scale(hd.project(x, p, "tail"), 1.7))  # noqa: E731
        params = [x, p["tail.w"], p["tail.b"]]
        for prm, g in zip(params, analytic_grad(build, params)):
            assert rel_err(g, numeric_grad(lambda: build().item(), prm)) < 1e-4


class TestBilinear:
    def test_zero_weights_constant_bias(self):
        p = _params()
        p["bilinear.w"].data[...] = 0
        p["bilinear.b"].data[...] = 1.5
        s = hd.bilinear_score(Tensor(np.ones((2, 4))), Tensor(np.ones((2, 4))), p).data
        np.testing.assert_array_equal(s, 1.5)

    def test_identity_is_dot_product(self):
        p = _params()
        p["bilinear.w"].data[...] = np.eye(4)
        p["bilinear.b"].data[...] = 0
        rng = np.random.default_rng(3)
        zh, zt = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
        s = hd.bilinear_score(Tensor(zh), Tensor(zt), p).data
        np.testing.assert_allclose(s, np.repeat((zh * zt).sum(1, keepdims=True), 3, axis=1), atol=1e-14)

    def test_matches_double_loop(self):
        p = _params()
        rng = np.random.default_rng(4)
        zh, zt = rng.normal(size=(6, 4)), rng.normal(size=(6, 4))
        s = hd.bilinear_score(Tensor(zh), Tensor(zt), p).data
        w, b = p["bilinear.w"].data, p["bilinear.b"].data
        for i in range(6):
            for r in range(3):
                assert abs(s[i, r] - (zh[i] @ w[r] @ zt[i] + b[r])) < 1e-12


class TestPairRepresentation:
    def test_zero_weights(self):
        p = _params()
        p["pair.w"].data[...] = 0
        p["pair.b"].data[...] = 0
        out = hd.pair_representation(Tensor(np.ones((1, 4))), Tensor(np.ones((1, 4))), p).data
        np.testing.assert_array_equal(out, 0.0)

    def test_ordered(self):
        p = _params()
        a, b = Tensor(np.full((1, 4), 0.3)), Tensor(np.full((1, 4), -0.6))
        assert not np.allclose(hd.pair_representation(a, b, p).data, hd.pair_representation(b, a, p).data)

    def test_gradient(self):
        p = _params()
        rng = np.random.default_rng(5)
        zh, zt = Parameter(rng.normal(size=(2, 4)), "zh"), Parameter(rng.normal(size=(2, 4)), "zt")
        build = lambda: ad.tsum(hd.pair_representation(zh, zt, p))  # noqa: E731
        params = [zh, zt, p["pair.w"], p["pair.b"]]
        for prm, g in zip(params, analytic_grad(build, params)):
            assert rel_err(g, numeric_grad(lambda: build().item(), prm)) < 1e-4


class TestAdaptiveScores:
    def test_equal_vector_scores_one(self):
        table = np.random.default_rng(6).normal(size=(3, 5))
        s = hd.adaptive_scores(Tensor(table[1:2] * 2.0), Tensor(table)).data
        assert s[0, 1] == pytest.approx(1.0, abs=1e-15)

    def test_orthogonal_scores_zero(self):
        s = hd.adaptive_scores(Tensor([[0.0, 0.0, 1.0]]), Tensor([[1.0, 0, 0], [0, 2.0, 0]])).data
        np.testing.assert_array_equal(s, 0.0)

    def test_bounded_on_random_inputs(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            s = hd.adaptive_scores(Tensor(rng.normal(size=(1, 4))), Tensor(rng.normal(size=(3, 4)))).data
            assert np.max(np.abs(s)) <= 1.0


class TestCombine:
    def test_lambda_zero_is_sigmoid_of_s(self):
        s = np.random.default_rng(8).normal(size=(4, 3))
        sp = np.random.default_rng(9).uniform(-1, 1, size=(4, 3))
        assert np.array_equal(hd.combine(Tensor(s), Tensor(sp), 0.0).data, ad.sigmoid(Tensor(s)).data)

    def test_zero_scores(self):
        np.testing.assert_array_equal(hd.combine(Tensor(np.zeros(3)), Tensor(np.zeros(3)), 10.0).data, 0.5)

    def test_semantic_penalty_flips_a_confident_positive(self):
        p = hd.combine(Tensor([2.0]), Tensor([-0.3]), 10.0).item()
        assert p == pytest.approx(1 / (1 + math.e), abs=1e-12)
        assert p == pytest.approx(0.2689, abs=1e-4)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-20, 20), st.floats(-1, 1), st.floats(0, 100))
    def test_bounded_adaptation(self, s, sp, lam):
        z = hd.combined_logits(Tensor([s]), Tensor([sp]), lam).item()
        assert abs(z - s) <= lam + 1e-9

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-5, 5), st.floats(-1, 0.9), st.floats(0.01, 0.1), st.floats(0.1, 20))
    def test_monotone_in_adaptive_score(self, s, sp, step, lam):
        lo = hd.combined_logits(Tensor([s]), Tensor([sp]), lam).item()
        hi = hd.combined_logits(Tensor([s]), Tensor([sp + step]), lam).item()
        assert hi > lo


class TestLoss:
    def test_perfect_predictions(self):
        y = np.array([[1.0, 0.0], [0.0, 1.0]])
        assert hd.loss(Tensor(np.clip(y, 1e-12, 1 - 1e-12)), y).item() < 1e-10

    def test_all_half(self):
        y = np.array([[1.0, 0.0], [0.0, 0.0]])
        assert hd.loss(Tensor(np.full((2, 2), 0.5)), y).item() == pytest.approx(math.log(2), rel=1e-15)

    def test_hand_case(self):
        p = np.array([[0.8, 0.1], [0.3, 0.6]])
        y = np.array([[1.0, 0.0], [0.0, 1.0]])
        terms = [-math.log(0.8), -math.log(0.9), -math.log(0.7), -math.log(0.6)]
        assert hd.loss(Tensor(p), y).item() == pytest.approx(sum(terms) / 4, rel=1e-14)


class TestGoldMatrix:
    def test_pairs_and_na_exclusivity(self):
        schema = tiny_schema()
        labels = [Label(0, 1, "P17"), Label(0, 1, "P131"), Label(2, 0, "P131")]
        pairs, y = hd.gold_matrix(labels, 3, schema)
        assert len(pairs) == 6 and all(h != t for h, t in pairs)
        na = schema.na_index
        assert np.array_equal(y[:, na] == 1, y[:, :na].sum(axis=1) == 0)
        row = {tuple(p): i for i, p in enumerate(pairs.tolist())}
        assert y[row[(0, 1)]].tolist() == [1, 1, 0]
        assert y[row[(1, 0)]].tolist() == [0, 0, 1]

    def test_single_entity_has_no_pairs(self):
        pairs, y = hd.gold_matrix([], 1, tiny_schema())
        assert pairs.shape == (0, 2) and y.shape == (0, 3)


class TestModel:
    def test_end_to_end_gradient_check(self, small_corpus):
        """Every parameter, three random coordinates each, 2-layer model."""
        docs, schema = small_corpus
        model = make_model(docs, schema, dim=8, layers=2, hidden=4, lam=10.0)
        batch = [model.prepare(d) for d in docs[:2] if len(d.vertex_set) > 1]
        params = model.parameters()
        grads = analytic_grad(lambda: model.batch_loss(batch), params)
        rng = np.random.default_rng(0)
        for p, g in zip(params, grads):
            coords = rng.choice(p.data.size, size=min(3, p.data.size), replace=False)
            num = numeric_grad(lambda: model.batch_loss(batch).item(), p, coords=coords)
            flat = g.reshape(-1)[coords]
            assert rel_err(flat, num.reshape(-1)[coords]) < 1e-3, p.name

    def test_lambda_zero_matches_prism_off(self, small_corpus):
        docs, schema = small_corpus
        on = make_model(docs, schema, prism=True, lam=0.0)
        off = make_model(docs, schema, prism=False)
        prepared = [on.prepare(d) for d in docs]
        a, b = on.score(prepared).logits(), off.score(prepared).logits()
        assert np.array_equal(ad.sigmoid_array(a), ad.sigmoid_array(b))

    def test_relation_embedding_gradient_depends_on_lambda(self, small_corpus):
        docs, schema = small_corpus
        for lam, nonzero in ((10.0, True), (0.0, False)):
            model = make_model(docs, schema, lam=lam)
            batch = [model.prepare(docs[0])]
            analytic_grad(lambda: model.batch_loss(batch), model.parameters())
            assert bool(np.any(model.encoder.params["rel_emb"].grad != 0)) is nonzero

    def test_named_streams_are_independent(self):
        a = named_rng(0, "data").random(3)
        b = named_rng(0, "dropout").random(3)
        assert not np.array_equal(a, b)
        assert np.array_equal(a, named_rng(0, "data").random(3))

    def test_state_round_trip(self, small_corpus):
        docs, schema = small_corpus
        m1, m2 = make_model(docs, schema, seed=0), make_model(docs, schema, seed=1)
        m2.load_state(m1.state())
        prepared = [m1.prepare(d) for d in docs[:3]]
        assert np.array_equal(m1.score(prepared).logits(), m2.score(prepared).logits())
