import numpy as np
import pytest
import scipy.sparse as sp

from hicrec.metapath import Aspect, MetaPath
from hicrec.model import (HicRec, MfBpr, bpr_loss, build_model, extract_interest,
                          inter_composition, intra_composition, total_loss)
from hicrec.nnmath import finite_difference_check
from hicrec.hin import sample_bpr_triples

from oracles import inter_loop_oracle, intra_loop_oracle, score_loop_oracle


def toy_model(aspects, **kw):
    # seed chosen so the relu chain keeps most units alive at this tiny width
    args = dict(dim=4, factor_dim=3, layers=2, seed=7)
    args.update(kw)
    return HicRec(aspects, **args)


def identity_aspect(n_users=3, n_items=4, rng=None):
    """Aspect whose adjacencies are identities and features are random."""
    rng = rng or np.random.default_rng(0)
    return Aspect(
        name="ident",
        user_path=MetaPath(("U", "I", "U")),
        item_path=MetaPath(("I", "U", "I")),
        user_adj=sp.identity(n_users, format="csr"),
        item_adj=sp.identity(n_items, format="csr"),
        user_feat=rng.random((n_users, n_users)),
        item_feat=rng.random((n_items, n_items)),
    )


class TestIntraComposition:
    def test_two_elements_single_factor(self):
        a, b, x, y = 1.5, -2.0, 0.7, 3.0
        out = intra_composition(np.array([a, b]), np.array([[x], [y]]))
        assert np.allclose(out, [a * x * b * y])

    def test_single_element_is_empty_sum(self):
        assert np.array_equal(intra_composition(np.array([5.0]), np.ones((1, 4))),
                              np.zeros(4))

    def test_matches_double_loop(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            d, K = rng.integers(1, 9, size=2)
            e = rng.standard_normal(d)
            V = rng.standard_normal((d, K))
            assert np.allclose(intra_composition(e, V), intra_loop_oracle(e, V),
                               atol=1e-10)


class TestInterComposition:
    def test_single_aspect_is_zero(self):
        out = inter_composition([np.array([1.0, 2.0])], [np.ones((2, 3))])
        assert np.array_equal(out, np.zeros(3))

    def test_two_aspects_is_product(self):
        rng = np.random.default_rng(5)
        e1, e2 = rng.standard_normal(4), rng.standard_normal(4)
        V1, V2 = rng.standard_normal((4, 2)), rng.standard_normal((4, 2))
        s1, s2 = e1 @ V1, e2 @ V2
        assert np.allclose(inter_composition([e1, e2], [V1, V2]), s1 * s2)

    def test_matches_quadruple_loop(self):
        rng = np.random.default_rng(8)
        for _ in range(30):
            P = int(rng.integers(1, 4))
            d, K = int(rng.integers(1, 6)), int(rng.integers(1, 5))
            es = [rng.standard_normal(d) for _ in range(P)]
            Vs = [rng.standard_normal((d, K)) for _ in range(P)]
            assert np.allclose(inter_composition(es, Vs), inter_loop_oracle(es, Vs),
                               atol=1e-10)


class TestInterest:
    def test_elementwise_product(self, shop_aspects):
        model = toy_model(shop_aspects)
        emb = model.encode_all()
        got = extract_interest(1, 2, emb)
        for e, a in zip(got, emb):
            assert np.array_equal(e, a.user[1] * a.item[2])

    def test_zero_item_side(self):
        class E:
            user = np.array([[1.0, 2.0]])
            item = np.array([[0.0, 0.0]])
        assert np.array_equal(extract_interest(0, 0, [E()])[0], [0.0, 0.0])

    def test_self_product_nonnegative(self):
        class E:
            user = np.array([[1.0, -2.0]])
            item = np.array([[1.0, -2.0]])
        assert np.all(extract_interest(0, 0, [E()])[0] >= 0)


class TestEncoder:
    def test_identity_gcn_is_relu_chain(self):
        aspect = identity_aspect()
        model = toy_model([aspect], dim=3, layers=2)
        for l in range(2):
            model.params[f"aspect.ident.layer{l}.weight"].value[...] = np.eye(3)
            model.params[f"aspect.ident.layer{l}.bias"].value[...] = 0.0
        emb = model.encode_all()[0]
        w0 = model.params["aspect.ident.user_proj.weight"].value
        b0 = model.params["aspect.ident.user_proj.bias"].value
        u0 = np.maximum(aspect.user_feat @ w0 + b0, 0.0)
        # relu is idempotent on the nonnegative projected features
        assert np.allclose(emb.user, u0)

    def test_zero_features_give_zero_embeddings(self):
        aspect = identity_aspect()
        aspect.user_feat = np.zeros_like(aspect.user_feat)
        aspect.item_feat = np.zeros_like(aspect.item_feat)
        model = toy_model([aspect], dim=3, layers=2)
        for name in model.params.names():
            if name.endswith(".bias"):
                model.params[name].value[...] = 0.0
        emb = model.encode_all()[0]
        assert np.array_equal(emb.user, np.zeros_like(emb.user))
        assert np.array_equal(emb.item, np.zeros_like(emb.item))

    def test_matches_manual_forward(self, shop_aspects):
        model = toy_model(shop_aspects, layers=2)
        emb = model.encode_all()
        for p, aspect in enumerate(shop_aspects):
            w0 = model.params[f"aspect.{aspect.name}.user_proj.weight"].value
            b0 = model.params[f"aspect.{aspect.name}.user_proj.bias"].value
            u = np.maximum(aspect.user_feat @ w0 + b0, 0.0)
            a = aspect.user_adj.toarray()
            for l in range(2):
                W = model.params[f"aspect.{aspect.name}.layer{l}.weight"].value
                b = model.params[f"aspect.{aspect.name}.layer{l}.bias"].value
                u = np.maximum(a @ u @ W + b, 0.0)
            assert np.allclose(emb[p].user, u, atol=1e-12)

    def test_mlp_variant_ignores_adjacency(self, shop_aspects):
        gcn = toy_model(shop_aspects, encoder="gcn")
        mlp = toy_model(shop_aspects, encoder="mlp")
        emb = mlp.encode_all()[0]
        assert emb.user.shape == (shop_aspects[0].n_users, 4)
        # same seed, same parameters, different propagation
        assert not np.allclose(gcn.encode_all()[0].user, emb.user)

    def test_mlp_identity_weights_is_relu_chain(self):
        aspect = identity_aspect()
        model = toy_model([aspect], dim=3, layers=2, encoder="mlp")
        for l in range(2):
            model.params[f"aspect.ident.layer{l}.weight"].value[...] = np.eye(3)
            model.params[f"aspect.ident.layer{l}.bias"].value[...] = 0.0
        emb = model.encode_all()[0]
        w0 = model.params["aspect.ident.user_proj.weight"].value
        b0 = model.params["aspect.ident.user_proj.bias"].value
        assert np.allclose(emb.user, np.maximum(aspect.user_feat @ w0 + b0, 0.0))

    def test_shared_layers_across_aspects(self, shop_aspects):
        model = toy_model(shop_aspects, share_across_aspects=True)
        names = model.params.names()
        assert "shared.layer0.weight" in names
        assert not any(n.startswith("aspect.history.layer") for n in names)


class TestPredict:
    def test_zero_weights_leaves_linear_term(self, shop_aspects):
        model = toy_model(shop_aspects)
        model.params["score.weights"].value[...] = 0.0
        bd = model.score_breakdown(0, 1)
        assert bd.total == bd.linear

    def test_breakdown_consistency(self, shop_aspects):
        model = toy_model(shop_aspects)
        bd = model.score_breakdown(2, 3)
        assert np.allclose(bd.ic, bd.inter + sum(bd.intra))
        w = model.params["score.weights"].value
        assert np.isclose(bd.total, bd.linear + float(w @ bd.ic))

    def test_matches_loop_oracle(self, shop_aspects):
        model = toy_model(shop_aspects)
        emb = model.encode_all()
        assert all(np.any(e.user != 0) and np.any(e.item != 0) for e in emb)
        factors = [model.params[f"aspect.{a.name}.factors"].value
                   for a in shop_aspects]
        w = model.params["score.weights"].value
        for u in range(3):
            for i in range(4):
                want = score_loop_oracle(u, i, emb, factors, w)
                assert np.isclose(model.score_breakdown(u, i, emb).total, want,
                                  atol=1e-10)
                got_batch = model.scores(np.array([u]), np.array([i]), emb)[0]
                assert np.isclose(got_batch, want, atol=1e-10)

    def test_batched_scores_match_scorer(self, shop_aspects):
        model = toy_model(shop_aspects)
        scorer = model.make_scorer()
        items = np.arange(model.n_items)
        for u in range(model.n_users):
            batch = model.scores(np.full(items.size, u), items)
            assert np.allclose(scorer.score(u, items), batch, atol=1e-12)

    def test_linear_in_score_weights(self, shop_aspects):
        model = toy_model(shop_aspects)
        bd1 = model.score_breakdown(1, 2)
        model.params["score.weights"].value[...] *= 2.0
        bd2 = model.score_breakdown(1, 2)
        assert np.isclose(bd2.total - bd2.linear, 2.0 * (bd1.total - bd1.linear))

    def test_aspect_permutation_invariance(self, shop_aspects):
        fwd = toy_model(shop_aspects)
        rev = toy_model(list(reversed(shop_aspects)))
        for u, i in [(0, 0), (2, 5), (4, 3)]:
            assert np.isclose(fwd.score_breakdown(u, i).total,
                              rev.score_breakdown(u, i).total, atol=1e-12)

    def test_linear_variant_equals_zeroed_weights(self, shop_aspects):
        full = toy_model(shop_aspects)
        full.params["score.weights"].value[...] = 0.0
        linear = toy_model(shop_aspects, composition=False)
        users = np.array([0, 1, 2, 3])
        items = np.array([1, 0, 5, 2])
        assert np.allclose(full.scores(users, items), linear.scores(users, items),
                           atol=1e-12)


class TestBprLoss:
    def test_equal_scores(self):
        assert np.isclose(bpr_loss(1.3, 1.3), np.log(2))

    def test_margin_two(self):
        assert np.isclose(bpr_loss(2.0, 0.0), np.log1p(np.exp(-2.0)))

    def test_large_margin_vanishes(self):
        assert bpr_loss(1e3, 0.0) == 0.0  # underflows to exactly zero
        assert bpr_loss(60.0, 0.0) < 1e-25

    def test_always_positive_and_monotone(self):
        margins = np.linspace(-5, 5, 41)
        losses = bpr_loss(margins, 0.0)
        assert np.all(losses[:-1] > losses[1:])
        assert np.all(losses[np.abs(margins) < 30] > 0)

    def test_convexity_pair_bound(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            a, b = rng.standard_normal(2) * 3
            total = bpr_loss(a, b) + bpr_loss(b, a)
            assert total >= 2 * np.log(2) - 1e-12
        assert np.isclose(bpr_loss(0.7, 0.7) + bpr_loss(0.7, 0.7), 2 * np.log(2))

    def test_derivative_at_zero_margin(self):
        eps = 1e-7
        slope = (bpr_loss(eps, 0.0) - bpr_loss(-eps, 0.0)) / (2 * eps)
        assert np.isclose(slope, -0.5, atol=1e-6)


class TestLosses:
    def test_total_loss_is_mean_bpr_when_unregularized(self, shop_aspects, small_synth):
        model = toy_model(shop_aspects)
        split = None
        users = np.array([0, 1, 2])
        pos = np.array([0, 1, 2])
        neg = np.array([3, 4, 5])
        r_pos = model.scores(users, pos)
        r_neg = model.scores(users, neg)
        want = float(np.mean(bpr_loss(r_pos, r_neg)))
        assert np.isclose(model.loss_value(users, pos, neg, l2=0.0), want, atol=1e-12)

    def test_l2_adds_global_penalty(self, shop_aspects):
        model = toy_model(shop_aspects)
        base = model.loss_value(np.array([0]), np.array([1]), np.array([2]), l2=0.0)
        reg = model.loss_value(np.array([0]), np.array([1]), np.array([2]), l2=1e-3)
        assert np.isclose(reg - base, 1e-3 * model.params.sum_squares())

    def test_single_triple_manual_arithmetic(self):
        model = MfBpr(1, 3, dim=2, seed=0)
        model.params["user.embeddings"].value[...] = [[1.0, 0.0]]
        model.params["item.embeddings"].value[...] = [[1.0, 1.0], [0.0, 2.0], [0.0, 0.0]]
        # r_pos = 1, r_neg = 0, so the data term is softplus(-1)
        lam = 1e-2
        want = np.log1p(np.exp(-1.0)) + lam * (1.0 + (1 + 1 + 4))
        got = model.loss_value(np.array([0]), np.array([0]), np.array([1]), l2=lam)
        assert np.isclose(got, want, atol=1e-12)

    def test_empty_batch_rejected(self, shop_aspects):
        model = toy_model(shop_aspects)
        with pytest.raises(ValueError):
            model.loss_value(np.array([], dtype=int), np.array([], dtype=int),
                             np.array([], dtype=int))

    def test_total_loss_helper(self, small_synth):
        split = small_synth["split"]
        model = build_model("mf-bpr", n_users=split.n_users, n_items=split.n_items,
                            dim=4, seed=0)
        triples = sample_bpr_triples(split, 0)
        direct = model.loss_value(triples.users, triples.pos_items, triples.neg_items,
                                  l2=1e-4)
        assert total_loss(model, triples, 1e-4) == direct


class TestGradients:
    def fd_ok(self, model, users, pos, neg, l2=1e-4, tol=1e-4):
        model.loss_and_grads(users, pos, neg, l2=l2)
        report = finite_difference_check(
            lambda s: model.loss_value(users, pos, neg, l2=l2),
            model.params, tol=tol)
        assert report.ok, report.summary()
        return report

    def test_full_model_gradients(self, shop_aspects):
        model = toy_model(shop_aspects)
        rng = np.random.default_rng(0)
        users = rng.integers(0, model.n_users, 6)
        pos = rng.integers(0, model.n_items, 6)
        neg = rng.integers(0, model.n_items, 6)
        report = self.fd_ok(model, users, pos, neg)
        assert report.checked == model.params.param_count()

    def test_mlp_variant_gradients(self, shop_aspects):
        model = toy_model(shop_aspects, encoder="mlp")
        self.fd_ok(model, np.array([0, 1]), np.array([2, 3]), np.array([4, 5]))

    def test_linear_variant_gradients(self, shop_aspects):
        model = toy_model(shop_aspects, composition=False)
        self.fd_ok(model, np.array([0, 4]), np.array([1, 2]), np.array([0, 5]))

    def test_shared_layer_gradients(self, shop_aspects):
        model = toy_model(shop_aspects, share_across_aspects=True)
        self.fd_ok(model, np.array([1, 2]), np.array([0, 3]), np.array([4, 1]))

    def test_mf_bpr_gradients(self):
        model = MfBpr(4, 5, dim=3, seed=1)
        self.fd_ok(model, np.array([0, 1, 2]), np.array([0, 1, 2]),
                   np.array([3, 4, 0]))

    def test_l2_gradient_alone_is_2_lambda_theta(self, shop_aspects):
        model = toy_model(shop_aspects)
        users, pos, neg = np.array([0]), np.array([1]), np.array([2])
        lam = 1e-3
        model.loss_and_grads(users, pos, neg, l2=0.0)
        plain = {t.name: t.grad.copy() for t in model.params}
        model.loss_and_grads(users, pos, neg, l2=lam)
        for t in model.params:
            assert np.allclose(t.grad - plain[t.name], 2 * lam * t.value, atol=1e-12)


class TestMfBpr:
    def test_zero_embeddings_zero_scores(self):
        model = MfBpr(3, 4, dim=2, seed=0)
        model.params["user.embeddings"].value[...] = 0.0
        assert np.array_equal(model.scores(np.array([0, 1]), np.array([2, 3])),
                              [0.0, 0.0])

    def test_overfits_tiny_dataset(self):
        from hicrec.nnmath import adam_step

        rng = np.random.default_rng(0)
        n_users, n_items = 5, 8
        pos_sets = [set(map(int, rng.choice(n_items, 3, replace=False)))
                    for _ in range(n_users)]
        model = MfBpr(n_users, n_items, dim=8, seed=2)
        step = 0
        for _ in range(300):
            users, pos, neg = [], [], []
            for u in range(n_users):
                for i in pos_sets[u]:
                    j = int(rng.integers(0, n_items))
                    while j in pos_sets[u]:
                        j = int(rng.integers(0, n_items))
                    users.append(u), pos.append(i), neg.append(j)
            model.loss_and_grads(np.array(users), np.array(pos), np.array(neg), l2=0.0)
            step += 1
            adam_step(model.params, lr=0.05, t=step)
        # training AUC: every (positive, negative) pair of each user
        correct = total = 0
        for u in range(n_users):
            negs = [j for j in range(n_items) if j not in pos_sets[u]]
            sp_ = model.scores(np.full(len(pos_sets[u]), u), np.array(sorted(pos_sets[u])))
            sn = model.scores(np.full(len(negs), u), np.array(negs))
            for a in sp_:
                for b in sn:
                    total += 1
                    correct += a > b
        assert correct / total >= 0.95


def test_build_model_kinds(shop_aspects):
    assert isinstance(build_model("hicrec", aspects=shop_aspects, dim=4,
                                  factor_dim=3, layers=1), HicRec)
    assert build_model("hicrec_linear", aspects=shop_aspects, dim=4, factor_dim=3,
                       layers=1).composition is False
    assert build_model("hicrec-mlp", aspects=shop_aspects, dim=4, factor_dim=3,
                       layers=1).encoder == "mlp"
    assert isinstance(build_model("mf-bpr", aspects=shop_aspects, dim=4), MfBpr)
    with pytest.raises(Exception):
        build_model("nope", aspects=shop_aspects)
