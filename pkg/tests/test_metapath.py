import numpy as np
import pytest
import scipy.sparse as sp

from hicrec.errors import SchemaError
from hicrec.hin import GraphSchema
from hicrec.metapath import (CommutingMatrix, MetaPath, build_aspect,
                             commuting_matrix, normalize_adjacency, parse_metapath,
                             pathsim)

from oracles import (graph_from_arrays, power_iteration_radius, random_hin,
                     random_valid_path, walk_count_oracle)

SHOP_SCHEMA = GraphSchema(node_types=("U", "I", "B"),
                          relations=(("U", "I"), ("I", "B")),
                          user_type="U", item_type="I")


class TestParse:
    def test_five_hop_path(self):
        mp = parse_metapath("UIBIU", SHOP_SCHEMA)
        assert mp.types == ("U", "I", "B", "I", "U")
        assert mp.is_palindrome

    def test_missing_relation(self):
        with pytest.raises(SchemaError, match="no declared relation"):
            parse_metapath("UU", SHOP_SCHEMA)

    def test_transpose_direction_allowed(self):
        assert parse_metapath("IUI", SHOP_SCHEMA).types == ("I", "U", "I")

    def test_unknown_token(self):
        with pytest.raises(SchemaError, match="unknown node type"):
            parse_metapath("UIX", SHOP_SCHEMA)

    def test_dotted_multiletter_tokens(self):
        schema = GraphSchema(node_types=("U", "I", "Ca"),
                             relations=(("U", "I"), ("I", "Ca")),
                             user_type="U", item_type="I")
        mp = parse_metapath("U.I.Ca.I.U", schema)
        assert mp.types == ("U", "I", "Ca", "I", "U")
        assert str(mp) == "U.I.Ca.I.U"

    def test_too_short(self):
        with pytest.raises(SchemaError):
            parse_metapath("U", SHOP_SCHEMA)


class TestCommutingMatrix:
    def test_uiu_hand_case(self, tiny_ui_graph):
        # W = [[1,1],[0,1]]; counting U-I-U walks by hand gives [[2,1],[1,1]]
        path = parse_metapath("UIU", tiny_ui_graph)
        got = commuting_matrix(path, tiny_ui_graph).matrix.toarray()
        assert np.array_equal(got, [[2, 1], [1, 1]])
        assert np.array_equal(got, walk_count_oracle(tiny_ui_graph, path))

    def test_single_relation_is_adjacency(self, tiny_ui_graph):
        path = parse_metapath("UI", tiny_ui_graph)
        got = commuting_matrix(path, tiny_ui_graph).matrix.toarray()
        assert np.array_equal(got, tiny_ui_graph.relations[("U", "I")].toarray())

    def test_matches_exhaustive_walk_counts(self):
        rng = np.random.default_rng(2024)
        for _ in range(40):
            graph = random_hin(rng)
            path = MetaPath(tuple(random_valid_path(graph, rng)))
            got = commuting_matrix(path, graph).matrix.toarray()
            assert np.array_equal(got, walk_count_oracle(graph, path))

    def test_palindromic_symmetric_psd(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            graph = random_hin(rng)
            half = random_valid_path(graph, rng, max_len=3)
            types = tuple(half + half[-2::-1])  # mirror into a palindrome
            got = commuting_matrix(MetaPath(types), graph).matrix.toarray()
            assert np.array_equal(got, got.T)
            for _ in range(5):
                v = rng.standard_normal(got.shape[0])
                assert v @ got @ v >= -1e-9


class TestPathSim:
    def test_hand_value(self):
        s = pathsim(sp.csr_matrix(np.array([[2.0, 1.0], [1.0, 3.0]])))
        assert np.isclose(s[0, 1], 0.4)
        assert s[0, 0] == 1.0 and s[1, 1] == 1.0

    def test_isolated_nodes_zero(self):
        s = pathsim(sp.csr_matrix(np.zeros((3, 3))))
        assert np.array_equal(s, np.zeros((3, 3)))

    def test_non_square_rejected(self):
        with pytest.raises(ValueError):
            pathsim(sp.csr_matrix(np.ones((2, 3))))

    def test_sparse_output_beyond_limit(self):
        c = sp.csr_matrix(np.array([[2.0, 1.0], [1.0, 3.0]]))
        s = pathsim(c, dense_limit=1)
        assert sp.issparse(s)
        assert np.isclose(s.toarray()[0, 1], 0.4)
        assert s.toarray()[0, 0] == 1.0

    def test_properties_on_random_commuting_matrices(self):
        rng = np.random.default_rng(31)
        for _ in range(100):
            n, k = rng.integers(2, 9, size=2)
            w = (rng.random((n, k)) < 0.5) * rng.integers(1, 4, size=(n, k))
            c = w @ w.T
            s = pathsim(sp.csr_matrix(c.astype(float)))
            assert np.array_equal(s, s.T)
            assert np.all((s >= 0) & (s <= 1 + 1e-12))
            diag = np.diag(s)
            assert set(np.round(diag, 12)) <= {0.0, 1.0}
            # s = 1 exactly when 2*C_ij matches the diagonal sum
            ones = np.isclose(s, 1.0)
            cond = np.isclose(2 * c, c.diagonal()[:, None] + c.diagonal()[None, :])
            assert np.array_equal(ones & (c > 0), cond & (c > 0))


class TestNormalizeAdjacency:
    def test_single_node(self):
        out = normalize_adjacency(sp.csr_matrix(np.zeros((1, 1)))).toarray()
        assert np.array_equal(out, [[1.0]])

    def test_zero_matrix_becomes_identity(self):
        out = normalize_adjacency(sp.csr_matrix(np.zeros((2, 2)))).toarray()
        assert np.array_equal(out, np.eye(2))

    def test_hand_case(self):
        out = normalize_adjacency(sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]])))
        assert np.allclose(out.toarray(), [[0.5, 0.5], [0.5, 0.5]])

    def test_mode_none_returns_raw(self):
        c = sp.csr_matrix(np.array([[0.0, 2.0], [2.0, 0.0]]))
        out = normalize_adjacency(c, mode="none")
        assert np.array_equal(out.toarray(), c.toarray())

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            normalize_adjacency(sp.identity(2, format="csr"), mode="rowsum")

    def test_symmetry_exact(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            n = int(rng.integers(2, 12))
            m = (rng.random((n, n)) < 0.4) * rng.integers(1, 5, size=(n, n))
            m = np.tril(m) + np.tril(m, -1).T  # symmetric integer matrix
            out = normalize_adjacency(sp.csr_matrix(m.astype(float))).toarray()
            assert np.array_equal(out, out.T)

    def test_spectral_radius_at_most_one(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            n = int(rng.integers(2, 15))
            m = (rng.random((n, n)) < 0.5).astype(float)
            m = np.maximum(m, m.T)
            out = normalize_adjacency(sp.csr_matrix(m)).toarray()
            assert power_iteration_radius(out) <= 1.0 + 1e-9


class TestBuildAspect:
    def shop_graph(self):
        rng = np.random.default_rng(1)
        ui = (rng.random((4, 5)) < 0.6).astype(float)
        ib = np.zeros((5, 2))
        ib[np.arange(5), rng.integers(0, 2, 5)] = 1.0
        return graph_from_arrays(SHOP_SCHEMA, {("U", "I"): ui, ("I", "B"): ib})

    def test_brand_aspect(self):
        g = self.shop_graph()
        a = build_aspect("brand", "UIBIU", "IBI", g)
        assert a.user_adj.shape == (4, 4)
        assert a.item_adj.shape == (5, 5)
        assert np.array_equal(a.user_adj.toarray(), a.user_adj.toarray().T)
        assert np.array_equal(a.user_feat, a.user_feat.T)
        assert np.all(a.user_feat >= 0) and np.all(a.user_feat <= 1)

    def test_history_aspect(self):
        a = build_aspect("history", "UIU", "IUI", self.shop_graph())
        assert a.user_adj.shape == (4, 4) and a.item_adj.shape == (5, 5)

    def test_wrong_endpoint(self):
        with pytest.raises(SchemaError, match="must start and end"):
            build_aspect("bad", "IUI", "IUI", self.shop_graph())

    def test_non_palindrome_rejected(self):
        with pytest.raises(SchemaError, match="reversed"):
            build_aspect("bad", "UIU", "IBIUI"[::-1], self.shop_graph())

    def test_normalize_none_keeps_raw_counts(self):
        g = self.shop_graph()
        a = build_aspect("history", "UIU", "IUI", g, normalize="none")
        raw = commuting_matrix(parse_metapath("UIU", g), g).matrix.toarray()
        assert np.array_equal(a.user_adj.toarray(), raw)
