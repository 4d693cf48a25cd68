"""
模型变体测试 - 特征投影、GCN基线、组内聚合、改进模型、节点级注意力、元路径级注意力和候选元路径模式
"""

import unittest

import networkx as nx
import numpy as np
import numpy.testing as npt
import scipy.sparse as sp

from utils.console_log import set_verbose
from utils.errors import AttentionError, HinError, SchemaError, ShapeError
from utils.hin_graph import MetaPath, augment, build_graph
from utils.hin_models import (FeatureSet, GroupedEmbedding, ModelParams, build_features,
                              candidate_metapath_state, gcn_forward, giam3_forward, giam_forward,
                              grouped_propagate, improved_forward, inter_concatenate, intra_aggregate,
                              naive_forward, normalized_adjacency, prepare_inputs, project_features)
from utils.node_attention import (attention_aggregate, attention_score, attention_weights, dropout,
                                  multi_head)
from utils.propagation import PropagationState, build_state, transition
from utils.training import embed, init_params

set_verbose(False)


def single_type_graph(n, p, seed):
    g = nx.gnp_random_graph(n, p, seed=seed)
    return build_graph([(str(i), "N") for i in range(n)], [(str(u), str(v)) for u, v in g.edges()])


def author_paper_graph():
    """a1 写了 p1 和 p2"""
    return build_graph([("a1", "A"), ("p1", "P"), ("p2", "P")], [("a1", "p1"), ("a1", "p2")])


def movie_graph():
    """m1,m2 共享导演 d1；m2,m3 共享演员 x1；m3 由 d2 执导"""
    nodes = [("m1", "M"), ("m2", "M"), ("m3", "M"), ("d1", "D"), ("d2", "D"), ("x1", "X")]
    edges = [("m1", "d1"), ("m2", "d1"), ("m3", "d2"), ("m2", "x1"), ("m3", "x1")]
    return build_graph(nodes, edges)


class TestFeatures(unittest.TestCase):
    def test_identity_projection(self):
        graph = single_type_graph(6, 0.5, 0)
        features = build_features(graph)
        params = ModelParams("giam2", {"proj/N": np.eye(6)})
        npt.assert_array_equal(project_features(features, params), np.eye(6))

    def test_heterogeneous_widths(self):
        graph = author_paper_graph()
        records = {"a1": {0: 1.0, 2: 2.0}, "p1": {4: 1.0}, "p2": {0: 3.0}}
        features = build_features(graph, records)
        self.assertEqual(features.dims, {"A": 3, "P": 5})
        rng = np.random.default_rng(0)
        params = ModelParams("giam2", {"proj/A": rng.random((3, 4)), "proj/P": rng.random((5, 4))})
        h0 = project_features(features, params)
        self.assertEqual(h0.shape, (3, 4))
        npt.assert_allclose(h0[0], params["proj/A"][0] + 2.0 * params["proj/A"][2])
        npt.assert_allclose(h0[2], 3.0 * params["proj/P"][0])

    def test_zero_features_project_to_zero(self):
        graph = author_paper_graph()
        blocks = {"A": sp.csr_matrix((1, 3)), "P": sp.csr_matrix((2, 3))}
        features = FeatureSet(graph.type_order, dict(graph.type_index), blocks)
        params = ModelParams("giam2", {"proj/A": np.ones((3, 4)), "proj/P": np.ones((3, 4))})
        npt.assert_array_equal(project_features(features, params), np.zeros((3, 4)))

    def test_shape_mismatch(self):
        graph = author_paper_graph()
        with self.assertRaises(ShapeError):
            FeatureSet(graph.type_order, dict(graph.type_index),
                       {"A": sp.csr_matrix((2, 3)), "P": sp.csr_matrix((2, 3))})
        features = build_features(graph)
        params = ModelParams("giam2", {"proj/A": np.ones((5, 2)), "proj/P": np.ones((2, 2))})
        with self.assertRaises(ShapeError):
            project_features(features, params)


class TestGcn(unittest.TestCase):
    def test_single_node_example(self):
        aug = augment(build_graph([("x", "N")], []))
        params = ModelParams("gcn", {"gcn/W0": np.eye(2), "C": np.eye(2)})
        probs = gcn_forward(aug, np.array([[1.0, 0.0]]), params)
        npt.assert_almost_equal(probs, [[0.7310586, 0.2689414]], decimal=6)

    def test_zero_weights_uniform(self):
        aug = augment(single_type_graph(8, 0.4, 1))
        params = ModelParams("gcn", {"gcn/W0": np.zeros((3, 3)), "C": np.zeros((3, 4))})
        probs = gcn_forward(aug, np.random.default_rng(0).random((8, 3)), params)
        npt.assert_allclose(probs, np.full((8, 4), 0.25))

    def test_rows_are_distributions(self):
        aug = augment(single_type_graph(10, 0.3, 2))
        rng = np.random.default_rng(5)
        params = ModelParams("gcn", {"gcn/W0": rng.normal(size=(4, 4)), "C": rng.normal(size=(4, 3))})
        probs = gcn_forward(aug, rng.normal(size=(10, 4)), params)
        npt.assert_allclose(probs.sum(axis=1), np.ones(10))
        self.assertTrue(np.all(probs > 0))


class TestIntraAggregate(unittest.TestCase):
    def test_author_paper_groups(self):
        graph = author_paper_graph()
        aug = augment(graph)
        h = np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]])
        grouped = intra_aggregate(aug, h, graph.type_index)
        self.assertEqual(grouped.labels, ("A-A", "A-P", "P-A", "P-P"))
        expected = h[1] / np.sqrt(3 * 2) + h[2] / np.sqrt(3 * 2)
        npt.assert_allclose(grouped.block("A-P")[0], expected)
        npt.assert_array_equal(grouped.block("A-P")[1:], np.zeros((2, 2)))
        npt.assert_array_equal(grouped.block("P-A")[0], np.zeros(2))
        npt.assert_array_equal(grouped.block("P-P")[0], np.zeros(2))
        npt.assert_allclose(grouped.block("A-A")[0], h[0] / 3.0)

    def test_isolated_node_only_sees_itself(self):
        graph = build_graph([("a1", "A"), ("p1", "P"), ("p2", "P")], [("p1", "p2")])
        aug = augment(graph)
        h = np.arange(6, dtype=float).reshape(3, 2)
        grouped = intra_aggregate(aug, h, graph.type_index)
        npt.assert_allclose(grouped.block("A-A")[0], h[0])
        for label in grouped.labels:
            if label != "A-A":
                npt.assert_array_equal(grouped.block(label)[0], np.zeros(2))

    def test_groups_sum_to_normalized_propagation(self):
        graph = movie_graph()
        aug = augment(graph)
        h = np.random.default_rng(1).normal(size=(graph.node_count, 3))
        grouped = intra_aggregate(aug, h, graph.type_index)
        npt.assert_allclose(grouped.total(), normalized_adjacency(aug) @ h, atol=1e-12)

    def test_single_type_is_normalized_propagation(self):
        graph = single_type_graph(9, 0.3, 3)
        aug = augment(graph)
        h = np.random.default_rng(2).normal(size=(9, 4))
        grouped = intra_aggregate(aug, h, graph.type_index)
        self.assertEqual(grouped.labels, ("N-N",))
        npt.assert_allclose(grouped.blocks[0], normalized_adjacency(aug) @ h, atol=1e-12)

    def test_inter_concatenate(self):
        grouped = GroupedEmbedding(("x", "y"), (np.ones((3, 2)), np.zeros((3, 4))))
        g = inter_concatenate(grouped)
        self.assertEqual(g.shape, (3, 6))
        self.assertEqual(grouped.widths, (2, 4))
        with self.assertRaises(ShapeError):
            inter_concatenate(GroupedEmbedding(("x", "y"), (np.ones((3, 2)), np.ones((2, 2)))))

    def test_naive_single_path_reduces_to_propagation(self):
        graph = single_type_graph(10, 0.3, 4)
        aug = augment(graph)
        h0 = np.random.default_rng(3).normal(size=(10, 4))
        params = ModelParams("giam1", {"naive/W0": np.eye(4), "naive/W1": np.eye(4)})
        norm = normalized_adjacency(aug)
        h = naive_forward(aug, h0, params, 2, type_index=graph.type_index)
        npt.assert_allclose(h, norm @ (norm @ h0), atol=1e-12)

    def test_naive_needs_type_index(self):
        graph = single_type_graph(4, 0.5, 0)
        params = ModelParams("giam1", {"naive/W0": np.eye(2)})
        with self.assertRaises(ShapeError):
            naive_forward(augment(graph), np.ones((4, 2)), params, 1)


class TestImproved(unittest.TestCase):
    def test_group_blocks_sum_to_full_propagation(self):
        graph = movie_graph()
        s = build_state(augment(graph), 3, constrained=True)
        h0 = np.random.default_rng(0).normal(size=(graph.node_count, 5))
        grouped = grouped_propagate(s, h0, graph.type_index)
        self.assertEqual(grouped.labels, graph.type_order)
        npt.assert_allclose(grouped.total(), s.matrix @ h0, atol=1e-12)

    def test_identity_propagation(self):
        graph = single_type_graph(7, 0.4, 5)
        s = PropagationState(sp.identity(7, format="csr"), 0, True)
        h0 = np.random.default_rng(1).normal(size=(7, 3))
        params = ModelParams("giam2", {"W": np.eye(3)})
        npt.assert_allclose(improved_forward(s, h0, params, graph.type_index), h0)

    def test_unconstrained_reduces_to_powered_transition(self):
        graph = single_type_graph(12, 0.3, 6)
        aug = augment(graph)
        rng = np.random.default_rng(2)
        h0 = rng.normal(size=(12, 4))
        w = rng.normal(size=(4, 3))
        for k in (1, 2, 4):
            s = build_state(aug, k, constrained=False)
            expected = np.linalg.matrix_power(transition(aug).matrix.toarray(), k) @ h0 @ w
            got = improved_forward(s, h0, ModelParams("giam2", {"W": w}), graph.type_index)
            npt.assert_allclose(got, expected, atol=1e-10)

    def test_permutation_equivariance(self):
        g = nx.gnp_random_graph(10, 0.35, seed=7)
        edges = [(str(u), str(v)) for u, v in g.edges()]
        order = np.random.default_rng(3).permutation(10)
        rows = np.random.default_rng(4).normal(size=(10, 3))
        w = np.random.default_rng(5).normal(size=(3, 2))

        def run(ids):
            graph = build_graph([(str(i), "N") for i in ids], edges)
            h0 = rows[[int(i) for i in graph.node_ids]]
            s = build_state(augment(graph), 3, constrained=True)
            out = improved_forward(s, h0, ModelParams("giam2", {"W": w}), graph.type_index)
            return {node_id: out[i] for i, node_id in enumerate(graph.node_ids)}

        plain = run(range(10))
        shuffled = run(order)
        for node_id, value in plain.items():
            npt.assert_allclose(shuffled[node_id], value, atol=1e-12)


class TestPermutationEquivariance(unittest.TestCase):
    NODES = [(f"a{i}", "A") for i in range(5)] + [(f"p{i}", "P") for i in range(5)]
    EDGES = [("a0", "p0"), ("a0", "p1"), ("a1", "p1"), ("a1", "p3"), ("a2", "p2"), ("a2", "p4"), ("a3", "p3"),
             ("a3", "p0"), ("a4", "p4"), ("a4", "p2"), ("a0", "a2"), ("p1", "p3")]

    def embed_by_id(self, variant, order, records):
        graph = build_graph([self.NODES[i] for i in order], self.EDGES)
        features = build_features(graph, records)
        candidates = []
        if variant == "giam3":
            candidates = [MetaPath.parse("A-P-A", graph), MetaPath.parse("P-A-P", graph)]
        inputs = prepare_inputs(variant, graph, features, 3, candidates=candidates)
        params = init_params(variant, inputs, 2, seed=0, hidden=4, heads=2, activation="elu")
        out = embed(variant, params, inputs)
        return {graph.node_ids[g]: out[row] for row, g in enumerate(inputs.global_nodes())}

    def test_every_variant(self):
        rng = np.random.default_rng(8)
        records = {node_id: {c: float(v) for c, v in enumerate(rng.normal(size=3))} for node_id, _ in self.NODES}
        orders = [np.arange(10), rng.permutation(10), rng.permutation(10)]
        for variant in ("gcn", "giam1", "giam2", "giam", "giam3"):
            plain = self.embed_by_id(variant, orders[0], records)
            for order in orders[1:]:
                shuffled = self.embed_by_id(variant, order, records)
                self.assertEqual(set(shuffled), set(plain))
                for node_id, value in plain.items():
                    npt.assert_allclose(shuffled[node_id], value, atol=1e-12, err_msg=f"{variant} {node_id}")


class TestNodeAttention(unittest.TestCase):
    def test_score_hand_cases(self):
        self.assertAlmostEqual(attention_score([1, 0], [0, 1], np.array([1, 0, 0, 1]), np.eye(2)), 2.0)
        self.assertEqual(attention_score([1, 0], [0, 1], np.zeros(4), np.eye(2)), 0.0)
        self.assertAlmostEqual(attention_score([1, 0], [0, 1], -np.array([1, 0, 0, 1]), np.eye(2)), -0.02)

    def test_weights(self):
        npt.assert_allclose(attention_weights([3.7]), [1.0])
        npt.assert_allclose(attention_weights([0.5] * 4), [0.25] * 4)
        npt.assert_allclose(attention_weights([0.0, np.log(3.0)]), [0.25, 0.75])
        with self.assertRaises(AttentionError):
            attention_weights([])

    def test_aggregate(self):
        projected = np.array([[2.0, 0.0], [0.0, 4.0]])
        npt.assert_allclose(attention_aggregate(np.array([0.25, 0.75]), projected), [0.5, 3.0])
        npt.assert_allclose(attention_aggregate(np.array([1.0, 0.0]), -projected, "relu"), [0.0, 0.0])

    def test_multi_head(self):
        out = multi_head([np.ones(3), np.zeros(3)])
        self.assertEqual(out.shape, (6,))
        same = np.array([1.0, 2.0])
        npt.assert_array_equal(multi_head([same, same]), [1.0, 2.0, 1.0, 2.0])
        with self.assertRaises(AttentionError):
            multi_head([])

    def test_zero_mu_matches_uniform_support(self):
        graph = movie_graph()
        s = build_state(augment(graph), 3, constrained=True)
        x = np.random.default_rng(0).normal(size=(graph.node_count, 4))
        w = np.random.default_rng(1).normal(size=(len(graph.type_order) * 4, 4))
        blocks = {"att/W0": np.eye(4), "W": w}
        for t in graph.type_order:
            blocks[f"att/mu/{t}/0"] = np.zeros(8)
        params = ModelParams("giam", blocks, heads=1)

        # 每个组内支撑集上的均匀权重
        uniform = np.zeros(s.matrix.shape)
        dense = s.matrix.toarray()
        for t in graph.type_order:
            c0, c1 = graph.type_index[t]
            support = (dense[:, c0:c1] > 0).astype(float)
            counts = support.sum(axis=1, keepdims=True)
            uniform[:, c0:c1] = np.divide(support, counts, out=np.zeros_like(support), where=counts > 0)
        expected = improved_forward(PropagationState(sp.csr_matrix(uniform), 3, True), x,
                                    ModelParams("giam2", {"W": w}), graph.type_index)
        npt.assert_allclose(giam_forward(s, x, params, graph.type_index), expected, atol=1e-12)

    def test_attention_dropout_eval_deterministic(self):
        graph = movie_graph()
        features = build_features(graph)
        inputs = prepare_inputs("giam", graph, features, 2)
        params = init_params("giam", inputs, 2, seed=3, hidden=8, heads=2)
        npt.assert_array_equal(embed("giam", params, inputs), embed("giam", params, inputs))


class TestMetaPathAttention(unittest.TestCase):
    def test_equal_logits_average(self):
        a, b = np.ones((3, 2)), np.zeros((3, 2))
        npt.assert_allclose(giam3_forward([a, b], [0.0, 0.0]), np.full((3, 2), 0.5))

    def test_large_logit_selects(self):
        a, b = np.ones((3, 2)), np.zeros((3, 2))
        npt.assert_allclose(giam3_forward([a, b], [50.0, 0.0]), a, atol=1e-12)

    def test_count_mismatch(self):
        with self.assertRaises(ShapeError):
            giam3_forward([np.ones((2, 2))], [0.0, 1.0])


class TestCandidateMode(unittest.TestCase):
    def test_shared_node_set(self):
        graph = movie_graph()
        paths = [MetaPath.parse("M-D-M", graph), MetaPath.parse("M-X-M", graph)]
        state = candidate_metapath_state(graph, paths, 2)
        npt.assert_array_equal(state.nodes, graph.nodes_of("M"))
        npt.assert_allclose(state.row_sums(), np.ones(3), atol=1e-12)

    def test_heterogeneous_endpoints(self):
        graph = movie_graph()
        state = candidate_metapath_state(graph, [MetaPath.parse("M-D", graph)], 1, constrained=False)
        expected_nodes = np.concatenate([graph.nodes_of("D"), graph.nodes_of("M")])
        npt.assert_array_equal(state.nodes, expected_nodes)
        self.assertEqual(state.matrix.shape, (5, 5))

    def test_empty_union(self):
        graph = build_graph([("m1", "M"), ("m2", "M"), ("d1", "D"), ("d2", "D")],
                            [("m1", "d1"), ("m2", "d2")])
        with self.assertRaises(SchemaError):
            candidate_metapath_state(graph, [MetaPath.parse("M-D-M", graph)], 2)
        with self.assertRaises(SchemaError):
            candidate_metapath_state(graph, [], 2)

    def test_prepare_inputs_per_variant(self):
        graph = movie_graph()
        features = build_features(graph)
        paths = [MetaPath.parse("M-D-M", graph), MetaPath.parse("M-X-M", graph)]
        self.assertIsNotNone(prepare_inputs("gcn", graph, features, 2).aug)
        full = prepare_inputs("giam2", graph, features, 2)
        self.assertEqual(full.row_count, graph.node_count)
        derived = prepare_inputs("giam", graph, features, 2, candidates=paths)
        self.assertEqual(derived.row_count, 3)
        diag = prepare_inputs("giam3", graph, features, 2, candidates=paths)
        self.assertEqual(len(diag.metapath_states), 2)
        self.assertEqual(diag.metapath_labels, ("M-D-M", "M-X-M"))
        with self.assertRaises(HinError):
            prepare_inputs("giam3", graph, features, 2)
        with self.assertRaises(HinError):
            prepare_inputs("nope", graph, features, 2)


class TestDropoutHelper(unittest.TestCase):
    def test_rate_zero_identity(self):
        x = np.random.default_rng(0).normal(size=(5, 5))
        npt.assert_array_equal(dropout(x, 0.0, np.random.default_rng(1)), x)

    def test_invalid_rate(self):
        with self.assertRaises(ValueError):
            dropout(np.ones(3), 1.0, np.random.default_rng(0))


if __name__ == "__main__":
    unittest.main()
