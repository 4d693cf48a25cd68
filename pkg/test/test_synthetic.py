"""
合成基准测试 - Newman四社区图、幂律植入划分图和传播诊断表
"""

import unittest

import numpy as np
import numpy.testing as npt

from utils.console_log import set_verbose
from utils.errors import SynthesisError
from utils.hin_graph import augment
from utils.propagation import markov_spectrum, transition
from utils.synthetic import (NewmanSpec, PlantedPowerLawSpec, _rewire, hub_node, newman_graph, newman_window_check,
                             planted_powerlaw_graph, propagation_report)

set_verbose(False)


def intra_cross_degree(graph, groups):
    same = groups[graph.edges[:, 0]] == groups[graph.edges[:, 1]]
    return 2.0 * same.sum() / graph.node_count, 2.0 * (~same).sum() / graph.node_count


class TestNewman(unittest.TestCase):
    def test_defaults(self):
        graph, groups = newman_graph(NewmanSpec(seed=0))
        self.assertEqual(graph.node_count, 128)
        npt.assert_array_equal(np.bincount(groups), [32] * 4)
        intra, cross = intra_cross_degree(graph, groups)
        self.assertLessEqual(abs(intra - 14.0), 1.5)
        self.assertLess(abs(cross - 2.0), 1.0)

    def test_deterministic(self):
        a, _ = newman_graph(NewmanSpec(seed=3))
        b, _ = newman_graph(NewmanSpec(seed=3))
        npt.assert_array_equal(a.edges, b.edges)

    def test_no_cross_edges_gives_four_zero_eigenvalues(self):
        graph, _ = newman_graph(NewmanSpec(z_out=0.0, seed=1))
        aug = augment(graph)
        lam = markov_spectrum(transition(aug), aug, 5).eigenvalues
        npt.assert_allclose(lam[:4], np.zeros(4), atol=1e-8)
        self.assertGreater(lam[4], 1e-3)

    def test_window_for_four_groups(self):
        windows = [newman_window_check(NewmanSpec(seed=seed)) for seed in range(20)]
        enters = [t_enter for t_enter, _ in windows]
        exits = [t_exit for _, t_exit in windows]
        self.assertGreaterEqual(enters.count(2), 16)
        # 1/λ_4 在 P = D̃⁻¹Ã 下落在 6 与 7 的舍入边界附近
        self.assertTrue(set(exits) <= {6, 7}, exits)
        self.assertGreaterEqual(exits.count(6), 5)

    def test_invalid_spec(self):
        with self.assertRaises(SynthesisError):
            NewmanSpec(n=130, groups=4)
        with self.assertRaises(SynthesisError):
            NewmanSpec(z_in=120.0, z_out=10.0)


class TestPlantedPowerLaw(unittest.TestCase):
    def test_zero_mixing_has_no_cross_edges(self):
        graph, groups = planted_powerlaw_graph(PlantedPowerLawSpec(n=400, mu=0.0, seed=2))
        _, cross = intra_cross_degree(graph, groups)
        self.assertEqual(cross, 0.0)

    def test_community_sizes(self):
        largest = []
        for seed in range(20):
            _, groups = planted_powerlaw_graph(PlantedPowerLawSpec(seed=seed))
            sizes = np.bincount(groups)
            self.assertEqual(sizes.sum(), 1000)
            self.assertGreaterEqual(sizes.min(), 20)
            largest.append(sizes.max())
        self.assertTrue(80 <= np.median(largest) <= 120)

    def test_degree_range_and_mixing(self):
        graph, groups = planted_powerlaw_graph(PlantedPowerLawSpec(seed=5))
        degrees = np.asarray(graph.adjacency.sum(axis=1)).ravel()
        self.assertLessEqual(degrees.max(), 50 + 2)
        self.assertGreater(np.median(degrees), 8 - 2)
        intra, cross = intra_cross_degree(graph, groups)
        self.assertAlmostEqual(cross / (intra + cross), 0.1, delta=0.04)

    def test_every_default_seed_generates(self):
        spec_min = PlantedPowerLawSpec().min_degree
        for seed in range(30):
            graph, groups = planted_powerlaw_graph(PlantedPowerLawSpec(seed=seed))
            self.assertEqual(graph.node_count, 1000)
            degrees = np.asarray(graph.adjacency.sum(axis=1)).ravel()
            self.assertGreaterEqual(np.percentile(degrees, 5), spec_min - 1, seed)
            intra, cross = intra_cross_degree(graph, groups)
            self.assertAlmostEqual(cross / (intra + cross), 0.1, delta=0.04, msg=seed)

    def test_rewiring_keeps_degrees(self):
        pairs = [(0, 0), (1, 2), (1, 2), (3, 4), (5, 6), (7, 8), (2, 5), (3, 8), (4, 9), (6, 9), (0, 7), (1, 1)]
        before = np.bincount(np.array(pairs).ravel(), minlength=10)
        edges, lost = _rewire(np.random.default_rng(0), pairs, lambda u, v: True)
        self.assertEqual(lost, 0)
        self.assertTrue(all(u != v for u, v in edges))
        self.assertEqual(len(set(edges)), len(edges))
        npt.assert_array_equal(np.bincount(np.array(edges).ravel(), minlength=10), before)

    def test_rewiring_respects_allowed_pairs(self):
        groups = np.repeat([0, 1], 5)
        pairs = [(0, 1), (0, 5), (2, 7), (3, 3), (4, 9), (6, 8), (1, 6), (2, 8)]
        edges, lost = _rewire(np.random.default_rng(1), pairs, lambda u, v: groups[u] != groups[v])
        self.assertTrue(all(groups[u] != groups[v] for u, v in edges))
        self.assertEqual(2 * len(edges) + lost, 2 * len(pairs))

    def test_invalid_spec(self):
        with self.assertRaises(SynthesisError):
            PlantedPowerLawSpec(mu=1.0)
        with self.assertRaises(SynthesisError):
            PlantedPowerLawSpec(degree_exponent=1.0)


class TestPropagationReport(unittest.TestCase):
    def test_k0_rows_are_indicators(self):
        graph, groups = newman_graph(NewmanSpec(seed=0))
        table = propagation_report(graph, groups, [0], restarts=2)
        self.assertEqual(set(table["walk"]), {"unconstrained", "constrained"})
        npt.assert_allclose(table["zero_fraction"], 127.0 / 128.0)
        npt.assert_allclose(table["hub_within_mass"], 1.0)

    def test_grids_returned(self):
        graph, groups = newman_graph(NewmanSpec(seed=2))
        table, grids = propagation_report(graph, groups, [0, 1], restarts=1, keep_grids=True)
        self.assertEqual(set(grids), {(0, "unconstrained"), (0, "constrained"),
                                      (1, "unconstrained"), (1, "constrained")})
        self.assertEqual(len(table), 4)


class TestNewmanSeparation(unittest.TestCase):
    """20 个 Newman 种子上两种游走的行聚类和组内质量"""

    @classmethod
    def setUpClass(cls):
        cls.tables = []
        for seed in range(20):
            graph, groups = newman_graph(NewmanSpec(seed=seed))
            cls.tables.append(propagation_report(graph, groups, range(2, 11), seed=seed, restarts=5))

    def value(self, table, k, walk, column):
        return float(table[(table["k"] == k) & (table["walk"] == walk)][column].iloc[0])

    def test_constrained_rows_recover_groups(self):
        for k in (2, 6, 10):
            scores = [self.value(t, k, "constrained", "row_nmi") for t in self.tables]
            self.assertGreaterEqual(np.median(scores), 0.95, k)

    def test_constrained_beats_unconstrained_at_ten_steps(self):
        wins = sum(1 for t in self.tables
                   if self.value(t, 10, "constrained", "row_nmi") + 1e-12
                   >= self.value(t, 10, "unconstrained", "row_nmi"))
        self.assertGreaterEqual(wins, 18)

    def test_constrained_keeps_more_mass_inside(self):
        for k in range(2, 11):
            gaps = [self.value(t, k, "constrained", "mean_within_mass")
                    - self.value(t, k, "unconstrained", "mean_within_mass") for t in self.tables]
            self.assertGreaterEqual(np.median(gaps), -1e-12, k)


class TestPowerLawSparsity(unittest.TestCase):
    def test_hub_row_at_ten_steps(self):
        constrained, unconstrained, within = [], [], []
        for seed in range(10):
            graph, groups = planted_powerlaw_graph(PlantedPowerLawSpec(seed=seed))
            rows = propagation_report(graph, groups, [10], seed=seed, restarts=1).set_index("walk")
            self.assertEqual(rows.loc["constrained", "hub"], hub_node(graph, groups))
            constrained.append(rows.loc["constrained", "zero_fraction"])
            unconstrained.append(rows.loc["unconstrained", "zero_fraction"])
            within.append(rows.loc["constrained", "hub_within_mass"])
        self.assertGreaterEqual(np.median(constrained), 0.6)
        self.assertLessEqual(np.median(unconstrained), 0.05)
        # 组内质量大于组外质量（行和为1）
        self.assertGreater(np.median(within), 0.5)


if __name__ == "__main__":
    unittest.main()
