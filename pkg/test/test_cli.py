"""
命令行与文件格式测试 - 配置解析、各文本格式读写、流水线清单和子命令退出码
"""

import os
import tempfile
import unittest
from unittest import mock

import numpy as np
import numpy.testing as npt
import scipy.sparse as sp
from click.testing import CliRunner

from main import cli
from pipeline import PARTIAL_MARKER, GiamPipeline
from utils.console_log import set_verbose
from utils.errors import ConfigError, HinError, StageError
from utils.evaluation import EvalReport
from utils.hin_graph import build_graph
from utils.hin_models import ModelParams
from utils.propagation import SpectrumResult
from utils.run_config import RunConfigLoader, parse_config
from utils.text_formats import (load_checkpoint, read_coo, read_dense_grid, read_edge_table, read_embeddings,
                                read_feature_table, read_history, read_labels, read_manifest, read_node_table,
                                read_report, read_spectrum, write_checkpoint, write_coo, write_dense_grid,
                                write_embeddings, write_graph, write_history, write_labels, write_manifest,
                                write_report, write_spectrum)
from utils.training import TrainHistory

set_verbose(False)


class TempDirCase(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = self._tmp.name

    def tearDown(self):
        self._tmp.cleanup()

    def path(self, name):
        return os.path.join(self.tmp, name)

    def write(self, name, text):
        with open(self.path(name), "w", encoding="utf-8") as f:
            f.write(text)
        return self.path(name)


class TestParseConfig(TempDirCase):
    def test_empty_file_gives_defaults(self):
        config = parse_config(self.write("empty.conf", ""), check_paths=False)
        self.assertEqual((config.k, config.hidden, config.heads), (10, 64, 8))
        self.assertEqual((config.learning_rate, config.dropout, config.patience), (0.005, 0.5, 50))
        self.assertEqual(config.variant, "giam")

    def test_values_and_comments(self):
        text = "# 注释行\nheads = 8\nhidden = 32   # 行尾注释\nconstrained = false\nmetapaths = M-D-M, M-A-M\n"
        config = parse_config(self.write("a.conf", text), check_paths=False)
        self.assertEqual(config.heads, 8)
        self.assertEqual(config.hidden, 32)
        self.assertFalse(config.constrained)
        self.assertEqual(config.metapaths, ["M-D-M", "M-A-M"])

    def test_giam3_requires_metapaths(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config(self.write("b.conf", "variant = giam3\n"), check_paths=False)
        self.assertEqual(ctx.exception.key, "metapaths")

    def test_unknown_key_names_line(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config(self.write("c.conf", "k = 3\nlearning_speed = 2\n"), check_paths=False)
        self.assertEqual((ctx.exception.key, ctx.exception.line), ("learning_speed", 2))

    def test_type_mismatch(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config(self.write("d.conf", "k = ten\n"), check_paths=False)
        self.assertEqual((ctx.exception.key, ctx.exception.line), ("k", 1))

    def test_flags_override_file(self):
        config = parse_config(self.write("e.conf", "k = 3\nseed = 1\n"), {"k": 5, "seed": None},
                              check_paths=False)
        self.assertEqual((config.k, config.seed), (5, 1))

    def test_missing_data_files(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config(self.write("f.conf", ""))
        self.assertEqual(ctx.exception.key, "nodes")
        with self.assertRaises(ConfigError):
            parse_config(None, {"nodes": self.write("n.tsv", "a\tN\n"), "edges": self.path("missing.tsv")})

    def test_range_checks(self):
        for text in ("dropout = 1.0\n", "variant = gat\n", "eval_ratios = 0.5, 1.5\n", "k = 0\n"):
            with self.assertRaises(ConfigError):
                parse_config(self.write("g.conf", text), check_paths=False)

    def test_output_root_from_environment(self):
        with mock.patch.dict(os.environ, {"GIAM_OUTPUT_ROOT": self.tmp}):
            self.assertEqual(parse_config(None, check_paths=False).output, self.tmp)

    def test_bundled_example(self):
        root = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
        config = parse_config(os.path.join(root, "giam.conf"), check_paths=False)
        self.assertEqual((config.variant, config.synthetic, config.heads), ("giam", "newman", 8))

    def test_save_and_reload(self):
        config = parse_config(self.write("h.conf", "variant = giam3\nmetapaths = A-P-A\nk = 4\n"),
                              check_paths=False)
        loader = RunConfigLoader()
        loader.save_config(config, self.path("saved.conf"))
        self.assertEqual(parse_config(self.path("saved.conf"), check_paths=False), config)


class TestTextFormats(TempDirCase):
    def test_graph_tables(self):
        graph = build_graph([("m1", "M", "Alien"), ("d1", "D")], [("m1", "d1")])
        write_graph(graph, self.path("nodes.tsv"), self.path("edges.tsv"))
        again = build_graph(read_node_table(self.path("nodes.tsv")), read_edge_table(self.path("edges.tsv")))
        self.assertEqual(again.node_ids, graph.node_ids)
        self.assertEqual(again.edge_types, graph.edge_types)
        self.assertEqual(again.node_labels, graph.node_labels)

    def test_feature_table(self):
        path = self.write("features.tsv", "m1\t0:1.5 3:2\nd1\t\n")
        records = read_feature_table(path)
        self.assertEqual(records, {"m1": {0: 1.5, 3: 2.0}, "d1": {}})

    def test_labels(self):
        write_labels(self.path("labels.tsv"), ["a", "b"], [0, "x"])
        self.assertEqual(read_labels(self.path("labels.tsv")), {"a": "0", "b": "x"})

    def test_embeddings(self):
        x = np.random.default_rng(0).normal(size=(3, 4))
        write_embeddings(self.path("emb.tsv"), ["a", "b", "c"], x, "giam", 10)
        header, ids, back = read_embeddings(self.path("emb.tsv"))
        self.assertEqual(header, {"variant": "giam", "k": "10"})
        self.assertEqual(ids, ["a", "b", "c"])
        npt.assert_array_equal(back, x)

    def test_coo(self):
        m = sp.random(6, 5, density=0.4, format="csr", random_state=1)
        write_coo(self.path("m.tsv"), m)
        npt.assert_array_equal(read_coo(self.path("m.tsv")).toarray(), m.toarray())
        write_coo(self.path("empty.tsv"), sp.csr_matrix((3, 3)))
        back = read_coo(self.path("empty.tsv"))
        self.assertEqual((back.shape, back.nnz), ((3, 3), 0))

    def test_dense_grid(self):
        m = np.random.default_rng(2).random((4, 4))
        write_dense_grid(self.path("grid.csv"), sp.csr_matrix(m))
        npt.assert_array_equal(read_dense_grid(self.path("grid.csv")), m)

    def test_spectrum(self):
        write_spectrum(self.path("spec.tsv"), SpectrumResult(np.array([0.0, 0.0, 0.5, 1.0]), 4))
        frame = read_spectrum(self.path("spec.tsv"))
        self.assertEqual(list(frame.columns), ["c", "lambda", "t_enter", "t_exit"])
        self.assertEqual(frame.loc[1, "t_exit"], "unbounded")
        self.assertEqual(frame.loc[1, "t_enter"], "2")
        self.assertEqual(frame.loc[3, "t_enter"], "")

    def test_history(self):
        history = TrainHistory(train_loss=[1.0, 0.5], val_loss=[1.1, 0.7], val_acc=[0.5, 0.75])
        write_history(self.path("history.csv"), history)
        frame = read_history(self.path("history.csv"))
        self.assertEqual(list(frame.columns), ["epoch", "train_loss", "val_loss", "val_acc"])
        npt.assert_array_equal(frame["val_loss"], [1.1, 0.7])

    def test_checkpoint(self):
        rng = np.random.default_rng(3)
        params = ModelParams("giam", {"proj/A": rng.normal(size=(3, 2)), "att/mu/A/0": rng.normal(size=4),
                                      "C": rng.normal(size=(2, 3))}, heads=1, activation="elu")
        write_checkpoint(self.path("ckpt.txt"), params)
        back = load_checkpoint(self.path("ckpt.txt"))
        self.assertEqual((back.variant, back.heads, back.activation), ("giam", 1, "elu"))
        self.assertEqual(back.names(), params.names())
        for name in params.names():
            npt.assert_array_equal(back[name], params[name])

    def test_report(self):
        report = EvalReport(macro_f1={0.2: (0.5, 0.1)}, micro_f1={0.2: (0.6, 0.05)}, nmi=(0.7, 0.0),
                            ari=(0.4, 0.01), repeats=2)
        write_report(self.path("report.csv"), report)
        frame = read_report(self.path("report.csv"))
        self.assertEqual(list(frame["metric"]), ["macro_f1", "micro_f1", "nmi", "ari"])
        self.assertAlmostEqual(frame.loc[2, "mean"], 0.7)

    def test_manifest(self):
        write_manifest(self.path("manifest.json"), {"seed": 3, "outputs": {"a": "00"}})
        self.assertEqual(read_manifest(self.path("manifest.json")), {"seed": 3, "outputs": {"a": "00"}})


class TestPipeline(TempDirCase):
    def build_config(self, **extra):
        overrides = {"synthetic": "newman", "variant": "giam2", "k": 4, "hidden": 16, "max_epochs": 30,
                     "eval_ratios": [0.5], "eval_repeats": 2, "kmeans_restarts": 2, "output": self.tmp,
                     "verbose": False}
        overrides.update(extra)
        return parse_config(None, overrides, check_paths=False)

    def test_newman_end_to_end(self):
        manifest = GiamPipeline(self.build_config()).run()
        for name in ("embeddings.tsv", "report.csv", "history.csv", "checkpoint.txt", "manifest.json"):
            self.assertTrue(os.path.exists(self.path(name)), name)
        self.assertFalse(os.path.exists(self.path(PARTIAL_MARKER)))
        self.assertEqual(set(manifest["timings"]), {"ingest", "propagate", "train", "embed", "evaluate"})
        _, ids, embeddings = read_embeddings(self.path("embeddings.tsv"))
        self.assertEqual(embeddings.shape, (128, 16))

        again = GiamPipeline(self.build_config()).run()
        self.assertEqual(again["outputs"], manifest["outputs"])
        self.assertEqual(again["config_sha256"], manifest["config_sha256"])

    def test_missing_edge_file(self):
        nodes = self.write("nodes.tsv", "a\tN\nb\tN\n")
        config = parse_config(None, {"nodes": nodes, "edges": self.path("missing.tsv"), "output": self.tmp,
                                     "verbose": False}, check_paths=False)
        with self.assertRaises(StageError) as ctx:
            GiamPipeline(config).run()
        self.assertEqual(ctx.exception.stage, "ingest")
        self.assertTrue(os.path.exists(self.path(PARTIAL_MARKER)))

    def test_any_exception_carries_stage_name(self):
        pipeline = GiamPipeline(self.build_config())
        with self.assertRaises(StageError) as ctx:
            with pipeline.stage("train"):
                raise KeyError("W")
        self.assertEqual(ctx.exception.stage, "train")
        self.assertIsInstance(ctx.exception.cause, KeyError)

    def test_report_needs_labels_for_every_node(self):
        nodes = self.write("nodes.tsv", "a\tN\nb\tN\nc\tN\n")
        edges = self.write("edges.tsv", "a\tb\nb\tc\n")
        config = parse_config(None, {"nodes": nodes, "edges": edges, "output": self.tmp, "verbose": False})
        pipeline = GiamPipeline(config)
        pipeline.ingest()
        with self.assertRaises(StageError) as ctx:
            pipeline.report([0, 2])
        self.assertEqual(ctx.exception.stage, "report")
        self.assertIsInstance(ctx.exception.cause, HinError)


class TestCommands(TempDirCase):
    def setUp(self):
        super().setUp()
        self.runner = CliRunner()

    def invoke(self, *args):
        return self.runner.invoke(cli, list(args) + ["--output", self.tmp, "--quiet"])

    def test_synth_then_ingest_and_spectrum(self):
        result = self.invoke("synth", "--kind", "newman", "--seed", "2")
        self.assertEqual(result.exit_code, 0, result.output)
        nodes, edges = self.path("nodes.tsv"), self.path("edges.tsv")
        self.assertTrue(os.path.exists(self.path("labels.tsv")))

        result = self.invoke("ingest", "--nodes", nodes, "--edges", edges)
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertIn("nodes\t128", result.stdout)

        result = self.invoke("spectrum", "--nodes", nodes, "--edges", edges, "--c-max", "6")
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertTrue(result.stdout.startswith("c\tlambda\tt_enter\tt_exit"))
        self.assertEqual(len(result.stdout.strip().splitlines()), 7)

    def test_propagate_writes_matrix(self):
        self.invoke("synth", "--kind", "newman")
        result = self.invoke("propagate", "--nodes", self.path("nodes.tsv"), "--edges", self.path("edges.tsv"),
                             "-k", "3", "--dense")
        self.assertEqual(result.exit_code, 0, result.output)
        matrix = read_coo(self.path("propagation.tsv"))
        npt.assert_allclose(matrix.sum(axis=1).A.ravel(), np.ones(128), atol=1e-9)
        self.assertTrue(os.path.exists(self.path("propagation_grid.csv")))

    def test_report_command(self):
        result = self.invoke("report", "--kind", "newman", "--k-list", "0,2")
        self.assertEqual(result.exit_code, 0, result.output)
        self.assertTrue(os.path.exists(self.path("propagation_report.csv")))
        self.assertIn("zero_fraction", result.stdout)

    def test_missing_edge_file_exit_code(self):
        nodes = self.write("nodes.tsv", "a\tN\n")
        result = self.invoke("run", "--nodes", nodes, "--edges", self.path("missing.tsv"))
        self.assertNotEqual(result.exit_code, 0)

    def test_report_without_labels_exit_code(self):
        nodes = self.write("nodes.tsv", "a\tN\nb\tN\n")
        edges = self.write("edges.tsv", "a\tb\n")
        result = self.invoke("report", "--nodes", nodes, "--edges", edges, "--k-list", "0,2")
        self.assertEqual(result.exit_code, 1)
        self.assertIsInstance(result.exception, SystemExit)

    def test_evaluate_requires_labels(self):
        write_embeddings(self.path("emb.tsv"), ["a", "b"], np.eye(2), "giam", 10)
        result = self.invoke("evaluate", "--embeddings", self.path("emb.tsv"))
        self.assertEqual(result.exit_code, 1)


if __name__ == "__main__":
    unittest.main()
