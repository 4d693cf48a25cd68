"""
流水线 - 读入/合成 -> 传播 -> 训练 -> 导出嵌入 -> 评估，每个阶段写出各自的文件，
结束时写清单（配置哈希、种子、阶段耗时和输出文件校验和）
"""

import os
import time
from contextlib import contextmanager
from typing import Dict, List, Optional, Sequence

import numpy as np

from utils.console_log import log_info, log_ok, set_verbose
from utils.errors import HinError, StageError
from utils.evaluation import evaluate_embeddings
from utils.hin_graph import HinGraph, MetaPath, augment, build_graph
from utils.hin_models import (ModelInputs, ModelParams, build_features, candidate_metapath_state,
                               prepare_inputs)
from utils.propagation import build_state, markov_spectrum, transition
from utils.run_config import RunConfig
from utils.synthetic import NewmanSpec, PlantedPowerLawSpec, newman_graph, planted_powerlaw_graph, \
    propagation_report
from utils.text_formats import (file_checksum, load_checkpoint, read_edge_table, read_embeddings,
                                read_feature_table, read_labels, read_node_table, text_checksum,
                                write_checkpoint, write_coo, write_dense_grid, write_embeddings,
                                write_graph, write_history, write_labels, write_manifest, write_report,
                                write_spectrum, write_table)
from utils.training import LabeledSplit, TrainHistory, embed, make_split, train

PARTIAL_MARKER = ".partial"
MANIFEST_NAME = "manifest.json"


class GiamPipeline:
    """按配置串起各阶段的处理器"""

    def __init__(self, config: RunConfig):
        """
        参数:
            config: 已校验的运行配置
        """
        self.config = config
        self.output_dir = config.output
        os.makedirs(self.output_dir, exist_ok=True)
        set_verbose(config.verbose)

        self.graph: Optional[HinGraph] = None
        self.label_map: Dict[str, str] = {}
        self.feature_records: Dict[str, Dict[int, float]] = {}
        self.inputs: Optional[ModelInputs] = None
        self.split: Optional[LabeledSplit] = None
        self.history: Optional[TrainHistory] = None
        self.params: Optional[ModelParams] = None
        self.embeddings: Optional[np.ndarray] = None
        self.embedding_ids: List[str] = []

        self.timings: Dict[str, float] = {}
        self.outputs: Dict[str, str] = {}

    # ==================== 阶段管理 ====================

    def path(self, name: str) -> str:
        return os.path.join(self.output_dir, name)

    def _record(self, name: str) -> str:
        path = self.path(name)
        self.outputs[name] = path
        return path

    @contextmanager
    def stage(self, name: str):
        """计时；任何异常都包装成带阶段名的 StageError"""
        log_info(f"▶️ 阶段 {name}")
        started = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except Exception as exc:
            raise StageError(name, exc) from exc
        self.timings[name] = round(time.perf_counter() - started, 6)

    def _mark_partial(self):
        with open(self.path(PARTIAL_MARKER), "w", encoding="utf-8") as f:
            f.write(f"started {time.strftime('%Y-%m-%d %H:%M:%S')}\n")

    def _clear_partial(self):
        marker = self.path(PARTIAL_MARKER)
        if os.path.exists(marker):
            os.remove(marker)

    # ==================== 各阶段 ====================

    def ingest(self) -> HinGraph:
        """读入数据表，或按配置生成合成图"""
        with self.stage("ingest"):
            cfg = self.config
            if cfg.synthetic != "none":
                self._synthesize()
            else:
                self.graph = build_graph(read_node_table(cfg.nodes), read_edge_table(cfg.edges))
                if cfg.labels:
                    self.label_map = read_labels(cfg.labels)
                if cfg.features:
                    self.feature_records = read_feature_table(cfg.features)
        return self.graph

    def _synthesize(self):
        cfg = self.config
        if cfg.synthetic == "newman":
            graph, groups = newman_graph(NewmanSpec(seed=cfg.seed))
        else:
            graph, groups = planted_powerlaw_graph(PlantedPowerLawSpec(seed=cfg.seed))
        self.graph = graph
        self.label_map = {graph.node_ids[i]: str(g) for i, g in enumerate(groups)}

    def synthesize(self):
        """synth 子命令：写出合成图和真实标签"""
        with self.stage("synth"):
            self._synthesize()
            write_graph(self.graph, self._record("nodes.tsv"), self._record("edges.tsv"))
            write_labels(self._record("labels.tsv"), self.graph.node_ids,
                         [self.label_map[i] for i in self.graph.node_ids])
        log_ok(f"合成图已写出: {self.output_dir}")

    def metapaths(self) -> List[MetaPath]:
        return [MetaPath.parse(text, self.graph) for text in self.config.metapaths]

    def prepare(self) -> ModelInputs:
        """按变体预计算传播矩阵/邻接"""
        with self.stage("propagate"):
            cfg = self.config
            features = build_features(self.graph, self.feature_records)
            self.inputs = prepare_inputs(cfg.variant, self.graph, features, cfg.k, cfg.constrained,
                                         self.metapaths())
            self.split = self._make_split()
        return self.inputs

    def _row_labels(self):
        nodes = self.inputs.global_nodes()
        names = sorted(set(self.label_map.values()))
        index = {name: i for i, name in enumerate(names)}
        labels = np.full(len(nodes), -1, dtype=np.int64)
        for row, node in enumerate(nodes):
            node_id = self.graph.node_ids[node]
            if node_id in self.label_map and self._is_target(node):
                labels[row] = index[self.label_map[node_id]]
        return labels, names

    def _is_target(self, node: int) -> bool:
        return not self.config.target_type or self.graph.type_of(node) == self.config.target_type

    def _make_split(self) -> LabeledSplit:
        labels, names = self._row_labels()
        if not np.any(labels >= 0):
            raise HinError("没有任何带标签的目标节点")
        return make_split(labels, len(names), self.config.train_split, self.config.val_split,
                          self.config.seed, class_names=names)

    def propagate(self, dense: bool = False):
        """propagate 子命令：写出 S^(k)（或 Z^(k)）"""
        with self.stage("propagate"):
            cfg = self.config
            paths = self.metapaths()
            if paths:
                state = candidate_metapath_state(self.graph, paths, cfg.k, cfg.constrained)
            else:
                state = build_state(augment(self.graph), cfg.k, cfg.constrained)
            write_coo(self._record("propagation.tsv"), state.matrix)
            if dense:
                write_dense_grid(self._record("propagation_grid.csv"), state.matrix)
        return state

    def spectrum(self, c_max: Optional[int] = None):
        """spectrum 子命令：马尔可夫生成元的小特征值与混合窗口"""
        with self.stage("spectrum"):
            aug = augment(self.graph)
            c_max = min(c_max or 10, self.graph.node_count)
            result = markov_spectrum(transition(aug), aug, c_max)
            write_spectrum(self._record("spectrum.tsv"), result)
        return result

    def train(self) -> TrainHistory:
        with self.stage("train"):
            cfg = self.config
            self.history = train(cfg.variant, self.inputs, self.split, cfg.train_config(), hidden=cfg.hidden,
                                 heads=cfg.heads, layers=cfg.layers, activation=cfg.activation)
            self.params = self.history.params
            write_history(self._record("history.csv"), self.history)
            write_checkpoint(self._record("checkpoint.txt"), self.params)
        return self.history

    def load_params(self, checkpoint: str):
        self.params = load_checkpoint(checkpoint)
        if self.params.variant and self.params.variant != self.config.variant:
            raise HinError(f"检查点变体 {self.params.variant} 与配置 {self.config.variant} 不一致")

    def embed(self) -> np.ndarray:
        """评估模式嵌入，只导出目标类型的行"""
        with self.stage("embed"):
            h = embed(self.config.variant, self.params, self.inputs)
            nodes = self.inputs.global_nodes()
            keep = [row for row, node in enumerate(nodes) if self._is_target(node)]
            self.embeddings = h[keep]
            self.embedding_ids = [self.graph.node_ids[nodes[row]] for row in keep]
            write_embeddings(self._record("embeddings.tsv"), self.embedding_ids, self.embeddings,
                             self.config.variant, self.config.k)
        return self.embeddings

    def evaluate(self, embeddings: Optional[np.ndarray] = None, ids: Optional[Sequence[str]] = None):
        """在有标签的嵌入上做探针分类和聚类"""
        with self.stage("evaluate"):
            embeddings = self.embeddings if embeddings is None else embeddings
            ids = self.embedding_ids if ids is None else list(ids)
            rows = [i for i, node_id in enumerate(ids) if node_id in self.label_map]
            if not rows:
                raise HinError("嵌入中没有带标签的节点")
            names = sorted(set(self.label_map[ids[i]] for i in rows))
            y = np.array([names.index(self.label_map[ids[i]]) for i in rows])
            cfg = self.config
            report = evaluate_embeddings(embeddings[rows], y, ratios=cfg.eval_ratios, repeats=cfg.eval_repeats,
                                         restarts=cfg.kmeans_restarts, seed=cfg.seed, n_jobs=cfg.n_jobs)
            write_report(self._record("report.csv"), report)
        return report

    def evaluate_files(self, embeddings_path: str, labels_path: str):
        """evaluate 子命令：直接读嵌入文件和标签文件"""
        with self.stage("ingest"):
            _, ids, embeddings = read_embeddings(embeddings_path)
            self.label_map = read_labels(labels_path)
        return self.evaluate(embeddings, ids)

    def report(self, k_list: Sequence[int], grids: bool = False):
        """report 子命令：合成图上两种游走的诊断表"""
        with self.stage("report"):
            if self.graph is None:
                self._synthesize()
            missing = [i for i in self.graph.node_ids if i not in self.label_map]
            if missing:
                raise HinError(f"诊断表需要每个节点的真实标签，缺少 {len(missing)} 个"
                               f"（如 {missing[0]}），请提供 labels")
            names = sorted(set(self.label_map.values()))
            groups = np.array([names.index(self.label_map[i]) for i in self.graph.node_ids])
            result = propagation_report(self.graph, groups, k_list, seed=self.config.seed,
                                        restarts=self.config.kmeans_restarts, keep_grids=grids)
            table, matrices = result if grids else (result, {})
            write_table(self._record("propagation_report.csv"), table)
            for (k, walk), matrix in matrices.items():
                write_dense_grid(self._record(f"grid_{walk}_k{k}.csv"), matrix)
        return table

    # ==================== 完整流程 ====================

    def write_manifest(self) -> Dict:
        manifest = {
            "config_sha256": text_checksum(self.config.to_text()),
            "seed": self.config.seed,
            "variant": self.config.variant,
            "timings": self.timings,
            "outputs": {name: file_checksum(path) for name, path in sorted(self.outputs.items())},
        }
        write_manifest(self.path(MANIFEST_NAME), manifest)
        return manifest

    def run(self) -> Dict:
        """
        完整流程：ingest -> propagate -> train -> embed -> evaluate

        返回:
            清单字典；失败时 .partial 标记和已写出的文件保留
        """
        self._mark_partial()
        self.ingest()
        self.prepare()
        self.train()
        self.embed()
        self.evaluate()
        manifest = self.write_manifest()
        self._clear_partial()
        log_ok(f"流水线完成，清单: {self.path(MANIFEST_NAME)}")
        return manifest
