"""
异构信息网络核心 - 带类型的图、自环增广、元路径邻接和稀疏矩阵乘法
"""

from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .console_log import log_info, log_warn
from .errors import IngestError, SchemaError, ShapeError

# SparseRowMatrix 即 scipy 的 CSR 矩阵（行内列号递增、无显式零）
SparseRowMatrix = sp.csr_matrix


def _compact(matrix) -> sp.csr_matrix:
    """转为CSR、去掉显式零并排序列号"""
    out = sp.csr_matrix(matrix, dtype=np.float64)
    out.eliminate_zeros()
    out.sort_indices()
    return out


@dataclass(frozen=True)
class HinGraph:
    """
    异构信息网络（规范化排序后的只读结构）

    节点按类型标签排序，同类型内保持输入顺序，因此每种类型的节点下标连续。
    """
    node_count: int
    node_types: np.ndarray                      # 每个节点的类型标签（规范顺序）
    type_order: Tuple[str, ...]                 # 类型的规范顺序
    type_index: Dict[str, Tuple[int, int]]      # 类型 -> [start, stop)
    edges: np.ndarray                           # (m, 2) 规范下标，u < v
    edge_types: Tuple[str, ...]                 # 与edges一一对应
    node_ids: Tuple[str, ...]                   # 规范下标 -> 原始ID
    node_labels: Tuple[str, ...] = ()           # 可选的显示标签
    id_to_index: Dict[str, int] = field(default_factory=dict)

    @property
    def relation_types(self) -> Tuple[str, ...]:
        return tuple(sorted(set(self.edge_types)))

    @property
    def schema_pairs(self) -> FrozenSet[FrozenSet[str]]:
        """出现过边的类型对（无向）"""
        pairs = set()
        for u, v in self.edges:
            pairs.add(frozenset((self.node_types[u], self.node_types[v])))
        return frozenset(pairs)

    @property
    def adjacency(self) -> sp.csr_matrix:
        """0/1 对称邻接矩阵 A（不含自环）"""
        n = self.node_count
        if len(self.edges) == 0:
            return sp.csr_matrix((n, n), dtype=np.float64)
        rows = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        cols = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        data = np.ones(len(rows), dtype=np.float64)
        return _compact(sp.coo_matrix((data, (rows, cols)), shape=(n, n)))

    def type_of(self, index: int) -> str:
        return str(self.node_types[index])

    def nodes_of(self, node_type: str) -> np.ndarray:
        """某类型节点的规范下标"""
        if node_type not in self.type_index:
            raise SchemaError(f"图中不存在节点类型: {node_type}")
        start, stop = self.type_index[node_type]
        return np.arange(start, stop)

    def index_of(self, node_id: str) -> int:
        return self.id_to_index[node_id]


@dataclass(frozen=True)
class AugmentedAdjacency:
    """带自环的邻接矩阵 Ã = A + I 及其度向量"""
    matrix: sp.csr_matrix
    degrees: np.ndarray
    total_degree: float


@dataclass(frozen=True)
class MetaPath:
    """元路径：节点类型序列，如 M-D-M"""
    type_sequence: Tuple[str, ...]
    label: str

    @property
    def is_symmetric(self) -> bool:
        return self.type_sequence == tuple(reversed(self.type_sequence))

    @property
    def source_type(self) -> str:
        return self.type_sequence[0]

    @property
    def target_type(self) -> str:
        return self.type_sequence[-1]

    @classmethod
    def parse(cls, text: str, graph: HinGraph) -> "MetaPath":
        """解析 "M-D-M" 形式的元路径并按图模式校验"""
        types = tuple(t.strip() for t in text.strip().split("-") if t.strip())
        return make_metapath(graph, types)


def make_metapath(graph: HinGraph, types: Sequence[str]) -> MetaPath:
    """
    构造并校验元路径

    参数:
        graph: 异构图
        types: 类型序列，至少两个
    返回:
        MetaPath
    """
    types = tuple(types)
    if len(types) < 2:
        raise SchemaError(f"元路径至少需要两个节点类型: {types}")
    for t in types:
        if t not in graph.type_index:
            raise SchemaError(f"元路径中的类型 {t} 不在图中")
    pairs = graph.schema_pairs
    for a, b in zip(types[:-1], types[1:]):
        if frozenset((a, b)) not in pairs:
            raise SchemaError(f"类型 {a} 与 {b} 之间没有任何边，元路径无效: {'-'.join(types)}")
    return MetaPath(type_sequence=types, label="-".join(types))


def _parse_records(records: Iterable[Sequence], min_fields: int, what: str) -> List[Tuple[str, ...]]:
    parsed = []
    for lineno, record in enumerate(records, start=1):
        fields = tuple(str(x).strip() for x in record)
        if len(fields) < min_fields:
            raise IngestError(f"{what}第{lineno}条记录字段不足: {record!r}")
        parsed.append(fields)
    return parsed


def build_graph(node_table: Iterable[Sequence], edge_table: Iterable[Sequence]) -> HinGraph:
    """
    由节点表和边表构造异构图

    参数:
        node_table: (id, type[, label]) 记录
        edge_table: (src_id, dst_id[, edge_type]) 记录，有向边在此对称化
    返回:
        HinGraph（按类型规范排序，重复边合并为一条）
    """
    nodes = _parse_records(node_table, 2, "节点表")
    seen = set()
    for rec in nodes:
        if rec[0] in seen:
            raise IngestError(f"重复的节点ID: {rec[0]}")
        seen.add(rec[0])

    # 规范排序：先按类型标签，再按输入顺序（sorted是稳定的）
    order = sorted(range(len(nodes)), key=lambda i: nodes[i][1])
    node_ids = tuple(nodes[i][0] for i in order)
    node_types = np.array([nodes[i][1] for i in order], dtype=object)
    node_labels = tuple(nodes[i][2] if len(nodes[i]) > 2 else "" for i in order)
    id_to_index = {nid: idx for idx, nid in enumerate(node_ids)}

    type_order = tuple(sorted(set(node_types.tolist())))
    type_index = {}
    for t in type_order:
        where = np.flatnonzero(node_types == t)
        type_index[t] = (int(where[0]), int(where[-1]) + 1)

    edge_map: Dict[Tuple[int, int], str] = {}
    self_loops = 0
    for rec in _parse_records(edge_table, 2, "边表"):
        src, dst = rec[0], rec[1]
        if src not in id_to_index or dst not in id_to_index:
            raise IngestError(f"边 ({src}, {dst}) 引用了未声明的节点")
        u, v = id_to_index[src], id_to_index[dst]
        if u == v:
            self_loops += 1
            continue
        key = (min(u, v), max(u, v))
        if len(rec) > 2 and rec[2]:
            etype = rec[2]
        else:
            pair = sorted((node_types[u], node_types[v]), key=type_order.index)
            etype = "-".join(pair)
        edge_map.setdefault(key, etype)

    if self_loops:
        log_warn(f"忽略了 {self_loops} 条输入自环（增广时统一加入）")

    keys = sorted(edge_map)
    edges = np.array(keys, dtype=np.int64).reshape(-1, 2)
    edge_types = tuple(edge_map[k] for k in keys)

    graph = HinGraph(
        node_count=len(node_ids),
        node_types=node_types,
        type_order=type_order,
        type_index=type_index,
        edges=edges,
        edge_types=edge_types,
        node_ids=node_ids,
        node_labels=node_labels,
        id_to_index=id_to_index,
    )
    log_info(f"📊 图构建完成: n={graph.node_count}, 边={len(edges)}, "
             f"|F|={len(type_order)}, |R|={len(graph.relation_types)}")
    return graph


def augment(graph: HinGraph) -> AugmentedAdjacency:
    """
    自环增广 Ã = A + I

    参数:
        graph: 异构图
    返回:
        AugmentedAdjacency（度由Ã重新计算，每个度至少为1）
    """
    return augment_matrix(graph.adjacency)


def augment_matrix(adjacency: sp.spmatrix) -> AugmentedAdjacency:
    """对任意0/1对称邻接（无自环）加自环，候选元路径派生图也走这里"""
    n = adjacency.shape[0]
    matrix = _compact(adjacency + sp.identity(n, format="csr", dtype=np.float64))
    matrix.data[:] = np.minimum(matrix.data, 1.0)
    degrees = np.asarray(matrix.sum(axis=1)).ravel()
    return AugmentedAdjacency(matrix=matrix, degrees=degrees, total_degree=float(degrees.sum()))


def type_block(graph: HinGraph, matrix: sp.csr_matrix, row_type: str, col_type: str) -> sp.csr_matrix:
    """取出 row_type × col_type 的子块"""
    r0, r1 = graph.type_index[row_type]
    c0, c1 = graph.type_index[col_type]
    return matrix[r0:r1, c0:c1].tocsr()


def meta_path_adjacency(graph: HinGraph, path: MetaPath) -> sp.csr_matrix:
    """
    基于元路径的邻接矩阵（布尔值，不保留实例个数）

    参数:
        graph: 异构图
        path: 已校验的元路径
    返回:
        |F_1| × |F_{l+1}| 的0/1矩阵，下标为各类型内的局部下标
    """
    for t in path.type_sequence:
        if t not in graph.type_index:
            raise SchemaError(f"元路径 {path.label} 的类型 {t} 不在图中")
    adj = graph.adjacency
    result = type_block(graph, adj, path.type_sequence[0], path.type_sequence[1])
    for a, b in zip(path.type_sequence[1:-1], path.type_sequence[2:]):
        result = sparse_product(result, type_block(graph, adj, a, b))
        # 每一跳后布尔化，避免实例计数膨胀
        result.data[:] = 1.0
    result = _compact(result)
    result.data[:] = 1.0
    return result


def sparse_product(a: sp.csr_matrix, b: sp.csr_matrix) -> sp.csr_matrix:
    """
    稀疏矩阵乘法（按行累加，结果压缩）

    参数:
        a, b: CSR矩阵，a.n_cols 必须等于 b.n_rows
    返回:
        a · b
    """
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"稀疏乘法维度不匹配: {a.shape} × {b.shape}")
    return _compact(sp.csr_matrix(a) @ sp.csr_matrix(b))

